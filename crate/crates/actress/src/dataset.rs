//! Line-oriented dataset files.
//!
//! ```text
//! # actress dataset v1
//! id=0 grid=8 objects=circle/red/1.2.2.3;star/blue/5.0.5.0 tokens=1,6,2 target=0 gold=0.25,0.3125,0.25,0.25
//! id=1 grid=8 objects=square/green/0.0.0.0 tokens=1,3 target=- gold=-
//! ```
//!
//! `objects` lists `shape/color/col0.row0.col1.row1` with inclusive cell
//! bounds. Unlabeled records carry `-` for target and gold. Floats are
//! written in shortest round-trip form, so files re-parse bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use actress_core::geometry::Box;
use actress_core::synthdata::{CellRect, Color, Query, Sample, Scene, SceneObject, Shape};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

pub const HEADER: &str = "# actress dataset v1";

pub fn to_text(samples: &[Sample]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for s in samples {
        write_record(&mut out, s);
        out.push('\n');
    }
    out
}

fn write_record(out: &mut String, s: &Sample) {
    let objects: Vec<String> = s
        .scene
        .objects
        .iter()
        .map(|o| {
            let c = o.cells;
            format!("{}/{}/{}.{}.{}.{}", o.shape.name(), o.color.name(), c.col0, c.row0, c.col1, c.row1)
        })
        .collect();
    let tokens: Vec<String> = s.query.tokens.iter().map(u16::to_string).collect();
    let target = s.query.target_index.map_or_else(|| "-".to_string(), |t| t.to_string());
    let gold = s.gold.map_or_else(|| "-".to_string(), |g| format!("{},{},{},{}", g.cx, g.cy, g.w, g.h));
    let _ = write!(
        out,
        "id={} grid={} objects={} tokens={} target={target} gold={gold}",
        s.id,
        s.scene.grid,
        objects.join(";"),
        tokens.join(",")
    );
}

pub fn parse(text: &str) -> Result<Vec<Sample>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        _ => return Err(Error::parse("dataset", 1, format!("expected header `{HEADER}`"))),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| parse_record(l).map_err(|m| Error::parse("dataset", i + 1, m)))
        .collect()
}

fn parse_record(line: &str) -> std::result::Result<Sample, String> {
    let mut fields = std::collections::BTreeMap::new();
    for part in line.split_whitespace() {
        let (k, v) = part.split_once('=').ok_or_else(|| format!("malformed field `{part}`"))?;
        fields.insert(k, v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| format!("missing field `{k}`"));
    let num = |k: &str, v: &str| v.parse::<u64>().map_err(|e| format!("{k}: {e}"));
    let id = num("id", get("id")?)?;
    let grid = num("grid", get("grid")?)? as usize;
    let mut objects = Vec::new();
    for o in get("objects")?.split(';').filter(|o| !o.is_empty()) {
        let parts: Vec<&str> = o.split('/').collect();
        let [shape, color, cells] = parts[..] else { return Err(format!("malformed object `{o}`")) };
        let shape = Shape::from_name(shape).ok_or_else(|| format!("unknown shape `{shape}`"))?;
        let color = Color::from_name(color).ok_or_else(|| format!("unknown color `{color}`"))?;
        let c: Vec<u8> = cells.split('.').map(|v| v.parse::<u8>().map_err(|e| format!("cells: {e}"))).collect::<std::result::Result<_, _>>()?;
        let [col0, row0, col1, row1] = c[..] else { return Err(format!("object `{o}` needs four cell bounds")) };
        if col0 > col1 || row0 > row1 || col1 as usize >= grid || row1 as usize >= grid {
            return Err(format!("object `{o}` lies outside the {grid}x{grid} grid"));
        }
        objects.push(SceneObject { shape, color, cells: CellRect { col0, row0, col1, row1 } });
    }
    let tokens: Vec<u16> = get("tokens")?
        .split(',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<u16>().map_err(|e| format!("tokens: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let target_index = match get("target")? {
        "-" => None,
        t => Some(num("target", t)? as usize),
    };
    if let Some(t) = target_index {
        if t >= objects.len() {
            return Err(format!("target {t} out of range for {} objects", objects.len()));
        }
    }
    let gold = match get("gold")? {
        "-" => None,
        g => {
            let v: Vec<f64> =
                g.split(',').map(|x| x.parse::<f64>().map_err(|e| format!("gold: {e}"))).collect::<std::result::Result<_, _>>()?;
            let [cx, cy, w, h] = v[..] else { return Err("gold needs four values".into()) };
            Some(Box::new(cx, cy, w, h).validate().map_err(|e| e.to_string())?)
        }
    };
    Ok(Sample { id, scene: Scene::new(grid, objects), query: Query { tokens, target_index }, gold })
}

pub fn save(path: &Path, samples: &[Sample]) -> Result<String> {
    let text = to_text(samples);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    std::fs::write(path, &text).at(path)?;
    Ok(sha256_hex(text.as_bytes()))
}

/// Samples and the SHA-256 of the file.
pub fn load(path: &Path) -> Result<(Vec<Sample>, String)> {
    let text = std::fs::read_to_string(path).at(path)?;
    Ok((parse(&text)?, sha256_hex(text.as_bytes())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
