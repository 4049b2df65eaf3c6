//! Static PNG plots. No text is drawn, so no font is needed; series colors
//! follow [`PALETTE`] in the order the series are given.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, IoContext, Result};

pub const WIDTH: u32 = 640;
pub const HEIGHT: u32 = 400;

/// Blue, orange, green, red, purple, brown.
pub const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).at(dir),
        _ => Ok(()),
    }
}

fn draw_err<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> Error + '_ {
    move |e| Error::Invalid(format!("{}: cannot draw plot: {e}", path.display()))
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// One polyline per series, with a marker at every point.
pub fn lines(path: &Path, series: &[Vec<(f64, f64)>]) -> Result<()> {
    ensure_parent(path)?;
    let err = draw_err(path);
    let (x0, x1) = bounds(series.iter().flatten().map(|p| p.0));
    let (y0, y1) = bounds(series.iter().flatten().map(|p| p.1));
    let root = BitMapBackend::new(path, (WIDTH, HEIGHT)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root).margin(16).build_cartesian_2d(x0..x1, y0..y1).map_err(&err)?;
    chart
        .plotting_area()
        .draw(&Rectangle::new([(x0, y0), (x1, y1)], BLACK.stroke_width(1)))
        .map_err(&err)?;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart.draw_series(LineSeries::new(s.iter().copied(), color.stroke_width(2))).map_err(&err)?;
        chart.draw_series(s.iter().map(|&p| Circle::new(p, 3, color.filled()))).map_err(&err)?;
    }
    root.present().map_err(&err)?;
    Ok(())
}

/// Vertical bars from zero, one per value, colored by position.
pub fn bars(path: &Path, values: &[f64]) -> Result<()> {
    ensure_parent(path)?;
    let err = draw_err(path);
    let (_, top) = bounds(values.iter().copied().chain([0.0]));
    let n = values.len().max(1) as f64;
    let root = BitMapBackend::new(path, (WIDTH, HEIGHT)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root).margin(16).build_cartesian_2d(0.0..n, 0.0..top.max(1e-9)).map_err(&err)?;
    chart
        .draw_series(values.iter().enumerate().map(|(i, &v)| {
            let x = i as f64;
            Rectangle::new([(x + 0.15, 0.0), (x + 0.85, v.max(0.0))], PALETTE[i % PALETTE.len()].filled())
        }))
        .map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(())
}

/// Row-major `grid x grid` values as a white-to-red heat map, scaled to the
/// largest value.
pub fn heatmap(path: &Path, grid: usize, values: &[f64]) -> Result<()> {
    ensure_parent(path)?;
    let err = draw_err(path);
    let max = values.iter().copied().fold(0.0, f64::max);
    let side = HEIGHT;
    let root = BitMapBackend::new(path, (side, side)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let cells = root.split_evenly((grid, grid));
    for (cell, &v) in cells.iter().zip(values) {
        let t = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
        let fade = (255.0 * (1.0 - t)).round() as u8;
        cell.fill(&RGBColor(255, fade, fade)).map_err(&err)?;
    }
    root.present().map_err(&err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_png_files() {
        let dir = tempfile::tempdir().unwrap();
        let l = dir.path().join("l.png");
        lines(&l, &[vec![(50.0, 1.0), (10.0, 3.0)], vec![(50.0, 2.0), (10.0, 2.0)]]).unwrap();
        let b = dir.path().join("b.png");
        bars(&b, &[1.0, 0.0, 2.5]).unwrap();
        let h = dir.path().join("h.png");
        heatmap(&h, 2, &[0.0, 1.0, 0.5, 0.25]).unwrap();
        for p in [&l, &b, &h] {
            let bytes = std::fs::read(p).unwrap();
            assert_eq!(&bytes[1..4], b"PNG");
        }
        let again = dir.path().join("l2.png");
        lines(&again, &[vec![(50.0, 1.0), (10.0, 3.0)], vec![(50.0, 2.0), (10.0, 2.0)]]).unwrap();
        assert_eq!(std::fs::read(&l).unwrap(), std::fs::read(&again).unwrap());
    }
}
