//! Checkpoint files: a text header followed by raw little-endian `f64`
//! arrays for the parameters and both optimizer moments.
//!
//! ```text
//! actress checkpoint v1
//! kind = actress
//! model = 32 2 2 64 32 8 11 29 12 32
//! params = 27396
//! opt_steps = 480 480 480
//! report = <one line per finished phase>
//! end
//! <params><m><v>
//! ```

use std::path::Path;

use actress_core::model::{ModelConfig, ModelParams, OptimizerState};
use actress_core::trainer::{Progress, TrainState};

use crate::error::{Error, IoContext, Result};
use crate::reports;

const MAGIC: &str = "actress checkpoint v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunKind {
    Actress,
    Baseline,
}

impl RunKind {
    pub fn name(self) -> &'static str {
        match self {
            RunKind::Actress => "actress",
            RunKind::Baseline => "baseline",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "actress" => Some(RunKind::Actress),
            "baseline" => Some(RunKind::Baseline),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: RunKind,
    pub progress: Progress,
}

fn model_line(c: &ModelConfig) -> String {
    format!(
        "{} {} {} {} {} {} {} {} {} {}",
        c.d_model, c.heads, c.layers, c.mlp_hidden, c.head_hidden, c.grid, c.feature_dim, c.vocab, c.max_text, c.bins
    )
}

fn parse_model(s: &str) -> Result<ModelConfig> {
    let v: Vec<usize> = s
        .split_whitespace()
        .map(|x| x.parse::<usize>().map_err(|e| Error::parse("checkpoint", 0, format!("model: {e}"))))
        .collect::<Result<_>>()?;
    let [d_model, heads, layers, mlp_hidden, head_hidden, grid, feature_dim, vocab, max_text, bins] = v[..] else {
        return Err(Error::parse("checkpoint", 0, "model needs ten sizes"));
    };
    Ok(ModelConfig { d_model, heads, layers, mlp_hidden, head_hidden, grid, feature_dim, vocab, max_text, bins: bins as u32 })
}

pub fn to_bytes(ck: &Checkpoint) -> Vec<u8> {
    let st = &ck.progress.state;
    let mut head = format!(
        "{MAGIC}\nkind = {}\nmodel = {}\nparams = {}\nopt_steps = {} {} {}\n",
        ck.kind.name(),
        model_line(&st.params.config),
        st.params.data.len(),
        st.opt.steps[0],
        st.opt.steps[1],
        st.opt.steps[2]
    );
    for r in &ck.progress.reports {
        head.push_str("report = ");
        head.push_str(&reports::report_line(r));
        head.push('\n');
    }
    head.push_str("end\n");
    let mut out = head.into_bytes();
    for arr in [&st.params.data, &st.opt.m, &st.opt.v] {
        for x in arr.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::parse("checkpoint", 0, m);
    let end = bytes.windows(5).position(|w| w == b"\nend\n").ok_or_else(|| bad("missing `end` line"))?;
    let head = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
    let body = &bytes[end + 5..];
    let mut lines = head.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("not an actress checkpoint"));
    }
    let (mut kind, mut model, mut n, mut steps, mut reps) = (None, None, None, None, Vec::new());
    for line in lines {
        let (k, v) = line.split_once(" = ").ok_or_else(|| bad("malformed header line"))?;
        match k {
            "kind" => kind = Some(RunKind::from_name(v).ok_or_else(|| bad("unknown run kind"))?),
            "model" => model = Some(parse_model(v)?),
            "params" => n = Some(v.parse::<usize>().map_err(|_| bad("bad parameter count"))?),
            "opt_steps" => {
                let s: Vec<u64> = v.split_whitespace().map(|x| x.parse().map_err(|_| bad("bad step count"))).collect::<Result<_>>()?;
                let [a, b, c] = s[..] else { return Err(bad("opt_steps needs three counts")) };
                steps = Some([a, b, c]);
            }
            "report" => reps.push(reports::parse_report_line(v)?),
            _ => return Err(bad("unknown header key")),
        }
    }
    let (Some(kind), Some(model), Some(n), Some(steps)) = (kind, model, n, steps) else {
        return Err(bad("incomplete header"));
    };
    if body.len() != 3 * n * 8 {
        return Err(bad("payload size does not match the parameter count"));
    }
    let floats: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    let params = ModelParams::from_parts(model, floats[..n].to_vec())?;
    let opt = OptimizerState { m: floats[n..2 * n].to_vec(), v: floats[2 * n..].to_vec(), steps };
    Ok(Checkpoint { kind, progress: Progress { state: TrainState { params, opt }, reports: reps } })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    std::fs::write(path, to_bytes(ck)).at(path)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_bytes(&std::fs::read(path).at(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use actress_core::evalreport::Accuracy;
    use actress_core::trainer::{StageReport, TrainConfig};

    #[test]
    fn bit_exact_round_trip() {
        let mut st = TrainState::init(&TrainConfig::default()).unwrap();
        st.opt.m.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64).sin() * 1e-7);
        st.opt.v[3] = f64::MIN_POSITIVE;
        st.opt.steps = [5, 9, 2];
        let report = StageReport {
            stage: 0,
            pool_size: 0,
            selected: 0,
            mean_fused: 0.0,
            steps: 10,
            epoch_losses: vec![3.5, 2.25],
            accuracy: Some(Accuracy { regression: 12.5, quantized: 8.0 }),
        };
        let ck = Checkpoint { kind: RunKind::Baseline, progress: Progress { state: st, reports: vec![report] } };
        let back = from_bytes(&to_bytes(&ck)).unwrap();
        assert_eq!(back, ck);
        assert!(back.progress.state.params.data.iter().zip(&ck.progress.state.params.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejects_truncation() {
        let st = TrainState::init(&TrainConfig::default()).unwrap();
        let ck = Checkpoint { kind: RunKind::Actress, progress: Progress { state: st, reports: vec![] } };
        let bytes = to_bytes(&ck);
        assert!(from_bytes(&bytes[..bytes.len() - 8]).is_err());
        assert!(from_bytes(b"hello\nend\n").is_err());
    }
}
