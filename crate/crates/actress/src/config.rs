//! Plain-text run configuration.
//!
//! One `key = value` pair per line; `#` starts a comment. Every key is
//! optional and falls back to the default shown by `actress run
//! --print-config`. Unknown keys are rejected.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `seed` | 0 | root seed of every random stream |
//! | `data.path` | | dataset file; generated from `seed` when absent |
//! | `data.test_path` | | test file; generated from `seed` when absent |
//! | `data.n` | 5000 | generated pool size |
//! | `data.test_n` | 1000 | generated test size |
//! | `data.grid` | 8 | grid side |
//! | `data.label_fraction` | 0.1 | labeled share of the pool |
//! | `model.d_model`, `model.heads`, `model.layers`, `model.mlp_hidden`, `model.head_hidden`, `model.bins` | 32, 2, 2, 64, 32, 32 | network size |
//! | `train.burn_in_epochs`, `train.stage_epochs`, `train.stages` | 60, 25, 5 | phase lengths |
//! | `train.batch_size` | 16 | |
//! | `train.labeled_ratio` | 3:1 | labeled : pseudo per batch |
//! | `train.lr`, `train.lr_drop_at`, `train.lr_drop_factor` | 0.001, 0.8, 0.1 | step schedule per phase |
//! | `optim.beta1`, `optim.beta2`, `optim.eps`, `optim.weight_decay` | 0.9, 0.999, 1e-8, 0.0001 | AdamW |
//! | `loss.l1`, `loss.giou`, `loss.ce` | 5, 2, 0.1 | loss weights |
//! | `train.pseudo_weight` | 1 | loss weight of pseudo labels |
//! | `train.n_percent` | auto | share of the pool promoted per stage; `auto` is `100 * label_fraction` |
//! | `train.metrics` | FRC | metrics in the fused score (`-` for random) |
//! | `train.augment`, `train.augment_burn_in` | true, true | geometric augmentation |
//! | `train.reinit` | initial | stage re-init: `initial`, `fresh`, `heads` or `off` |
//! | `scoring.confidence_combine` | product | `product` or `sum` |
//! | `scoring.normalize_relevance` | false | row-normalize relevance between layers |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use actress_core::curation::{ConfidenceCombine, MetricSet};
use actress_core::rng;
use actress_core::synthdata::GenSpec;
use actress_core::trainer::{Reinit, TrainConfig};

use crate::error::{Error, IoContext, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub n: usize,
    pub test_n: usize,
    pub grid: usize,
    pub label_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { path: None, test_path: None, n: 5000, test_n: 1000, grid: 8, label_fraction: 0.1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    /// `None` follows the label fraction.
    pub n_percent: Option<f64>,
    pub train: TrainConfig,
}


impl RunConfig {
    /// The trainer configuration with seed, grid and sampling share resolved.
    pub fn resolved_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.seed;
        t.model.grid = self.data.grid;
        t.n_percent = self.n_percent.unwrap_or(100.0 * self.data.label_fraction);
        t
    }

    pub fn pool_spec(&self) -> GenSpec {
        GenSpec { n: self.data.n, grid: self.data.grid, seed: rng::substream(self.seed, "data") }
    }

    pub fn test_spec(&self) -> GenSpec {
        GenSpec { n: self.data.test_n, grid: self.data.grid, seed: rng::substream(self.seed, "test") }
    }

    pub fn split_seed(&self) -> u64 {
        rng::substream(self.seed, "split")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.data.label_fraction > 0.0 && self.data.label_fraction <= 1.0) {
            return Err(Error::Invalid(format!("data.label_fraction must be in (0, 1], got {}", self.data.label_fraction)));
        }
        self.resolved_train().validate()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let t = &self.train;
        let m = &t.model;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        if let Some(p) = &self.data.path {
            kv("data.path", p.display().to_string());
        }
        if let Some(p) = &self.data.test_path {
            kv("data.test_path", p.display().to_string());
        }
        kv("data.n", self.data.n.to_string());
        kv("data.test_n", self.data.test_n.to_string());
        kv("data.grid", self.data.grid.to_string());
        kv("data.label_fraction", self.data.label_fraction.to_string());
        kv("model.d_model", m.d_model.to_string());
        kv("model.heads", m.heads.to_string());
        kv("model.layers", m.layers.to_string());
        kv("model.mlp_hidden", m.mlp_hidden.to_string());
        kv("model.head_hidden", m.head_hidden.to_string());
        kv("model.bins", m.bins.to_string());
        kv("train.burn_in_epochs", t.burn_in_epochs.to_string());
        kv("train.stage_epochs", t.stage_epochs.to_string());
        kv("train.stages", t.stages.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.labeled_ratio", format!("{}:{}", t.labeled_ratio.0, t.labeled_ratio.1));
        kv("train.lr", t.lr.to_string());
        kv("train.lr_drop_at", t.lr_drop_at.to_string());
        kv("train.lr_drop_factor", t.lr_drop_factor.to_string());
        kv("optim.beta1", t.optimizer.beta1.to_string());
        kv("optim.beta2", t.optimizer.beta2.to_string());
        kv("optim.eps", t.optimizer.eps.to_string());
        kv("optim.weight_decay", t.optimizer.weight_decay.to_string());
        kv("loss.l1", t.loss.l1.to_string());
        kv("loss.giou", t.loss.giou.to_string());
        kv("loss.ce", t.loss.ce.to_string());
        kv("train.pseudo_weight", t.pseudo_weight.to_string());
        kv("train.n_percent", self.n_percent.map_or_else(|| "auto".into(), |v| v.to_string()));
        kv("train.metrics", t.metrics.label());
        kv("train.augment", t.augment.to_string());
        kv("train.augment_burn_in", t.augment_burn_in.to_string());
        kv("train.reinit", t.reinit.name().into());
        kv("scoring.confidence_combine", t.scoring.combine.name().into());
        kv("scoring.normalize_relevance", t.scoring.normalize_relevance.to_string());
        s
    }

    /// Parses `text` on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::parse("config", i + 1, "expected `key = value`"))?;
            let (k, v) = (k.trim(), v.trim());
            if seen.insert(k.to_string(), i + 1).is_some() {
                return Err(Error::parse("config", i + 1, format!("duplicate key `{k}`")));
            }
            cfg.set(k, v).map_err(|m| Error::parse("config", i + 1, m))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).at(path)?)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        fn p<T: std::str::FromStr>(k: &str, v: &str) -> std::result::Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| format!("{k}: {e}"))
        }
        let t = &mut self.train;
        match key {
            "seed" => self.seed = p(key, v)?,
            "data.path" => self.data.path = Some(PathBuf::from(v)),
            "data.test_path" => self.data.test_path = Some(PathBuf::from(v)),
            "data.n" => self.data.n = p(key, v)?,
            "data.test_n" => self.data.test_n = p(key, v)?,
            "data.grid" => self.data.grid = p(key, v)?,
            "data.label_fraction" => self.data.label_fraction = p(key, v)?,
            "model.d_model" => t.model.d_model = p(key, v)?,
            "model.heads" => t.model.heads = p(key, v)?,
            "model.layers" => t.model.layers = p(key, v)?,
            "model.mlp_hidden" => t.model.mlp_hidden = p(key, v)?,
            "model.head_hidden" => t.model.head_hidden = p(key, v)?,
            "model.bins" => t.model.bins = p(key, v)?,
            "train.burn_in_epochs" => t.burn_in_epochs = p(key, v)?,
            "train.stage_epochs" => t.stage_epochs = p(key, v)?,
            "train.stages" => t.stages = p(key, v)?,
            "train.batch_size" => t.batch_size = p(key, v)?,
            "train.labeled_ratio" => {
                let (a, b) = v.split_once(':').ok_or_else(|| format!("{key}: expected `l:p`"))?;
                t.labeled_ratio = (p(key, a.trim())?, p(key, b.trim())?);
            }
            "train.lr" => t.lr = p(key, v)?,
            "train.lr_drop_at" => t.lr_drop_at = p(key, v)?,
            "train.lr_drop_factor" => t.lr_drop_factor = p(key, v)?,
            "optim.beta1" => t.optimizer.beta1 = p(key, v)?,
            "optim.beta2" => t.optimizer.beta2 = p(key, v)?,
            "optim.eps" => t.optimizer.eps = p(key, v)?,
            "optim.weight_decay" => t.optimizer.weight_decay = p(key, v)?,
            "loss.l1" => t.loss.l1 = p(key, v)?,
            "loss.giou" => t.loss.giou = p(key, v)?,
            "loss.ce" => t.loss.ce = p(key, v)?,
            "train.pseudo_weight" => t.pseudo_weight = p(key, v)?,
            "train.n_percent" => self.n_percent = if v == "auto" { None } else { Some(p(key, v)?) },
            "train.metrics" => t.metrics = MetricSet::parse(v).ok_or_else(|| format!("{key}: expected letters from FRC"))?,
            "train.augment" => t.augment = p(key, v)?,
            "train.augment_burn_in" => t.augment_burn_in = p(key, v)?,
            "train.reinit" => {
                t.reinit = Reinit::from_name(v).ok_or_else(|| format!("{key}: expected initial, fresh, heads or off"))?
            }
            "scoring.confidence_combine" => {
                t.scoring.combine =
                    ConfidenceCombine::from_name(v).ok_or_else(|| format!("{key}: expected `product` or `sum`"))?
            }
            "scoring.normalize_relevance" => t.scoring.normalize_relevance = p(key, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(RunConfig::parse("").unwrap(), cfg);
    }

    #[test]
    fn overrides_and_errors() {
        let cfg = RunConfig::parse("seed = 7 # root\ntrain.labeled_ratio = 4:1\ntrain.metrics = RC\ntrain.n_percent = 20\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.labeled_ratio, (4, 1));
        assert_eq!(cfg.train.metrics, MetricSet { faith: false, robust: true, conf: true });
        assert_eq!(cfg.resolved_train().n_percent, 20.0);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(RunConfig::parse("nope = 1").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("train.lr").is_err());
    }

    #[test]
    fn n_percent_follows_label_fraction() {
        let cfg = RunConfig::parse("data.label_fraction = 0.05").unwrap();
        assert!((cfg.resolved_train().n_percent - 5.0).abs() < 1e-12);
    }
}
