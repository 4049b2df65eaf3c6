use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::synthdata::{language::VOCAB_SIZE, FEATURE_DIM, MAX_QUERY_TOKENS};

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    /// Hidden width of the per-token MLP inside each encoder layer.
    pub mlp_hidden: usize,
    /// Hidden width of both two-layer prediction heads.
    pub head_hidden: usize,
    pub grid: usize,
    pub feature_dim: usize,
    pub vocab: usize,
    pub max_text: usize,
    pub bins: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            heads: 2,
            layers: 2,
            mlp_hidden: 64,
            head_hidden: 32,
            grid: 8,
            feature_dim: FEATURE_DIM,
            vocab: VOCAB_SIZE,
            max_text: MAX_QUERY_TOKENS,
            bins: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(String::from(m)));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.layers == 0 || self.mlp_hidden == 0 || self.head_hidden == 0 {
            return bad("layers, mlp_hidden and head_hidden must be positive");
        }
        if self.grid == 0 || self.feature_dim == 0 || self.vocab == 0 || self.max_text == 0 {
            return bad("grid, feature_dim, vocab and max_text must be positive");
        }
        if self.bins < 2 {
            return bad("bins must be at least 2");
        }
        Ok(())
    }

    pub fn visual_tokens(&self) -> usize {
        self.grid * self.grid
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Which group a tensor belongs to for selective re-initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Partition {
    /// Input embeddings: visual projection, token table, positional tables.
    Backbone,
    /// Encoder layers, the object query and the final norm.
    Fusion,
    /// Regression and quantized prediction heads.
    Heads,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Backbone, Partition::Fusion, Partition::Heads];

    pub fn name(self) -> &'static str {
        match self {
            Partition::Backbone => "backbone",
            Partition::Fusion => "fusion",
            Partition::Heads => "heads",
        }
    }

    pub fn from_name(s: &str) -> Option<Partition> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// `U(-bound, bound)`
    Uniform(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub partition: Partition,
    pub init: Init,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct Offsets {
    pub visual_w: usize,
    pub visual_b: usize,
    pub visual_pos: usize,
    pub text_emb: usize,
    pub text_pos: usize,
    pub query: usize,
    pub layers: Vec<LayerOffsets>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub reg_w1: usize,
    pub reg_b1: usize,
    pub reg_w2: usize,
    pub reg_b2: usize,
    pub quant_w1: usize,
    pub quant_b1: usize,
    pub quant_w2: usize,
    pub quant_b2: usize,
}

/// Named tensors laid out back to back in one flat buffer.
#[derive(Clone, Debug)]
pub struct ParamLayout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
    pub(crate) offsets: Offsets,
}

struct Builder {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, partition: Partition, init: Init) -> usize {
        let offset = self.total;
        self.tensors.push(TensorSpec { name, rows, cols, offset, partition, init });
        self.total += rows * cols;
        offset
    }

    /// Weight `[fan_in x fan_out]` with `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` and a zero bias.
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, partition: Partition) -> (usize, usize) {
        let bound = 1.0 / libm::sqrt(fan_in as f64);
        let w = self.add(format!("{name}.w"), fan_in, fan_out, partition, Init::Uniform(bound));
        let b = self.add(format!("{name}.b"), 1, fan_out, partition, Init::Zeros);
        (w, b)
    }

    fn norm(&mut self, name: &str, d: usize, partition: Partition) -> (usize, usize) {
        let g = self.add(format!("{name}.g"), 1, d, partition, Init::Ones);
        let b = self.add(format!("{name}.b"), 1, d, partition, Init::Zeros);
        (g, b)
    }
}

/// Token embedding tables and the object query start at `U(-0.5, 0.5)`.
const EMBED_BOUND: f64 = 0.5;
/// Positional tables start near zero so that content dominates early on.
const POS_BOUND: f64 = 0.02;

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let mut b = Builder { tensors: Vec::new(), total: 0 };
        let mut o = Offsets::default();
        use Partition::*;
        (o.visual_w, o.visual_b) = b.linear("visual_embed", cfg.feature_dim, d, Backbone);
        o.visual_pos = b.add("visual_pos".into(), cfg.visual_tokens(), d, Backbone, Init::Uniform(POS_BOUND));
        o.text_emb = b.add("text_embed".into(), cfg.vocab, d, Backbone, Init::Uniform(EMBED_BOUND));
        o.text_pos = b.add("text_pos".into(), cfg.max_text, d, Backbone, Init::Uniform(POS_BOUND));
        o.query = b.add("query_embed".into(), 1, d, Fusion, Init::Uniform(EMBED_BOUND));
        for l in 0..cfg.layers {
            let mut lo = LayerOffsets::default();
            let p = |s: &str| format!("layer{l}.{s}");
            (lo.ln1_g, lo.ln1_b) = b.norm(&p("ln1"), d, Fusion);
            (lo.wq, lo.bq) = b.linear(&p("attn_q"), d, d, Fusion);
            (lo.wk, lo.bk) = b.linear(&p("attn_k"), d, d, Fusion);
            (lo.wv, lo.bv) = b.linear(&p("attn_v"), d, d, Fusion);
            (lo.wo, lo.bo) = b.linear(&p("attn_o"), d, d, Fusion);
            (lo.ln2_g, lo.ln2_b) = b.norm(&p("ln2"), d, Fusion);
            (lo.w1, lo.b1) = b.linear(&p("mlp1"), d, cfg.mlp_hidden, Fusion);
            (lo.w2, lo.b2) = b.linear(&p("mlp2"), cfg.mlp_hidden, d, Fusion);
            o.layers.push(lo);
        }
        (o.lnf_g, o.lnf_b) = b.norm("final_ln", d, Fusion);
        (o.reg_w1, o.reg_b1) = b.linear("reg_head1", d, cfg.head_hidden, Heads);
        (o.reg_w2, o.reg_b2) = b.linear("reg_head2", cfg.head_hidden, 4, Heads);
        (o.quant_w1, o.quant_b1) = b.linear("quant_head1", d, cfg.head_hidden, Heads);
        (o.quant_w2, o.quant_b2) = b.linear("quant_head2", cfg.head_hidden, 4 * cfg.bins as usize, Heads);
        ParamLayout { tensors: b.tensors, total: b.total, offsets: o }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn partition_mask(&self, partition: Partition) -> Vec<bool> {
        let mut m = alloc::vec![false; self.total];
        for t in self.tensors.iter().filter(|t| t.partition == partition) {
            m[t.range()].iter_mut().for_each(|v| *v = true);
        }
        m
    }
}

/// All learnable weights in one flat buffer plus the layout describing it.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub data: Vec<f64>,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.data == other.data
    }
}

fn fill_tensor(spec: &TensorSpec, out: &mut [f64], seed: u64) {
    let mut r = rng::stream(seed, &spec.name);
    match spec.init {
        Init::Zeros => out.fill(0.0),
        Init::Ones => out.fill(1.0),
        Init::Uniform(bound) => out.iter_mut().for_each(|v| *v = r.random_range(-bound..bound)),
    }
}

/// Deterministic initialization; each tensor draws from its own named stream.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let layout = ParamLayout::new(cfg);
    let mut data = alloc::vec![0.0; layout.total];
    for t in &layout.tensors {
        fill_tensor(t, &mut data[t.range()], seed);
    }
    Ok(ModelParams { config: *cfg, layout, data })
}

/// Fresh draws for the backbone and head partitions; the fusion partition is
/// copied through untouched.
pub fn reinit_selective(p: &ModelParams, seed: u64) -> ModelParams {
    reinit_partitions(p, seed, &[Partition::Backbone, Partition::Heads])
}

/// Fresh draws for the tensors of `partitions`; everything else is copied.
pub fn reinit_partitions(p: &ModelParams, seed: u64, partitions: &[Partition]) -> ModelParams {
    let mut out = p.clone();
    for t in out.layout.tensors.iter().filter(|t| partitions.contains(&t.partition)) {
        fill_tensor(t, &mut out.data[t.range()], seed);
    }
    out
}

impl ModelParams {
    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.tensor(name).map(|t| &self.data[t.range()])
    }

    pub fn partition_values(&self, partition: Partition) -> Vec<f64> {
        self.layout
            .tensors
            .iter()
            .filter(|t| t.partition == partition)
            .flat_map(|t| self.data[t.range()].iter().copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rebuild from a config and a flat buffer, checking the length.
    pub fn from_parts(config: ModelConfig, data: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if layout.total != data.len() {
            return Err(Error::ShapeMismatch(format!("expected {} parameters, found {}", layout.total, data.len())));
        }
        Ok(Self { config, layout, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameter_count_by_formula() {
        let c = ModelConfig::default();
        let (d, f, v, m, hh, b) = (c.d_model, c.feature_dim, c.vocab, c.mlp_hidden, c.head_hidden, c.bins as usize);
        let backbone = f * d + d + c.visual_tokens() * d + v * d + c.max_text * d;
        let layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * m + m) + (m * d + d);
        let fusion = d + c.layers * layer + 2 * d;
        let heads = (d * hh + hh) + (hh * 4 + 4) + (d * hh + hh) + (hh * 4 * b + 4 * b);
        let p = init_params(&c, 0).unwrap();
        assert_eq!(p.num_params(), backbone + fusion + heads);
        assert_eq!(p.num_params(), 27_396);
    }

    #[test]
    fn every_parameter_in_exactly_one_partition() {
        let layout = ParamLayout::new(&ModelConfig::default());
        let masks: Vec<Vec<bool>> = Partition::ALL.iter().map(|&p| layout.partition_mask(p)).collect();
        for i in 0..layout.total {
            assert_eq!(masks.iter().filter(|m| m[i]).count(), 1, "param {i}");
        }
    }

    #[test]
    fn init_is_deterministic() {
        let c = ModelConfig::default();
        assert_eq!(init_params(&c, 3).unwrap(), init_params(&c, 3).unwrap());
        assert_ne!(init_params(&c, 3).unwrap(), init_params(&c, 4).unwrap());
    }

    #[test]
    fn reinit_preserves_fusion_only() {
        let c = ModelConfig::default();
        let p = init_params(&c, 1).unwrap();
        let r = reinit_selective(&p, 2);
        assert_eq!(p.partition_values(Partition::Fusion), r.partition_values(Partition::Fusion));
        assert_ne!(p.partition_values(Partition::Heads), r.partition_values(Partition::Heads));
        assert_ne!(p.partition_values(Partition::Backbone), r.partition_values(Partition::Backbone));
        assert_eq!(reinit_selective(&p, 2), r);
    }

    #[test]
    fn bad_configs_rejected() {
        let c = ModelConfig { heads: 3, ..ModelConfig::default() };
        assert!(init_params(&c, 0).is_err());
        let c = ModelConfig { bins: 1, ..ModelConfig::default() };
        assert!(init_params(&c, 0).is_err());
    }
}
