use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid box {0:?}")]
    InvalidBox([f64; 4]),
    #[error("bin count must be at least 2, got {0}")]
    TooFewBins(u32),
    #[error("bin index out of range for {bins} bins: {qbox:?}")]
    BinOutOfRange { bins: u32, qbox: [u32; 4] },
    #[error("scene generation exhausted {retries} retries (sample {index}): {reason}")]
    GenerationExhausted { index: usize, retries: usize, reason: String },
    #[error("invalid generator spec: {0}")]
    InvalidGenSpec(String),
    #[error("label fraction {fraction} of {total} samples yields no labeled data")]
    EmptyLabeledSplit { fraction: f64, total: usize },
    #[error("invalid split fraction {0}")]
    InvalidFraction(f64),
    #[error("token id {token} outside vocabulary of {vocab}")]
    TokenOutOfVocab { token: u16, vocab: usize },
    #[error("query has {len} tokens, at most {max} allowed")]
    QueryTooLong { len: usize, max: usize },
    #[error("sample grid is {found}, model expects {expected}")]
    GridMismatch { expected: usize, found: usize },
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged in {phase} at epoch {epoch}: loss {loss}")]
    Diverged { phase: String, epoch: usize, loss: f64 },
    #[error("cannot normalize an empty list")]
    EmptyList,
    #[error("sampling percentage must be in (0, 100], got {0}")]
    InvalidPercent(f64),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("pool of {0} pseudo labels is too small for a quality curve (need at least 10)")]
    PoolTooSmall(usize),
    #[error("sample {0} is missing a target box")]
    MissingTarget(u64),
    #[error("unlabeled sample {0} carries a gold box")]
    GoldLeak(u64),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Observer(String),
}
