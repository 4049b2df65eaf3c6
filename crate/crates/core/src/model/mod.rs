//! Tiny attention-based grounding network with hand-written gradients.
//!
//! The token sequence is `[object query, G*G visual tokens, text tokens]`.
//! It runs through `layers` pre-norm encoder blocks (multi-head
//! self-attention and a GELU MLP, each with a residual connection). The
//! final state of the object query is layer-normed and read out by two
//! heads, both two-layer GELU MLPs with `head_hidden` units:
//!
//! * the regression head emits four logits whose sigmoid is the box;
//! * the quantized head emits `4 x bins` logits, one classification per
//!   center-format coordinate.
//!
//! Parameters live in one flat buffer described by [`ParamLayout`]. Every
//! tensor carries a [`Partition`] tag used by [`reinit_selective`].
//!
//! Initialization: linear weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
//! zero biases, unit layer-norm gains, embedding tables and the object query
//! `U(-0.5, 0.5)`.

mod backward;
mod forward;
pub(crate) mod kernels;
mod optim;
mod params;

pub use backward::{
    backward, grad_of_argmax_sum, loss_and_head_grads, loss_backward, Gradients, HeadGrads, LossBreakdown, LossWeights,
};
pub use forward::{forward, AttentionTrace, ForwardOutput, LayerAttention};
pub use optim::{optimizer_step, AdamW, OptimizerState, StepOutcome};
pub use params::{init_params, reinit_partitions, reinit_selective, Init, ModelConfig, ModelParams, ParamLayout, Partition, TensorSpec};
