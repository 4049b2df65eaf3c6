use alloc::vec;
use alloc::vec::Vec;

use super::backward::Gradients;
use super::params::{ModelParams, Partition};
use crate::error::{Error, Result};

/// Decoupled-weight-decay Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// First and second moments plus a step counter per partition, so that a
/// re-drawn partition restarts its bias correction from scratch.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: [u64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Non-finite gradients; parameters and state left untouched.
    Skipped,
}

fn slot(p: Partition) -> usize {
    match p {
        Partition::Backbone => 0,
        Partition::Fusion => 1,
        Partition::Heads => 2,
    }
}

impl OptimizerState {
    pub fn new(p: &ModelParams) -> Self {
        Self { m: vec![0.0; p.data.len()], v: vec![0.0; p.data.len()], steps: [0; 3] }
    }

    pub fn steps_of(&self, p: Partition) -> u64 {
        self.steps[slot(p)]
    }

    /// Zero the moments and step counters of the given partitions.
    pub fn reset_partitions(&mut self, params: &ModelParams, parts: &[Partition]) {
        for t in params.layout.tensors.iter().filter(|t| parts.contains(&t.partition)) {
            self.m[t.range()].fill(0.0);
            self.v[t.range()].fill(0.0);
        }
        for &p in parts {
            self.steps[slot(p)] = 0;
        }
    }
}

pub fn optimizer_step(
    p: &mut ModelParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
    hp: &AdamW,
) -> Result<StepOutcome> {
    if grads.data.len() != p.data.len() || state.m.len() != p.data.len() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "params {} grads {} state {}",
            p.data.len(),
            grads.data.len(),
            state.m.len()
        )));
    }
    if !grads.is_finite() {
        log::warn!("skipping optimizer step: non-finite gradient");
        return Ok(StepOutcome::Skipped);
    }
    for s in state.steps.iter_mut() {
        *s += 1;
    }
    for t in &p.layout.tensors {
        let step = state.steps[slot(t.partition)] as i32;
        let bc1 = 1.0 - libm::pow(hp.beta1, step as f64);
        let bc2 = 1.0 - libm::pow(hp.beta2, step as f64);
        for i in t.range() {
            let g = grads.data[i];
            let m = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
            let v = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
            state.m[i] = m;
            state.v[i] = v;
            let update = (m / bc1) / (libm::sqrt(v / bc2) + hp.eps);
            p.data[i] -= lr * (update + hp.weight_decay * p.data[i]);
        }
    }
    Ok(StepOutcome::Applied)
}
