//! Gradient-weighted relevance propagation over the attention trace and the
//! faithfulness score derived from it.
//!
//! For every layer the attention probabilities are weighted by their
//! gradient, passed through a ReLU and averaged over heads (`Abar`). Two
//! accumulators are rolled forward through the layers:
//!
//! ```text
//! R_vv <- R_vv + Abar_vv * R_vv        (visual -> visual, starts at I)
//! R_rv <- R_rv + Abar_rv * R_vv        (object query -> visual, starts at 0)
//! ```
//!
//! where `Abar_vv` is the visual-row/visual-column block of `Abar` and
//! `Abar_rv` is the object-query row restricted to visual columns. Both rules
//! read the `R_vv` from before the layer's update. The final `R_rv`, clamped
//! at zero and reshaped to the grid, is the attribution map.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::Box;
use crate::model::{self, AttentionTrace, ForwardOutput, ModelParams};
use crate::synthdata::Sample;

/// Totals at or below this count as an all-zero map.
pub const DEGENERATE_MASS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceState {
    pub visual: usize,
    /// `visual x visual`, row-major.
    pub r_vv: Vec<f64>,
    /// Length `visual`.
    pub r_rv: Vec<f64>,
}

impl RelevanceState {
    pub fn new(visual: usize) -> Self {
        let mut r_vv = vec![0.0; visual * visual];
        for i in 0..visual {
            r_vv[i * visual + i] = 1.0;
        }
        Self { visual, r_vv, r_rv: vec![0.0; visual] }
    }
}

/// `mean_h max(0, grad_h * attn_h)`, both `heads x seq x seq`.
pub fn layer_abar(attn: &[f64], grad: &[f64], heads: usize, seq: usize) -> Result<Vec<f64>> {
    if attn.len() != heads * seq * seq || grad.len() != attn.len() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "attention {} / gradient {} for {heads} heads of {seq} tokens",
            attn.len(),
            grad.len()
        )));
    }
    let mut abar = vec![0.0; seq * seq];
    for h in 0..heads {
        let base = h * seq * seq;
        for (i, out) in abar.iter_mut().enumerate() {
            *out += (grad[base + i] * attn[base + i]).max(0.0);
        }
    }
    let inv = 1.0 / heads as f64;
    abar.iter_mut().for_each(|v| *v *= inv);
    Ok(abar)
}

/// Split `Abar` into its visual block and the object-query row over visual
/// columns. Token 0 is the object query, tokens `1..=visual` are visual.
pub fn visual_blocks(abar: &[f64], seq: usize, visual: usize) -> (Vec<f64>, Vec<f64>) {
    let mut vv = vec![0.0; visual * visual];
    for i in 0..visual {
        let src = &abar[(1 + i) * seq + 1..(1 + i) * seq + 1 + visual];
        vv[i * visual..(i + 1) * visual].copy_from_slice(src);
    }
    let rv = abar[1..1 + visual].to_vec();
    (vv, rv)
}

/// One layer of the recurrence. With `normalize`, the accumulated part of
/// `R_vv` (everything above the identity) is row-normalized afterwards.
pub fn propagate(state: &mut RelevanceState, abar_vv: &[f64], abar_rv: &[f64], normalize: bool) {
    let n = state.visual;
    let old = &state.r_vv;
    let mut new_vv = old.clone();
    for i in 0..n {
        let arow = &abar_vv[i * n..(i + 1) * n];
        let out = &mut new_vv[i * n..(i + 1) * n];
        for (k, &a) in arow.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (o, &r) in out.iter_mut().zip(&old[k * n..(k + 1) * n]) {
                *o += a * r;
            }
        }
    }
    for (k, &a) in abar_rv.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (o, &r) in state.r_rv.iter_mut().zip(&old[k * n..(k + 1) * n]) {
            *o += a * r;
        }
    }
    if normalize {
        for i in 0..n {
            let row = &mut new_vv[i * n..(i + 1) * n];
            let extra: f64 = row.iter().sum::<f64>() - 1.0;
            if extra > DEGENERATE_MASS {
                for (j, v) in row.iter_mut().enumerate() {
                    let id = if i == j { 1.0 } else { 0.0 };
                    *v = id + (*v - id) / extra;
                }
            }
        }
    }
    state.r_vv = new_vv;
}

/// Per-cell attribution, row-major over the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMap {
    pub grid: usize,
    pub values: Vec<f64>,
    /// Set when every attention gradient vanished and the map is all zero.
    pub degenerate: bool,
}

impl AttributionMap {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Roll the recurrence over a trace whose gradients have been filled.
pub fn attribution_from_trace(trace: &AttentionTrace, grid: usize, normalize: bool) -> Result<AttributionMap> {
    let visual = trace.visual_tokens;
    if visual != grid * grid {
        return Err(Error::GridMismatch { expected: grid * grid, found: visual });
    }
    let mut state = RelevanceState::new(visual);
    for layer in &trace.layers {
        let grad = layer
            .grad
            .as_ref()
            .ok_or_else(|| Error::ShapeMismatch("attention gradient missing; run a backward pass first".into()))?;
        let abar = layer_abar(&layer.probs, grad, layer.heads, layer.seq)?;
        let (vv, rv) = visual_blocks(&abar, layer.seq, visual);
        propagate(&mut state, &vv, &rv, normalize);
    }
    let values: Vec<f64> = state.r_rv.iter().map(|v| v.max(0.0)).collect();
    let degenerate = values.iter().sum::<f64>() <= DEGENERATE_MASS;
    Ok(AttributionMap { grid, values, degenerate })
}

/// Forward, argmax-sum backward and propagation for one sample.
pub fn attribution_map(p: &ModelParams, s: &Sample, normalize: bool) -> Result<(AttributionMap, ForwardOutput)> {
    let mut out = model::forward(p, s)?;
    model::grad_of_argmax_sum(p, &mut out);
    let map = attribution_from_trace(&out.trace, p.config.grid, normalize)?;
    Ok((map, out))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Faithfulness {
    pub score: f64,
    pub degenerate: bool,
}

/// Share of attribution mass inside `pred`, each cell weighted by the
/// fraction of its area the box covers.
pub fn faithfulness(map: &AttributionMap, pred: &Box) -> Faithfulness {
    let total = map.total();
    if total <= DEGENERATE_MASS {
        return Faithfulness { score: 0.0, degenerate: true };
    }
    let c = pred.to_corners();
    let g = map.grid;
    let step = 1.0 / g as f64;
    let overlap = |lo: f64, hi: f64, i: usize| {
        let a = i as f64 * step;
        ((hi.min(a + step) - lo.max(a)).max(0.0)) / step
    };
    let xs: Vec<f64> = (0..g).map(|i| overlap(c.x1, c.x2, i)).collect();
    let ys: Vec<f64> = (0..g).map(|i| overlap(c.y1, c.y2, i)).collect();
    let mut inside = 0.0;
    for (row, y) in map.values.chunks(g).zip(&ys) {
        inside += y * row.iter().zip(&xs).map(|(v, x)| v * x).sum::<f64>();
    }
    Faithfulness { score: (inside / total).clamp(0.0, 1.0), degenerate: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(grid: usize, values: Vec<f64>) -> AttributionMap {
        AttributionMap { grid, values, degenerate: false }
    }

    #[test]
    fn abar_zero_gradient() {
        let a = vec![0.25; 2 * 4 * 4];
        assert!(layer_abar(&a, &vec![0.0; 32], 2, 4).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn abar_unit_gradient_is_mean_attention() {
        let mut a = vec![0.0; 2 * 3 * 3];
        for (i, v) in a.iter_mut().enumerate() {
            *v = (i % 3 + 1) as f64 / 6.0;
        }
        let abar = layer_abar(&a, &[1.0; 18], 2, 3).unwrap();
        for r in 0..3 {
            let s: f64 = abar[r * 3..r * 3 + 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn abar_clamps_negative_products() {
        let a = vec![0.5; 4];
        let g = vec![-1.0, 2.0, -3.0, 4.0];
        assert_eq!(layer_abar(&a, &g, 1, 2).unwrap(), vec![0.0, 1.0, 0.0, 2.0]);
        assert!(layer_abar(&a, &g[..3], 1, 2).is_err());
    }

    #[test]
    fn zero_abar_leaves_state() {
        let mut st = RelevanceState::new(3);
        let before = st.clone();
        propagate(&mut st, &[0.0; 9], &[0.0; 3], false);
        assert_eq!(st, before);
    }

    #[test]
    fn one_hot_query_row_selects_token() {
        let mut st = RelevanceState::new(4);
        propagate(&mut st, &[0.0; 16], &[0.0, 0.0, 1.0, 0.0], false);
        assert_eq!(st.r_rv, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn faithfulness_examples() {
        let uniform = map(4, vec![1.0; 16]);
        let quarter = Box::new(0.25, 0.25, 0.5, 0.5);
        assert!((faithfulness(&uniform, &quarter).score - 0.25).abs() < 1e-12);

        let mut inside = vec![0.0; 16];
        inside[0] = 2.0;
        inside[5] = 1.0;
        assert!((faithfulness(&map(4, inside), &quarter).score - 1.0).abs() < 1e-12);

        let mut split = vec![0.0; 16];
        split[0] = 1.0;
        split[15] = 3.0;
        assert!((faithfulness(&map(4, split), &quarter).score - 0.25).abs() < 1e-12);
    }

    #[test]
    fn partial_cells_weighted_by_area() {
        let uniform = map(2, vec![1.0; 4]);
        // covers half of cell (0,0) horizontally and all of it vertically
        let b = Box::new(0.125, 0.25, 0.25, 0.5);
        assert!((faithfulness(&uniform, &b).score - 0.125).abs() < 1e-12);
    }

    #[test]
    fn empty_map_is_degenerate() {
        let f = faithfulness(&map(2, vec![0.0; 4]), &Box::new(0.5, 0.5, 0.5, 0.5));
        assert_eq!(f, Faithfulness { score: 0.0, degenerate: true });
    }
}
