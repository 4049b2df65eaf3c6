//! Reverse-mode gradients through the fixed computation graph.

use alloc::vec;
use alloc::vec::Vec;

use super::forward::{forward, ForwardOutput};
use super::kernels::{
    add_columns, argmax, columns, gelu_grad, layer_norm_backward, matmul_at_acc, matmul_bt_acc, mm_acc, mm_at_acc, softmax,
};
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::geometry::{self, Box};
use crate::synthdata::Sample;

/// Weights of the three loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub l1: f64,
    pub giou: f64,
    /// Cross-entropy of the quantized head, averaged over the four coordinates.
    pub ce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { l1: 5.0, giou: 2.0, ce: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub l1: f64,
    pub giou: f64,
    pub ce: f64,
}

impl core::ops::AddAssign for LossBreakdown {
    fn add_assign(&mut self, o: Self) {
        self.total += o.total;
        self.l1 += o.l1;
        self.giou += o.giou;
        self.ce += o.ce;
    }
}

/// Gradient with respect to the two head outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads {
    pub box_logits: [f64; 4],
    pub quant_logits: Vec<f64>,
}

impl HeadGrads {
    pub fn scaled(mut self, s: f64) -> Self {
        self.box_logits.iter_mut().for_each(|v| *v *= s);
        self.quant_logits.iter_mut().for_each(|v| *v *= s);
        self
    }
}

/// Flat gradient buffer sharing the parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub data: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self { data: vec![0.0; p.data.len()] }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }
}

/// Loss value and head gradients for a forward output against `target`.
pub fn loss_and_head_grads(out: &ForwardOutput, target: &Box, w: &LossWeights) -> Result<(LossBreakdown, HeadGrads)> {
    let pred = out.pred_box;
    let l1 = geometry::l1_loss(&pred, target);
    let (giou_loss, giou_grad) = geometry::giou_loss_with_grad(&pred, target);
    let l1_grad = geometry::l1_loss_grad(&pred, target);

    let bins = out.bins;
    let nb = bins as usize;
    let targets = geometry::quantize(target, bins)?.to_array();
    let mut ce = 0.0;
    let mut dq = vec![0.0; 4 * nb];
    for (c, &t) in targets.iter().enumerate() {
        let probs = softmax(out.quant_row(c));
        ce -= libm::log(probs[t as usize].max(f64::MIN_POSITIVE));
        for (b, &pb) in probs.iter().enumerate() {
            let onehot = if b == t as usize { 1.0 } else { 0.0 };
            dq[c * nb + b] = w.ce * (pb - onehot) / 4.0;
        }
    }
    ce /= 4.0;

    let total = w.l1 * l1 + w.giou * giou_loss + w.ce * ce;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss(total));
    }
    let p = pred.to_array();
    let dbox: [f64; 4] = core::array::from_fn(|i| {
        let d_pred = w.l1 * l1_grad[i] + w.giou * giou_grad[i];
        d_pred * p[i] * (1.0 - p[i])
    });
    Ok((LossBreakdown { total, l1, giou: giou_loss, ce }, HeadGrads { box_logits: dbox, quant_logits: dq }))
}

fn pair_mut(buf: &mut [f64], a: usize, a_len: usize, b: usize, b_len: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a + a_len <= b);
    let (lo, hi) = buf.split_at_mut(b);
    (&mut lo[a..a + a_len], &mut hi[..b_len])
}

/// Backpropagate `head` through the network. Parameter gradients are
/// accumulated into `grads` when given; attention-map gradients are always
/// written into `out.trace`.
pub fn backward(p: &ModelParams, out: &mut ForwardOutput, head: &HeadGrads, mut grads: Option<&mut [f64]>) {
    let cfg = &p.config;
    let o = &p.layout.offsets;
    let w = |off: usize, len: usize| &p.data[off..off + len];
    let cache = &out.cache;
    let d = cfg.d_model;
    let nv = cfg.visual_tokens();
    let f = cfg.feature_dim;
    let seq = cache.seq;
    let hh = cfg.head_hidden;
    let nb = 4 * cfg.bins as usize;
    let m = cfg.mlp_hidden;
    let heads = cfg.heads;
    let hd = cfg.head_dim();
    let scale = 1.0 / libm::sqrt(hd as f64);

    let mut dz = vec![0.0; d];
    // (w1, b1, w2, b2, pre-activation, activation, upstream, output width)
    let head_specs = [
        (o.quant_w1, o.quant_b1, o.quant_w2, o.quant_b2, &cache.quant_pre, &cache.quant_act, &head.quant_logits[..], nb),
        (o.reg_w1, o.reg_b1, o.reg_w2, o.reg_b2, &cache.reg_pre, &cache.reg_act, &head.box_logits[..], 4),
    ];
    for (w1, b1, w2, b2, pre, act, up, n_out) in head_specs {
        if up.iter().all(|&v| v == 0.0) {
            continue;
        }
        let mut d_act = vec![0.0; hh];
        matmul_bt_acc(up, w(w2, hh * n_out), &mut d_act, 1, hh, n_out);
        let d_pre: Vec<f64> = d_act.iter().zip(pre.iter()).map(|(g, &u)| g * gelu_grad(u)).collect();
        matmul_bt_acc(&d_pre, w(w1, d * hh), &mut dz, 1, d, hh);
        if let Some(g) = grads.as_deref_mut() {
            let (dw, db) = pair_mut(g, w2, hh * n_out, b2, n_out);
            matmul_at_acc(act, up, dw, db, 1, hh, n_out);
            let (dw, db) = pair_mut(g, w1, d * hh, b1, hh);
            matmul_at_acc(&cache.z, &d_pre, dw, db, 1, d, hh);
        }
    }

    let mut attn_grads: Vec<Option<Vec<f64>>> = vec![None; cfg.layers];
    let mut dx = vec![0.0; seq * d];
    {
        let dg = grads.as_deref_mut().map(|g| pair_mut(g, o.lnf_g, d, o.lnf_b, d));
        layer_norm_backward(&dz, &cache.xhat_f, &[cache.rstd_f], w(o.lnf_g, d), &mut dx[..d], dg, d);
    }

    for (l, lo) in o.layers.iter().enumerate().rev() {
        let lc = &cache.layers[l];
        let probs = &out.trace.layers[l].probs;

        // MLP block
        let mut d_act = vec![0.0; seq * m];
        matmul_bt_acc(&dx, w(lo.w2, m * d), &mut d_act, seq, m, d);
        let d_pre: Vec<f64> = d_act.iter().zip(&lc.mlp_pre).map(|(g, &u)| g * gelu_grad(u)).collect();
        let mut dh2 = vec![0.0; seq * d];
        matmul_bt_acc(&d_pre, w(lo.w1, d * m), &mut dh2, seq, d, m);
        if let Some(g) = grads.as_deref_mut() {
            let (dw, db) = pair_mut(g, lo.w2, m * d, lo.b2, d);
            matmul_at_acc(&lc.mlp_act, &dx, dw, db, seq, m, d);
            let (dw, db) = pair_mut(g, lo.w1, d * m, lo.b1, m);
            matmul_at_acc(&lc.h2, &d_pre, dw, db, seq, d, m);
        }
        let mut dx1 = dx;
        {
            let dg = grads.as_deref_mut().map(|g| pair_mut(g, lo.ln2_g, d, lo.ln2_b, d));
            layer_norm_backward(&dh2, &lc.xhat2, &lc.rstd2, w(lo.ln2_g, d), &mut dx1, dg, d);
        }

        // attention block
        let mut d_attn = vec![0.0; seq * d];
        matmul_bt_acc(&dx1, w(lo.wo, d * d), &mut d_attn, seq, d, d);
        if let Some(g) = grads.as_deref_mut() {
            let (dw, db) = pair_mut(g, lo.wo, d * d, lo.bo, d);
            matmul_at_acc(&lc.attn_out, &dx1, dw, db, seq, d, d);
        }
        let mut dprobs = vec![0.0; heads * seq * seq];
        let mut dq = vec![0.0; seq * d];
        let mut dk = vec![0.0; seq * d];
        let mut dv = vec![0.0; seq * d];
        for h in 0..heads {
            let c0 = h * hd;
            let doh = columns(&d_attn, seq, d, c0, hd);
            let (qh, kh, vh) = (columns(&lc.q, seq, d, c0, hd), columns(&lc.k, seq, d, c0, hd), columns(&lc.v, seq, d, c0, hd));
            let ph = &probs[h * seq * seq..(h + 1) * seq * seq];
            let dph = &mut dprobs[h * seq * seq..(h + 1) * seq * seq];
            matmul_bt_acc(&doh, &vh, dph, seq, seq, hd);
            let mut dvh = vec![0.0; seq * hd];
            mm_at_acc(ph, &doh, &mut dvh, seq, seq, hd);
            let mut ds = vec![0.0; seq * seq];
            for ((dsr, pr), dpr) in ds.chunks_exact_mut(seq).zip(ph.chunks_exact(seq)).zip(dph.chunks_exact(seq)) {
                let weighted: f64 = pr.iter().zip(dpr.iter()).map(|(a, g)| a * g).sum();
                for ((o, &a), &g) in dsr.iter_mut().zip(pr).zip(dpr.iter()) {
                    *o = a * (g - weighted) * scale;
                }
            }
            let mut dqh = vec![0.0; seq * hd];
            mm_acc(&ds, &kh, &mut dqh, seq, seq, hd);
            let mut dkh = vec![0.0; seq * hd];
            mm_at_acc(&ds, &qh, &mut dkh, seq, seq, hd);
            add_columns(&mut dq, &dqh, seq, d, c0, hd);
            add_columns(&mut dk, &dkh, seq, d, c0, hd);
            add_columns(&mut dv, &dvh, seq, d, c0, hd);
        }
        attn_grads[l] = Some(dprobs);

        let mut dh1 = vec![0.0; seq * d];
        matmul_bt_acc(&dq, w(lo.wq, d * d), &mut dh1, seq, d, d);
        matmul_bt_acc(&dk, w(lo.wk, d * d), &mut dh1, seq, d, d);
        matmul_bt_acc(&dv, w(lo.wv, d * d), &mut dh1, seq, d, d);
        if let Some(g) = grads.as_deref_mut() {
            for (wo, bo, dmat) in [(lo.wq, lo.bq, &dq), (lo.wk, lo.bk, &dk), (lo.wv, lo.bv, &dv)] {
                let (dw, db) = pair_mut(g, wo, d * d, bo, d);
                matmul_at_acc(&lc.h1, dmat, dw, db, seq, d, d);
            }
        }
        let mut dx0 = dx1;
        {
            let dg = grads.as_deref_mut().map(|g| pair_mut(g, lo.ln1_g, d, lo.ln1_b, d));
            layer_norm_backward(&dh1, &lc.xhat1, &lc.rstd1, w(lo.ln1_g, d), &mut dx0, dg, d);
        }
        dx = dx0;
    }

    if let Some(g) = grads {
        let inv_nt = 1.0 / cache.tokens.len() as f64;
        for c in 0..d {
            g[o.query + c] += dx[c];
        }
        for &tok in &cache.tokens {
            let e = o.text_emb + tok as usize * d;
            for c in 0..d {
                g[e + c] += dx[c] * inv_nt;
            }
        }
        let dvis = &dx[d..(1 + nv) * d];
        {
            let (dw, db) = pair_mut(g, o.visual_w, f * d, o.visual_b, d);
            matmul_at_acc(&cache.features, dvis, dw, db, nv, f, d);
        }
        for (gp, &v) in g[o.visual_pos..o.visual_pos + nv * d].iter_mut().zip(dvis) {
            *gp += v;
        }
        for (t, &tok) in cache.tokens.iter().enumerate() {
            let row = &dx[(1 + nv + t) * d..(2 + nv + t) * d];
            let e = o.text_emb + tok as usize * d;
            let pp = o.text_pos + t * d;
            for c in 0..d {
                g[e + c] += row[c];
                g[pp + c] += row[c];
            }
        }
    }
    for (layer, grad) in out.trace.layers.iter_mut().zip(attn_grads) {
        layer.grad = grad;
    }
}

/// Forward, loss and backward for one sample against its target box; the
/// parameter gradient, multiplied by `scale`, is accumulated into `grads`.
pub fn loss_backward(
    p: &ModelParams,
    s: &Sample,
    weights: &LossWeights,
    grads: &mut Gradients,
    scale: f64,
) -> Result<(LossBreakdown, ForwardOutput)> {
    let target = s.gold.ok_or(Error::MissingTarget(s.id))?;
    let mut out = forward(p, s)?;
    let (loss, head) = loss_and_head_grads(&out, &target, weights)?;
    backward(p, &mut out, &head.scaled(scale), Some(&mut grads.data));
    Ok((loss, out))
}

/// Backpropagate the sum over the four coordinates of the top quantized
/// logit, filling the attention-map gradients of `out.trace` without
/// touching any parameter. Returns the value of that sum.
pub fn grad_of_argmax_sum(p: &ModelParams, out: &mut ForwardOutput) -> f64 {
    let nb = out.bins as usize;
    let mut dq = vec![0.0; 4 * nb];
    let mut value = 0.0;
    for c in 0..4 {
        let row = out.quant_row(c);
        let b = argmax(row);
        value += row[b];
        dq[c * nb + b] = 1.0;
    }
    let head = HeadGrads { box_logits: [0.0; 4], quant_logits: dq };
    backward(p, out, &head, None);
    value
}
