use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{
    add_columns, argmax, columns, gelu, layer_norm, matmul_bias, matmul_bt_acc, mm_acc, sigmoid, softmax_in_place,
};
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::geometry::{self, Box, QuantizedBox};
use crate::synthdata::{check_query, Sample};

/// Attention probabilities of one encoder layer, `heads x seq x seq`
/// row-major, plus their gradient once a backward pass has run.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerAttention {
    pub heads: usize,
    pub seq: usize,
    pub probs: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl LayerAttention {
    pub fn row(&self, head: usize, i: usize) -> &[f64] {
        let s = self.seq;
        &self.probs[(head * s + i) * s..(head * s + i + 1) * s]
    }
}

/// Per-layer attention maps in forward order.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub layers: Vec<LayerAttention>,
    /// Token layout: `[query, visual_tokens..., text_tokens...]`.
    pub visual_tokens: usize,
    pub text_tokens: usize,
}

impl AttentionTrace {
    pub fn has_grad(&self) -> bool {
        self.layers.iter().all(|l| l.grad.is_some())
    }

    pub fn clear_grad(&mut self) {
        self.layers.iter_mut().for_each(|l| l.grad = None);
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerCache {
    pub xhat1: Vec<f64>,
    pub rstd1: Vec<f64>,
    pub h1: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    pub attn_out: Vec<f64>,
    pub xhat2: Vec<f64>,
    pub rstd2: Vec<f64>,
    pub h2: Vec<f64>,
    pub mlp_pre: Vec<f64>,
    pub mlp_act: Vec<f64>,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct ForwardCache {
    pub seq: usize,
    pub features: Vec<f64>,
    pub tokens: Vec<u16>,
    pub layers: Vec<LayerCache>,
    pub xhat_f: Vec<f64>,
    pub rstd_f: f64,
    pub z: Vec<f64>,
    pub reg_pre: Vec<f64>,
    pub reg_act: Vec<f64>,
    pub quant_pre: Vec<f64>,
    pub quant_act: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Sigmoid of the regression head.
    pub pred_box: Box,
    /// Regression head output before the sigmoid.
    pub box_logits: [f64; 4],
    /// `4 x bins` row-major, rows in `(cx, cy, w, h)` order.
    pub quant_logits: Vec<f64>,
    pub bins: u32,
    pub trace: AttentionTrace,
    pub(crate) cache: ForwardCache,
}

impl ForwardOutput {
    pub fn quant_row(&self, coord: usize) -> &[f64] {
        let b = self.bins as usize;
        &self.quant_logits[coord * b..(coord + 1) * b]
    }

    /// Argmax bin of each coordinate row.
    pub fn quant_argmax(&self) -> QuantizedBox {
        QuantizedBox::from_array(core::array::from_fn(|c| argmax(self.quant_row(c)) as u32))
    }

    /// The quantized head's answer decoded to bin centers.
    pub fn quant_box(&self) -> Box {
        geometry::dequantize(&self.quant_argmax(), self.bins).expect("argmax is always in range")
    }
}

/// Forward pass of the grounding network on one sample.
pub fn forward(p: &ModelParams, s: &Sample) -> Result<ForwardOutput> {
    let cfg = &p.config;
    if s.scene.grid != cfg.grid {
        return Err(Error::GridMismatch { expected: cfg.grid, found: s.scene.grid });
    }
    check_query(&s.query.tokens, cfg.vocab, cfg.max_text)?;
    let o = &p.layout.offsets;
    let w = |off: usize, len: usize| &p.data[off..off + len];
    let d = cfg.d_model;
    let nv = cfg.visual_tokens();
    let nt = s.query.tokens.len();
    let seq = 1 + nv + nt;
    let f = cfg.feature_dim;
    let heads = cfg.heads;
    let hd = cfg.head_dim();
    let scale = 1.0 / libm::sqrt(hd as f64);

    // embeddings
    let mut x = vec![0.0; seq * d];
    x[..d].copy_from_slice(w(o.query, d));
    let inv_nt = 1.0 / nt as f64;
    for &tok in &s.query.tokens {
        for (q, e) in x[..d].iter_mut().zip(w(o.text_emb + tok as usize * d, d)) {
            *q += e * inv_nt;
        }
    }
    matmul_bias(&s.scene.features, w(o.visual_w, f * d), w(o.visual_b, d), &mut x[d..(1 + nv) * d], nv, f, d);
    let vpos = w(o.visual_pos, nv * d);
    for (xv, pv) in x[d..(1 + nv) * d].iter_mut().zip(vpos) {
        *xv += pv;
    }
    for (t, &tok) in s.query.tokens.iter().enumerate() {
        let row = &mut x[(1 + nv + t) * d..(2 + nv + t) * d];
        let e = w(o.text_emb + tok as usize * d, d);
        let pos = w(o.text_pos + t * d, d);
        for c in 0..d {
            row[c] = e[c] + pos[c];
        }
    }

    let mut layers = Vec::with_capacity(cfg.layers);
    let mut trace_layers = Vec::with_capacity(cfg.layers);
    for lo in &o.layers {
        let mut xhat1 = vec![0.0; seq * d];
        let mut rstd1 = vec![0.0; seq];
        let mut h1 = vec![0.0; seq * d];
        layer_norm(&x, w(lo.ln1_g, d), w(lo.ln1_b, d), &mut xhat1, &mut rstd1, &mut h1, d);
        let mut q = vec![0.0; seq * d];
        let mut k = vec![0.0; seq * d];
        let mut v = vec![0.0; seq * d];
        matmul_bias(&h1, w(lo.wq, d * d), w(lo.bq, d), &mut q, seq, d, d);
        matmul_bias(&h1, w(lo.wk, d * d), w(lo.bk, d), &mut k, seq, d, d);
        matmul_bias(&h1, w(lo.wv, d * d), w(lo.bv, d), &mut v, seq, d, d);

        let mut probs = vec![0.0; heads * seq * seq];
        let mut attn_out = vec![0.0; seq * d];
        for h in 0..heads {
            let c0 = h * hd;
            let (qh, kh, vh) = (columns(&q, seq, d, c0, hd), columns(&k, seq, d, c0, hd), columns(&v, seq, d, c0, hd));
            let ph = &mut probs[h * seq * seq..(h + 1) * seq * seq];
            matmul_bt_acc(&qh, &kh, ph, seq, seq, hd);
            for row in ph.chunks_exact_mut(seq) {
                row.iter_mut().for_each(|r| *r *= scale);
                softmax_in_place(row);
            }
            let mut oh = vec![0.0; seq * hd];
            mm_acc(ph, &vh, &mut oh, seq, seq, hd);
            add_columns(&mut attn_out, &oh, seq, d, c0, hd);
        }
        let mut x1 = vec![0.0; seq * d];
        matmul_bias(&attn_out, w(lo.wo, d * d), w(lo.bo, d), &mut x1, seq, d, d);
        for (a, b) in x1.iter_mut().zip(&x) {
            *a += b;
        }

        let m = cfg.mlp_hidden;
        let mut xhat2 = vec![0.0; seq * d];
        let mut rstd2 = vec![0.0; seq];
        let mut h2 = vec![0.0; seq * d];
        layer_norm(&x1, w(lo.ln2_g, d), w(lo.ln2_b, d), &mut xhat2, &mut rstd2, &mut h2, d);
        let mut mlp_pre = vec![0.0; seq * m];
        matmul_bias(&h2, w(lo.w1, d * m), w(lo.b1, m), &mut mlp_pre, seq, d, m);
        let mlp_act: Vec<f64> = mlp_pre.iter().map(|&u| gelu(u)).collect();
        let mut x2 = vec![0.0; seq * d];
        matmul_bias(&mlp_act, w(lo.w2, m * d), w(lo.b2, d), &mut x2, seq, m, d);
        for (a, b) in x2.iter_mut().zip(&x1) {
            *a += b;
        }

        trace_layers.push(LayerAttention { heads, seq, probs, grad: None });
        x = x2;
        layers.push(LayerCache {
            xhat1,
            rstd1,
            h1,
            q,
            k,
            v,
            attn_out,
            xhat2,
            rstd2,
            h2,
            mlp_pre,
            mlp_act,
        });
    }

    // object query readout
    let mut xhat_f = vec![0.0; d];
    let mut rstd_f = [0.0];
    let mut z = vec![0.0; d];
    layer_norm(&x[..d], w(o.lnf_g, d), w(o.lnf_b, d), &mut xhat_f, &mut rstd_f, &mut z, d);

    let hh = cfg.head_hidden;
    let nb = 4 * cfg.bins as usize;
    let mut reg_pre = vec![0.0; hh];
    matmul_bias(&z, w(o.reg_w1, d * hh), w(o.reg_b1, hh), &mut reg_pre, 1, d, hh);
    let reg_act: Vec<f64> = reg_pre.iter().map(|&u| gelu(u)).collect();
    let mut box_logits = [0.0; 4];
    matmul_bias(&reg_act, w(o.reg_w2, hh * 4), w(o.reg_b2, 4), &mut box_logits, 1, hh, 4);

    let mut quant_pre = vec![0.0; hh];
    matmul_bias(&z, w(o.quant_w1, d * hh), w(o.quant_b1, hh), &mut quant_pre, 1, d, hh);
    let quant_act: Vec<f64> = quant_pre.iter().map(|&u| gelu(u)).collect();
    let mut quant_logits = vec![0.0; nb];
    matmul_bias(&quant_act, w(o.quant_w2, hh * nb), w(o.quant_b2, nb), &mut quant_logits, 1, hh, nb);

    let pred_box = Box::from_array(box_logits.map(sigmoid));
    Ok(ForwardOutput {
        pred_box,
        box_logits,
        quant_logits,
        bins: cfg.bins,
        trace: AttentionTrace { layers: trace_layers, visual_tokens: nv, text_tokens: nt },
        cache: ForwardCache {
            seq,
            features: s.scene.features.clone(),
            tokens: s.query.tokens.clone(),
            layers,
            xhat_f,
            rstd_f: rstd_f[0],
            z,
            reg_pre,
            reg_act,
            quant_pre,
            quant_act,
        },
    })
}
