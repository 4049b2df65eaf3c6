use actress_core::model::{
    backward, forward, grad_of_argmax_sum, init_params, loss_and_head_grads, loss_backward, Gradients, LossWeights,
    ModelConfig, ModelParams,
};
use actress_core::synthdata::{generate_dataset, GenSpec, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss_at(p: &ModelParams, s: &Sample) -> f64 {
    let out = forward(p, s).unwrap();
    loss_and_head_grads(&out, &s.gold.unwrap(), &LossWeights::default()).unwrap().0.total
}

/// Max relative error over `coords` random parameter coordinates.
fn max_rel_error(p: &ModelParams, s: &Sample, coords: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut g = Gradients::zeros_like(p);
    loss_backward(p, s, &LossWeights::default(), &mut g, 1.0).unwrap();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let i = rng.random_range(0..p.data.len());
        let mut q = p.clone();
        q.data[i] += h;
        let up = loss_at(&q, s);
        q.data[i] -= 2.0 * h;
        let down = loss_at(&q, s);
        let fd = (up - down) / (2.0 * h);
        let denom = fd.abs().max(g.data[i].abs()).max(1e-6);
        worst = worst.max((fd - g.data[i]).abs() / denom);
    }
    worst
}

#[test]
fn parameter_gradients_match_central_differences() {
    let data = generate_dataset(&GenSpec { n: 10, grid: 8, seed: 11 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (k, s) in data.iter().enumerate() {
        let p = init_params(&ModelConfig::default(), 100 + k as u64).unwrap();
        let err = max_rel_error(&p, s, 20, &mut rng);
        assert!(err < 1e-3, "pair {k}: relative error {err}");
    }
}

#[test]
fn argmax_sum_backward_fills_trace_without_touching_params() {
    let data = generate_dataset(&GenSpec { n: 10, grid: 8, seed: 12 }).unwrap();
    let p = init_params(&ModelConfig::default(), 9).unwrap();
    let before = p.clone();
    let mut out = forward(&p, &data[0]).unwrap();
    assert!(!out.trace.has_grad());
    let v = grad_of_argmax_sum(&p, &mut out);
    assert!(v.is_finite());
    assert!(out.trace.has_grad());
    assert_eq!(p, before);
}

/// The argmax-sum objective with the argmax bins held fixed.
fn picked_logits(p: &ModelParams, s: &Sample, bins: &[usize; 4]) -> f64 {
    let out = forward(p, s).unwrap();
    (0..4).map(|c| out.quant_row(c)[bins[c]]).sum()
}

#[test]
fn argmax_sum_gradient_matches_central_differences() {
    let data = generate_dataset(&GenSpec { n: 10, grid: 8, seed: 13 }).unwrap();
    let p = init_params(&ModelConfig::default(), 21).unwrap();
    let s = &data[3];
    let mut out = forward(&p, s).unwrap();
    let q = out.quant_argmax().to_array().map(|b| b as usize);
    let nb = out.bins as usize;
    let mut dq = vec![0.0; 4 * nb];
    for c in 0..4 {
        dq[c * nb + q[c]] = 1.0;
    }
    let mut g = Gradients::zeros_like(&p);
    let head = actress_core::model::HeadGrads { box_logits: [0.0; 4], quant_logits: dq };
    backward(&p, &mut out, &head, Some(&mut g.data));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-4;
    for _ in 0..40 {
        let i = rng.random_range(0..p.data.len());
        let mut pp = p.clone();
        pp.data[i] += h;
        let up = picked_logits(&pp, s, &q);
        pp.data[i] -= 2.0 * h;
        let down = picked_logits(&pp, s, &q);
        let fd = (up - down) / (2.0 * h);
        let denom = fd.abs().max(g.data[i].abs()).max(1e-6);
        assert!((fd - g.data[i]).abs() / denom < 1e-3, "coord {i}: fd {fd} analytic {}", g.data[i]);
    }
}
