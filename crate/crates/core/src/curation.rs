//! Pseudo-label scoring, pool-wise fusion and top-N% selection.

use alloc::vec::Vec;

use crate::attribution;
use crate::error::{Error, Result};
use crate::geometry::{self, Box, QuantizedBox};
use crate::model::{kernels, ModelParams};
use crate::synthdata::Sample;

/// Raw metric values of one pseudo label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreTriple {
    /// Faithfulness, in `[0, 1]`.
    pub faith: f64,
    /// Robustness, in `(-1, 1]`.
    pub robust: f64,
    /// Confidence, in `(0, 1]`.
    pub conf: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabel {
    pub sample_id: u64,
    /// Regression-head prediction, adopted as the training target.
    pub pred_box: Box,
    pub qbox: QuantizedBox,
    pub scores: ScoreTriple,
    /// Fused score after pool normalization; zero until [`assign_fused`].
    pub i_act: f64,
    /// The attribution map was all zero and faithfulness defaulted to 0.
    pub faith_degenerate: bool,
}

/// How the x and y maxima are combined into the confidence score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConfidenceCombine {
    #[default]
    Product,
    /// Arithmetic mean of the two maxima.
    Mean,
}

impl ConfidenceCombine {
    pub fn name(self) -> &'static str {
        match self {
            ConfidenceCombine::Product => "product",
            ConfidenceCombine::Mean => "sum",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "product" => Some(ConfidenceCombine::Product),
            "sum" | "mean" => Some(ConfidenceCombine::Mean),
            _ => None,
        }
    }
}

/// Subset of the three metrics entering the fused score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MetricSet {
    pub faith: bool,
    pub robust: bool,
    pub conf: bool,
}

impl MetricSet {
    pub const ALL: MetricSet = MetricSet { faith: true, robust: true, conf: true };
    pub const NONE: MetricSet = MetricSet { faith: false, robust: false, conf: false };
    pub const FAITH: MetricSet = MetricSet { faith: true, robust: false, conf: false };
    pub const ROBUST: MetricSet = MetricSet { faith: false, robust: true, conf: false };
    pub const CONF: MetricSet = MetricSet { faith: false, robust: false, conf: true };

    pub fn is_empty(&self) -> bool {
        !(self.faith || self.robust || self.conf)
    }

    /// Letters `F`, `R`, `C` in that order; `-` for the empty set.
    pub fn label(&self) -> alloc::string::String {
        let mut s = alloc::string::String::new();
        if self.faith {
            s.push('F');
        }
        if self.robust {
            s.push('R');
        }
        if self.conf {
            s.push('C');
        }
        if s.is_empty() {
            s.push('-');
        }
        s
    }

    /// Parses the letters produced by [`MetricSet::label`], in any order.
    pub fn parse(s: &str) -> Option<MetricSet> {
        let mut m = MetricSet::NONE;
        for ch in s.chars() {
            match ch.to_ascii_uppercase() {
                'F' => m.faith = true,
                'R' => m.robust = true,
                'C' => m.conf = true,
                '-' => {}
                _ => return None,
            }
        }
        Some(m)
    }
}

impl Default for MetricSet {
    fn default() -> Self {
        MetricSet::ALL
    }
}

/// Agreement of the two heads' decodings of the same query.
pub fn robustness(reg_box: &Box, quant_box: &Box) -> f64 {
    geometry::giou(&reg_box.to_corners(), &quant_box.to_corners())
}

/// Combined top softmax probability of the `cx` and `cy` rows of the
/// `4 x bins` quantized logits. The size rows do not contribute.
pub fn confidence(quant_logits: &[f64], bins: usize, combine: ConfidenceCombine) -> f64 {
    let top = |row: &[f64]| kernels::softmax(row).into_iter().fold(0.0, f64::max);
    let px = top(&quant_logits[..bins]);
    let py = top(&quant_logits[bins..2 * bins]);
    match combine {
        ConfidenceCombine::Product => px * py,
        ConfidenceCombine::Mean => 0.5 * (px + py),
    }
}

/// `(v - min) / (max - min)`; an all-equal list maps to ones.
pub fn minmax_normalize(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyList);
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span <= 0.0 || !span.is_finite() {
        return Ok(alloc::vec![1.0; scores.len()]);
    }
    Ok(scores.iter().map(|v| (v - lo) / span).collect())
}

/// Product of the pool-normalized metrics.
pub fn fuse(triples: &[ScoreTriple]) -> Result<Vec<f64>> {
    fuse_subset(triples, MetricSet::ALL)
}

/// Product of the pool-normalized metrics in `metrics`. The empty subset
/// gives every element a fused score of one.
pub fn fuse_subset(triples: &[ScoreTriple], metrics: MetricSet) -> Result<Vec<f64>> {
    if triples.is_empty() {
        return Err(Error::EmptyList);
    }
    let mut fused = alloc::vec![1.0; triples.len()];
    let mut apply = |on: bool, f: fn(&ScoreTriple) -> f64| -> Result<()> {
        if on {
            let raw: Vec<f64> = triples.iter().map(f).collect();
            for (o, n) in fused.iter_mut().zip(minmax_normalize(&raw)?) {
                *o *= n;
            }
        }
        Ok(())
    };
    apply(metrics.faith, |t| t.faith)?;
    apply(metrics.robust, |t| t.robust)?;
    apply(metrics.conf, |t| t.conf)?;
    Ok(fused)
}

/// Writes the fused score of `metrics` into every label's `i_act`.
pub fn assign_fused(pool: &mut [PseudoLabel], metrics: MetricSet) -> Result<()> {
    let triples: Vec<ScoreTriple> = pool.iter().map(|p| p.scores).collect();
    for (p, f) in pool.iter_mut().zip(fuse_subset(&triples, metrics)?) {
        p.i_act = f;
    }
    Ok(())
}

/// Number of labels a top-`n_percent` selection takes from `base`.
pub fn selection_budget(n_percent: f64, base: usize) -> Result<usize> {
    if !(n_percent > 0.0 && n_percent <= 100.0) {
        return Err(Error::InvalidPercent(n_percent));
    }
    Ok(libm::round(n_percent / 100.0 * base as f64) as usize)
}

/// Pool indices sorted by `key` descending, ties by lower sample id.
pub fn rank_by<F: Fn(&PseudoLabel) -> f64>(pool: &[PseudoLabel], key: F) -> Vec<usize> {
    let keys: Vec<f64> = pool.iter().map(key).collect();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(pool[a].sample_id.cmp(&pool[b].sample_id)));
    order
}

/// The top `round(n_percent/100 * base)` labels by `i_act`, ties broken by
/// lower sample id. Returns the whole pool, sorted, when it is smaller than
/// the budget.
pub fn sample_top(pool: &[PseudoLabel], n_percent: f64, base: usize) -> Result<Vec<PseudoLabel>> {
    let budget = selection_budget(n_percent, base)?;
    if budget > pool.len() {
        log::warn!("selection budget {budget} exceeds pool of {}; taking the whole pool", pool.len());
    }
    Ok(rank_by(pool, |p| p.i_act).into_iter().take(budget).map(|i| pool[i].clone()).collect())
}

/// Scoring switches that do not change the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScoringOptions {
    pub combine: ConfidenceCombine,
    /// Row-normalize the accumulated visual relevance after each layer.
    pub normalize_relevance: bool,
}

/// Forward, attribution and the three raw metrics for one unlabeled sample.
/// `i_act` is left at zero.
pub fn score_sample(p: &ModelParams, s: &Sample, opts: &ScoringOptions) -> Result<PseudoLabel> {
    let (map, out) = attribution::attribution_map(p, s, opts.normalize_relevance)?;
    let pred_box = out.pred_box;
    let faith = attribution::faithfulness(&map, &pred_box);
    let robust = robustness(&pred_box, &out.quant_box());
    let conf = confidence(&out.quant_logits, out.bins as usize, opts.combine);
    Ok(PseudoLabel {
        sample_id: s.id,
        pred_box,
        qbox: geometry::quantize(&pred_box, out.bins)?,
        scores: ScoreTriple { faith: faith.score, robust, conf },
        i_act: 0.0,
        faith_degenerate: faith.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn label(id: u64, i_act: f64) -> PseudoLabel {
        PseudoLabel {
            sample_id: id,
            pred_box: Box::new(0.5, 0.5, 0.2, 0.2),
            qbox: QuantizedBox::from_array([0; 4]),
            scores: ScoreTriple { faith: 0.0, robust: 0.0, conf: 0.0 },
            i_act,
            faith_degenerate: false,
        }
    }

    #[test]
    fn robustness_examples() {
        let b = Box::new(0.3, 0.4, 0.2, 0.1);
        assert!((robustness(&b, &b) - 1.0).abs() < 1e-12);
        let far = Box::new(0.8, 0.8, 0.1, 0.1);
        assert!(robustness(&Box::new(0.1, 0.1, 0.1, 0.1), &far) < 0.0);
        let a = Box::new(1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0);
        let c = Box::new(2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0);
        // same geometry as the (0,0,2,2)/(1,1,3,3) pair scaled by 1/3,
        // except that the second box is clipped to the unit square
        let clipped = geometry::giou(&a.to_corners(), &c.to_corners());
        assert!((robustness(&a, &c) - clipped).abs() < 1e-12);
    }

    #[test]
    fn robustness_scaled_pair() {
        let s = 0.25;
        let a = Box::new(1.0 * s, 1.0 * s, 2.0 * s, 2.0 * s);
        let b = Box::new(2.0 * s, 2.0 * s, 2.0 * s, 2.0 * s);
        assert!((robustness(&a, &b) - (1.0 / 7.0 - 2.0 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn confidence_examples() {
        let b = 8;
        let uniform = vec![0.0; 4 * b];
        assert!((confidence(&uniform, b, ConfidenceCombine::Product) - 1.0 / 64.0).abs() < 1e-12);
        let mut sharp = vec![0.0; 4 * b];
        sharp[3] = 800.0;
        sharp[b + 5] = 800.0;
        assert!((confidence(&sharp, b, ConfidenceCombine::Product) - 1.0).abs() < 1e-12);

        // max probabilities 0.8 and 0.5 over two bins
        let mut two = vec![0.0; 8];
        two[0] = libm::log(4.0);
        assert!((confidence(&two, 2, ConfidenceCombine::Product) - 0.4).abs() < 1e-12);
        assert!((confidence(&two, 2, ConfidenceCombine::Mean) - 0.65).abs() < 1e-12);
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_normalize(&[2.0, 4.0, 6.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[5.0; 3]).unwrap(), vec![1.0; 3]);
        assert_eq!(minmax_normalize(&[3.0]).unwrap(), vec![1.0]);
        assert_eq!(minmax_normalize(&[]), Err(Error::EmptyList));
    }

    #[test]
    fn fuse_product() {
        let t = |f, r, c| ScoreTriple { faith: f, robust: r, conf: c };
        let pool = [t(0.0, 0.0, 0.0), t(0.5, 0.8, 1.0), t(1.0, 1.0, 1.0)];
        let fused = fuse(&pool).unwrap();
        assert!((fused[1] - 0.4).abs() < 1e-12);
        assert_eq!(fused[0], 0.0);
        assert_eq!(fuse_subset(&pool, MetricSet::NONE).unwrap(), vec![1.0; 3]);
        assert!((fuse_subset(&pool, MetricSet::ROBUST).unwrap()[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn sample_top_budget_and_ties() {
        let pool: Vec<PseudoLabel> = (0..180).map(|i| label(i, (i % 7) as f64)).collect();
        assert_eq!(sample_top(&pool, 10.0, 180).unwrap().len(), 18);
        let flat: Vec<PseudoLabel> = (0..10).rev().map(|i| label(i, 0.5)).collect();
        let ids: Vec<u64> = sample_top(&flat, 30.0, 10).unwrap().iter().map(|p| p.sample_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(sample_top(&flat, 100.0, 50).unwrap().len(), 10);
        assert!(sample_top(&flat, 0.0, 10).is_err());
    }

    #[test]
    fn metric_labels_round_trip() {
        for m in [MetricSet::ALL, MetricSet::NONE, MetricSet::FAITH, MetricSet::ROBUST, MetricSet::CONF] {
            assert_eq!(MetricSet::parse(&m.label()), Some(m));
        }
        assert_eq!(MetricSet::parse("x"), None);
    }
}
