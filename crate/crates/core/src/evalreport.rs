//! Accuracy, pseudo-label quality curves and the metric ablation.
//!
//! Gold boxes of unlabeled samples are held in [`SealedGold`]. Nothing
//! outside this module can read them back; they only enter the evaluation
//! functions defined here.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::curation::{self, MetricSet, PseudoLabel};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::geometry::{self, Box};
use crate::model::{self, ModelParams};
use crate::rng;
use crate::synthdata::Sample;
use crate::trainer::{self, RunData, StageReport, TrainConfig, TrainState};

/// Gold boxes withheld from training.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SealedGold {
    boxes: BTreeMap<u64, Box>,
}

impl SealedGold {
    pub fn seal<I: IntoIterator<Item = (u64, Box)>>(entries: I) -> Self {
        Self { boxes: entries.into_iter().collect() }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.boxes.contains_key(&id)
    }

    fn get(&self, id: u64) -> Result<&Box> {
        self.boxes.get(&id).ok_or(Error::MissingTarget(id))
    }
}

/// `IoU > 0.5`, strictly.
pub fn is_hit(pred: &Box, gold: &Box) -> bool {
    geometry::iou(&pred.to_corners(), &gold.to_corners()) > 0.5
}

/// Percentage of `(pred, gold)` pairs that are hits.
pub fn hit_rate(pairs: &[(Box, Box)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("prediction set"));
    }
    let hits = pairs.iter().filter(|(p, g)| is_hit(p, g)).count();
    Ok(100.0 * hits as f64 / pairs.len() as f64)
}

/// Acc@0.5 of both heads, in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Accuracy {
    pub regression: f64,
    pub quantized: f64,
}

pub fn acc_at_05<E: Executor>(p: &ModelParams, testset: &[Sample], exec: &E) -> Result<Accuracy> {
    if testset.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let preds = exec.map(testset.len(), |i| {
        let s = &testset[i];
        let gold = s.gold.ok_or(Error::MissingTarget(s.id))?;
        let out = model::forward(p, s)?;
        Ok(((out.pred_box, gold), (out.quant_box(), gold)))
    });
    let preds: Vec<((Box, Box), (Box, Box))> = preds.into_iter().collect::<Result<_>>()?;
    let (reg, quant): (Vec<_>, Vec<_>) = preds.into_iter().unzip();
    Ok(Accuracy { regression: hit_rate(&reg)?, quantized: hit_rate(&quant)? })
}

/// Ordering used to pick the top-k% of a pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ranker {
    Random,
    Robust,
    Conf,
    Faith,
    Fused,
    /// True IoU with the sealed gold box.
    Oracle,
}

impl Ranker {
    /// The five rankers of the standard curve table.
    pub const STANDARD: [Ranker; 5] = [Ranker::Random, Ranker::Robust, Ranker::Conf, Ranker::Faith, Ranker::Fused];

    pub fn name(self) -> &'static str {
        match self {
            Ranker::Random => "random",
            Ranker::Robust => "robust",
            Ranker::Conf => "conf",
            Ranker::Faith => "faith",
            Ranker::Fused => "fused",
            Ranker::Oracle => "oracle",
        }
    }

    pub fn from_name(s: &str) -> Option<Ranker> {
        [Ranker::Random, Ranker::Robust, Ranker::Conf, Ranker::Faith, Ranker::Fused, Ranker::Oracle]
            .into_iter()
            .find(|r| r.name() == s)
    }
}

pub const CURVE_THRESHOLDS: [u32; 5] = [50, 40, 30, 20, 10];

/// Smallest pool a curve is computed on.
pub const MIN_CURVE_POOL: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub ranker: Ranker,
    /// Acc@0.5 of the selected labels at each threshold, in percent.
    pub accuracy: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QualityCurve {
    /// Top-k% thresholds, descending.
    pub thresholds: Vec<u32>,
    pub rows: Vec<CurveRow>,
}

impl QualityCurve {
    pub fn row(&self, ranker: Ranker) -> Option<&[f64]> {
        self.rows.iter().find(|r| r.ranker == ranker).map(|r| r.accuracy.as_slice())
    }

    /// Trapezoidal area under a row, abscissa in percentage points.
    pub fn auc(&self, ranker: Ranker) -> Option<f64> {
        let acc = self.row(ranker)?;
        Some(
            self.thresholds
                .windows(2)
                .zip(acc.windows(2))
                .map(|(t, a)| (t[0] as f64 - t[1] as f64).abs() * 0.5 * (a[0] + a[1]))
                .sum(),
        )
    }

    /// Element-wise mean of curves sharing thresholds and rankers.
    pub fn mean(curves: &[QualityCurve]) -> Result<QualityCurve> {
        let first = curves.first().ok_or(Error::Empty("curve list"))?;
        let mut out = first.clone();
        for c in &curves[1..] {
            if c.thresholds != first.thresholds || c.rows.len() != first.rows.len() {
                return Err(Error::ShapeMismatch("curves differ in layout".into()));
            }
            for (o, r) in out.rows.iter_mut().zip(&c.rows) {
                if o.ranker != r.ranker {
                    return Err(Error::ShapeMismatch("curves differ in rankers".into()));
                }
                o.accuracy.iter_mut().zip(&r.accuracy).for_each(|(a, b)| *a += b);
            }
        }
        let n = curves.len() as f64;
        out.rows.iter_mut().for_each(|r| r.accuracy.iter_mut().for_each(|a| *a /= n));
        Ok(out)
    }
}

/// Settings for [`quality_curve`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveOptions {
    pub seed: u64,
    /// Independent permutations averaged for the random ranker.
    pub random_draws: usize,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self { seed: 0, random_draws: 16 }
    }
}

/// Acc@0.5 of the top-k% of `pool` under each ranker, scored against the
/// sealed gold boxes. The fused ranker normalizes over the given pool.
pub fn quality_curve(
    pool: &[PseudoLabel],
    gold: &SealedGold,
    rankers: &[Ranker],
    opts: &CurveOptions,
) -> Result<QualityCurve> {
    if pool.len() < MIN_CURVE_POOL {
        return Err(Error::PoolTooSmall(pool.len()));
    }
    let hits: Vec<bool> = pool.iter().map(|p| Ok(is_hit(&p.pred_box, gold.get(p.sample_id)?))).collect::<Result<_>>()?;
    let fused = curation::fuse(&pool.iter().map(|p| p.scores).collect::<Vec<_>>())?;
    let accuracy_of = |order: &[usize]| -> Vec<f64> {
        CURVE_THRESHOLDS
            .iter()
            .map(|&t| {
                let k = (libm::round(t as f64 / 100.0 * pool.len() as f64) as usize).max(1);
                100.0 * order[..k].iter().filter(|&&i| hits[i]).count() as f64 / k as f64
            })
            .collect()
    };
    let mut rows = Vec::with_capacity(rankers.len());
    for &ranker in rankers {
        let accuracy = match ranker {
            Ranker::Random => {
                let draws = opts.random_draws.max(1);
                let mut rng = rng::stream(opts.seed, "curve-random");
                let mut sum = alloc::vec![0.0; CURVE_THRESHOLDS.len()];
                let mut order: Vec<usize> = (0..pool.len()).collect();
                for _ in 0..draws {
                    order.shuffle(&mut rng);
                    sum.iter_mut().zip(accuracy_of(&order)).for_each(|(s, a)| *s += a);
                }
                sum.into_iter().map(|s| s / draws as f64).collect()
            }
            Ranker::Robust => accuracy_of(&curation::rank_by(pool, |p| p.scores.robust)),
            Ranker::Conf => accuracy_of(&curation::rank_by(pool, |p| p.scores.conf)),
            Ranker::Faith => accuracy_of(&curation::rank_by(pool, |p| p.scores.faith)),
            Ranker::Fused => {
                let idx: BTreeMap<u64, f64> = pool.iter().zip(&fused).map(|(p, &f)| (p.sample_id, f)).collect();
                accuracy_of(&curation::rank_by(pool, |p| idx[&p.sample_id]))
            }
            Ranker::Oracle => {
                let ious: BTreeMap<u64, f64> = pool
                    .iter()
                    .map(|p| {
                        let g = gold.get(p.sample_id)?;
                        Ok((p.sample_id, geometry::iou(&p.pred_box.to_corners(), &g.to_corners())))
                    })
                    .collect::<Result<_>>()?;
                accuracy_of(&curation::rank_by(pool, |p| ious[&p.sample_id]))
            }
        };
        rows.push(CurveRow { ranker, accuracy });
    }
    Ok(QualityCurve { thresholds: CURVE_THRESHOLDS.to_vec(), rows })
}

/// Acc@0.5 of pseudo labels against their sealed gold, in percent.
pub fn pseudo_label_accuracy(labels: &[PseudoLabel], gold: &SealedGold) -> Result<f64> {
    let pairs: Vec<(Box, Box)> = labels.iter().map(|p| Ok((p.pred_box, *gold.get(p.sample_id)?))).collect::<Result<_>>()?;
    hit_rate(&pairs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub metrics: MetricSet,
    pub stage: StageReport,
    /// Acc@0.5 of the selected pseudo labels; `None` when nothing was selected.
    pub pseudo_accuracy: Option<f64>,
}

/// One active stage from `burned_in`, ranking the pool by the fused score of
/// `metrics` only. The empty subset ranks at random.
pub fn ablation<E: Executor>(
    cfg: &TrainConfig,
    data: &RunData<'_>,
    gold: &SealedGold,
    burned_in: &TrainState,
    metrics: MetricSet,
    exec: &E,
) -> Result<AblationReport> {
    let mut state = burned_in.clone();
    let outcome = trainer::active_stage(&mut state, data, cfg, 1, metrics, exec)?;
    let chosen: Vec<PseudoLabel> = outcome.selected_labels().cloned().collect();
    let pseudo_accuracy = if chosen.is_empty() { None } else { Some(pseudo_label_accuracy(&chosen, gold)?) };
    Ok(AblationReport { metrics, stage: outcome.report, pseudo_accuracy })
}
