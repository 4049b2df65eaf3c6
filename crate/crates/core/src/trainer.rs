//! Burn-in, active retraining and the supervised baseline.
//!
//! A run is a sequence of phases. Phase 0 is burn-in on the labeled split.
//! Phase `m` (1-based) is the `m`-th active stage: score the unlabeled pool
//! with the current model, keep the top `n_percent` by fused score, redraw
//! the backbone and head parameters, and train on labeled data mixed with
//! the freshly selected pseudo labels. Pseudo labels never outlive their
//! stage.
//!
//! All randomness of phase `m` comes from streams indexed by `m`, so a run
//! resumed from the checkpoint after phase `m - 1` continues bit-identically.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::curation::{self, MetricSet, PseudoLabel, ScoringOptions};
use crate::error::{Error, Result};
use crate::evalreport::{self, Accuracy};
use crate::exec::Executor;
use crate::model::{
    init_params, loss_backward, optimizer_step, reinit_partitions, AdamW, Gradients, LossWeights, ModelConfig,
    ModelParams, OptimizerState, Partition,
};
use crate::rng::{self, StreamRng};
use crate::synthdata::{augment, Sample};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Burn-in epochs.
    pub burn_in_epochs: usize,
    /// Epochs per active stage.
    pub stage_epochs: usize,
    /// Number of active stages.
    pub stages: usize,
    pub batch_size: usize,
    /// Labeled : pseudo mix of each batch.
    pub labeled_ratio: (u32, u32),
    pub lr: f64,
    /// Fraction of each phase's epochs after which the learning rate drops.
    pub lr_drop_at: f64,
    pub lr_drop_factor: f64,
    pub optimizer: AdamW,
    pub loss: LossWeights,
    /// Loss weight of pseudo-labeled samples relative to labeled ones.
    pub pseudo_weight: f64,
    /// Share of the unlabeled pool promoted per stage, in percent.
    pub n_percent: f64,
    pub metrics: MetricSet,
    pub scoring: ScoringOptions,
    /// Geometric augmentation during active stages.
    pub augment: bool,
    /// Geometric augmentation during burn-in.
    pub augment_burn_in: bool,
    pub reinit: Reinit,
    pub seed: u64,
}

/// What an active stage re-initializes before training. The fusion
/// partition is always kept.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Reinit {
    /// Backbone back to its values at the start of the run, fresh draws for
    /// the heads.
    #[default]
    Initial,
    /// Fresh draws for the backbone and heads.
    Fresh,
    /// Fresh draws for the heads only.
    Heads,
    Off,
}

impl Reinit {
    pub fn name(self) -> &'static str {
        match self {
            Reinit::Initial => "initial",
            Reinit::Fresh => "fresh",
            Reinit::Heads => "heads",
            Reinit::Off => "off",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Reinit::Initial, Reinit::Fresh, Reinit::Heads, Reinit::Off].into_iter().find(|r| r.name() == s)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            burn_in_epochs: 60,
            stage_epochs: 25,
            stages: 5,
            batch_size: 16,
            labeled_ratio: (3, 1),
            lr: 1e-3,
            lr_drop_at: 0.8,
            lr_drop_factor: 0.1,
            optimizer: AdamW::default(),
            loss: LossWeights::default(),
            pseudo_weight: 1.0,
            n_percent: 10.0,
            metrics: MetricSet::ALL,
            scoring: ScoringOptions::default(),
            augment: true,
            augment_burn_in: true,
            reinit: Reinit::Initial,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(String::from(m)));
        self.model.validate()?;
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        let (l, p) = self.labeled_ratio;
        if l == 0 || l < p {
            return bad("labeled_ratio must have a positive labeled part no smaller than the pseudo part");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.lr_drop_at) || self.lr_drop_factor.is_nan() || self.lr_drop_factor <= 0.0 {
            return bad("lr_drop_at must be in [0, 1] and lr_drop_factor positive");
        }
        if !(self.pseudo_weight >= 0.0 && self.pseudo_weight.is_finite()) {
            return bad("pseudo_weight must be non-negative");
        }
        if !(self.n_percent > 0.0 && self.n_percent <= 100.0) {
            return Err(Error::InvalidPercent(self.n_percent));
        }
        Ok(())
    }

    /// Labeled samples in a full mixed batch: `ceil(l / (l + p) * batch)`.
    pub fn labeled_per_batch(&self) -> usize {
        let (l, p) = (self.labeled_ratio.0 as usize, self.labeled_ratio.1 as usize);
        (self.batch_size * l).div_ceil(l + p)
    }

    /// Learning rate of `epoch` within a phase of `epochs` epochs.
    pub fn lr_at(&self, epoch: usize, epochs: usize) -> f64 {
        let drop = libm::round(self.lr_drop_at * epochs as f64) as usize;
        if epoch >= drop {
            self.lr * self.lr_drop_factor
        } else {
            self.lr
        }
    }
}

/// Model parameters with their optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub opt: OptimizerState,
}

impl TrainState {
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        let params = init_params(&cfg.model, rng::substream(cfg.seed, "init"))?;
        let opt = OptimizerState::new(&params);
        Ok(Self { params, opt })
    }
}

/// Per-phase record. Stage 0 is burn-in.
#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub stage: usize,
    pub pool_size: usize,
    pub selected: usize,
    /// Mean fused score of the selected labels; 0 when nothing was selected.
    pub mean_fused: f64,
    pub steps: usize,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Test accuracy at the end of the phase, when a test set was given.
    pub accuracy: Option<Accuracy>,
}

/// Training inputs. Unlabeled samples must carry neither a box nor a target
/// index.
#[derive(Clone, Copy, Debug)]
pub struct RunData<'a> {
    pub labeled: &'a [Sample],
    pub unlabeled: &'a [Sample],
    pub test: &'a [Sample],
}

impl RunData<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.labeled.is_empty() {
            return Err(Error::Empty("labeled split"));
        }
        if let Some(s) = self.labeled.iter().find(|s| s.gold.is_none()) {
            return Err(Error::MissingTarget(s.id));
        }
        check_unlabeled(self.unlabeled)
    }
}

fn check_unlabeled(unlabeled: &[Sample]) -> Result<()> {
    match unlabeled.iter().find(|s| s.gold.is_some() || s.query.target_index.is_some()) {
        Some(s) => Err(Error::GoldLeak(s.id)),
        None => Ok(()),
    }
}

/// Receives every finished phase. Errors abort the run.
pub trait Observer {
    fn pool_scored(&mut self, _stage: usize, _pool: &[PseudoLabel], _selected: &[bool]) -> Result<()> {
        Ok(())
    }

    fn phase_finished(&mut self, _report: &StageReport, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
#[derive(Clone, Copy, Debug, Default)]
pub struct Silent;

impl Observer for Silent {}

/// Position of a batch member in its source list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Labeled(usize),
    Pseudo(usize),
}

/// Endless sampler without replacement that reshuffles when exhausted.
#[derive(Clone, Debug)]
pub struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    pub fn new(n: usize) -> Self {
        Self { order: (0..n).collect(), pos: n }
    }

    pub fn reshuffle<R: Rng>(&mut self, rng: &mut R) {
        self.order.shuffle(rng);
        self.pos = 0;
    }

    pub fn next<R: Rng>(&mut self, rng: &mut R) -> Option<usize> {
        if self.order.is_empty() {
            return None;
        }
        if self.pos == self.order.len() {
            self.reshuffle(rng);
        }
        self.pos += 1;
        Some(self.order[self.pos - 1])
    }
}

/// One batch: `labeled_per_batch` labeled samples and the remainder pseudo,
/// each drawn without replacement. An empty pseudo pool gives an all-labeled
/// batch.
pub fn compose_batch<R: Rng>(n_labeled: usize, n_pseudo: usize, cfg: &TrainConfig, rng: &mut R) -> Vec<Slot> {
    let (nl, np) = if n_pseudo == 0 {
        (cfg.batch_size, 0)
    } else {
        let nl = cfg.labeled_per_batch();
        (nl, cfg.batch_size - nl)
    };
    let pick = |n: usize, k: usize, rng: &mut R| rand::seq::index::sample(rng, n, k.min(n)).into_vec();
    let mut batch: Vec<Slot> = pick(n_labeled, nl, rng).into_iter().map(Slot::Labeled).collect();
    batch.extend(pick(n_pseudo, np, rng).into_iter().map(Slot::Pseudo));
    batch
}

/// Batches covering every labeled sample once. Pseudo samples fill each
/// batch up to the configured mix; over the epoch their count tracks
/// `labeled * p / l`.
pub fn epoch_plan<R: Rng>(
    n_labeled: usize,
    pseudo: &mut Cycler,
    n_pseudo: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Vec<Vec<Slot>> {
    let mut labeled: Vec<usize> = (0..n_labeled).collect();
    labeled.shuffle(rng);
    if n_pseudo > 0 {
        pseudo.reshuffle(rng);
    }
    let per = if n_pseudo == 0 { cfg.batch_size } else { cfg.labeled_per_batch() };
    let (l, p) = (cfg.labeled_ratio.0 as f64, cfg.labeled_ratio.1 as f64);
    let mut batches = Vec::with_capacity(n_labeled.div_ceil(per));
    let (mut seen, mut drawn) = (0usize, 0usize);
    for chunk in labeled.chunks(per) {
        let mut batch: Vec<Slot> = chunk.iter().map(|&i| Slot::Labeled(i)).collect();
        seen += chunk.len();
        if n_pseudo > 0 {
            let due = libm::round(seen as f64 * p / l) as usize;
            let room = (cfg.batch_size - chunk.len()).min(n_pseudo);
            let take = due.saturating_sub(drawn).min(room);
            for _ in 0..take {
                batch.push(Slot::Pseudo(pseudo.next(rng).expect("pseudo pool is nonempty")));
            }
            drawn += take;
        }
        batches.push(batch);
    }
    batches
}

/// Steps of one epoch over `n_labeled` samples.
pub fn steps_per_epoch(n_labeled: usize, has_pseudo: bool, cfg: &TrainConfig) -> usize {
    let per = if has_pseudo { cfg.labeled_per_batch() } else { cfg.batch_size };
    n_labeled.div_ceil(per)
}

#[derive(Clone, Copy)]
enum BatchSource {
    /// Epochs cover the labeled split once, mixed with pseudo labels.
    Epochs,
    /// Fixed number of all-labeled batches of full size per epoch.
    FixedSteps(usize),
}

struct Phase<'a> {
    index: usize,
    name: &'a str,
    epochs: usize,
    augment: bool,
    source: BatchSource,
}

/// Gradient of the batch-mean loss and that mean.
fn batch_gradient(
    params: &ModelParams,
    batch: &[Sample],
    weights: &[f64],
    cfg: &TrainConfig,
    grads: &mut Gradients,
) -> Result<f64> {
    grads.data.fill(0.0);
    let inv = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (s, &w) in batch.iter().zip(weights) {
        let (loss, _) = loss_backward(params, s, &cfg.loss, grads, w * inv)?;
        total += w * loss.total;
    }
    Ok(total * inv)
}

fn train_phase(
    state: &mut TrainState,
    labeled: &[Sample],
    pseudo: &[Sample],
    cfg: &TrainConfig,
    phase: &Phase<'_>,
) -> Result<(usize, Vec<f64>)> {
    let mut batch_rng = rng::stream_indexed(cfg.seed, "train", phase.index as u64);
    let mut aug_rng = rng::stream_indexed(cfg.seed, "augment", phase.index as u64);
    let mut grads = Gradients::zeros_like(&state.params);
    let mut pseudo_cycle = Cycler::new(pseudo.len());
    let mut labeled_cycle = Cycler::new(labeled.len());
    let mut losses = Vec::with_capacity(phase.epochs);
    let mut steps = 0;
    for epoch in 0..phase.epochs {
        let lr = cfg.lr_at(epoch, phase.epochs);
        let plan: Vec<Vec<Slot>> = match phase.source {
            BatchSource::Epochs => epoch_plan(labeled.len(), &mut pseudo_cycle, pseudo.len(), cfg, &mut batch_rng),
            BatchSource::FixedSteps(n) => (0..n)
                .map(|_| {
                    (0..cfg.batch_size.min(labeled.len()))
                        .map(|_| Slot::Labeled(labeled_cycle.next(&mut batch_rng).expect("labeled split is nonempty")))
                        .collect()
                })
                .collect(),
        };
        let mut epoch_loss = 0.0;
        for slots in &plan {
            let mut batch = Vec::with_capacity(slots.len());
            let mut weights = Vec::with_capacity(slots.len());
            for slot in slots {
                let (s, w) = match *slot {
                    Slot::Labeled(i) => (&labeled[i], 1.0),
                    Slot::Pseudo(i) => (&pseudo[i], cfg.pseudo_weight),
                };
                batch.push(if phase.augment { augment(s, &mut aug_rng) } else { s.clone() });
                weights.push(w);
            }
            let loss = match batch_gradient(&state.params, &batch, &weights, cfg, &mut grads) {
                Ok(l) => l,
                Err(Error::NonFiniteLoss(l)) => {
                    return Err(Error::Diverged { phase: String::from(phase.name), epoch, loss: l })
                }
                Err(e) => return Err(e),
            };
            optimizer_step(&mut state.params, &grads, &mut state.opt, lr, &cfg.optimizer)?;
            epoch_loss += loss;
            steps += 1;
        }
        let mean = epoch_loss / plan.len().max(1) as f64;
        log::debug!("{} epoch {epoch}: loss {mean:.5} lr {lr:e}", phase.name);
        losses.push(mean);
    }
    if !state.params.is_finite() {
        return Err(Error::Diverged { phase: String::from(phase.name), epoch: phase.epochs, loss: f64::NAN });
    }
    Ok((steps, losses))
}

fn evaluate<E: Executor>(p: &ModelParams, test: &[Sample], exec: &E) -> Result<Option<Accuracy>> {
    if test.is_empty() {
        Ok(None)
    } else {
        evalreport::acc_at_05(p, test, exec).map(Some)
    }
}

/// Supervised training on the labeled split for the burn-in epochs.
pub fn burn_in<E: Executor>(state: &mut TrainState, data: &RunData<'_>, cfg: &TrainConfig, exec: &E) -> Result<StageReport> {
    cfg.validate()?;
    data.validate()?;
    let phase = Phase {
        index: 0,
        name: "burn-in",
        epochs: cfg.burn_in_epochs,
        augment: cfg.augment_burn_in,
        source: BatchSource::Epochs,
    };
    let (steps, epoch_losses) = train_phase(state, data.labeled, &[], cfg, &phase)?;
    Ok(StageReport {
        stage: 0,
        pool_size: 0,
        selected: 0,
        mean_fused: 0.0,
        steps,
        epoch_losses,
        accuracy: evaluate(&state.params, data.test, exec)?,
    })
}

/// Scores every unlabeled sample with the current model. Parameters are
/// not modified.
pub fn infer_unlabeled<E: Executor>(
    params: &ModelParams,
    unlabeled: &[Sample],
    opts: &ScoringOptions,
    exec: &E,
) -> Result<Vec<PseudoLabel>> {
    check_unlabeled(unlabeled)?;
    exec.map(unlabeled.len(), |i| curation::score_sample(params, &unlabeled[i], opts)).into_iter().collect()
}

/// Result of one active stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome {
    pub report: StageReport,
    /// Scored pool in unlabeled order, `i_act` filled.
    pub pool: Vec<PseudoLabel>,
    /// Parallel to `pool`.
    pub selected: Vec<bool>,
}

impl StageOutcome {
    pub fn selected_labels(&self) -> impl Iterator<Item = &PseudoLabel> {
        self.pool.iter().zip(&self.selected).filter(|(_, &s)| s).map(|(p, _)| p)
    }
}

/// Ranks the scored pool by `metrics` (uniform random keys for the empty
/// set) and marks the top `n_percent` of the unlabeled base.
fn select(pool: &mut [PseudoLabel], metrics: MetricSet, cfg: &TrainConfig, stage: usize) -> Result<Vec<bool>> {
    if pool.is_empty() {
        return Ok(Vec::new());
    }
    if metrics.is_empty() {
        let mut r: StreamRng = rng::stream_indexed(cfg.seed, "random-rank", stage as u64);
        pool.iter_mut().for_each(|p| p.i_act = r.random::<f64>());
    } else {
        curation::assign_fused(pool, metrics)?;
    }
    let chosen = curation::sample_top(pool, cfg.n_percent, pool.len())?;
    let ids: alloc::collections::BTreeSet<u64> = chosen.iter().map(|p| p.sample_id).collect();
    Ok(pool.iter().map(|p| ids.contains(&p.sample_id)).collect())
}

/// Active stage `stage` (1-based): score, select, re-initialize and train.
pub fn active_stage<E: Executor>(
    state: &mut TrainState,
    data: &RunData<'_>,
    cfg: &TrainConfig,
    stage: usize,
    metrics: MetricSet,
    exec: &E,
) -> Result<StageOutcome> {
    cfg.validate()?;
    data.validate()?;
    let mut pool = infer_unlabeled(&state.params, data.unlabeled, &cfg.scoring, exec)?;
    let selected = select(&mut pool, metrics, cfg, stage)?;
    let pseudo: Vec<Sample> = data
        .unlabeled
        .iter()
        .zip(&pool)
        .zip(&selected)
        .filter(|(_, &s)| s)
        .map(|((u, p), _)| u.with_pseudo_box(p.pred_box))
        .collect();
    if pseudo.is_empty() {
        log::warn!("stage {stage}: no pseudo labels selected; training on labeled data only");
    }
    let mean_fused = if pseudo.is_empty() {
        0.0
    } else {
        pool.iter().zip(&selected).filter(|(_, &s)| s).map(|(p, _)| p.i_act).sum::<f64>() / pseudo.len() as f64
    };

    state.params = reinit_for_stage(&state.params, cfg, stage);
    state.opt.reset_partitions(&state.params, reinit_partitions_of(cfg.reinit));

    let phase = Phase {
        index: stage,
        name: "active",
        epochs: cfg.stage_epochs,
        augment: cfg.augment,
        source: BatchSource::Epochs,
    };
    let (steps, epoch_losses) = train_phase(state, data.labeled, &pseudo, cfg, &phase)?;
    let report = StageReport {
        stage,
        pool_size: pool.len(),
        selected: pseudo.len(),
        mean_fused,
        steps,
        epoch_losses,
        accuracy: evaluate(&state.params, data.test, exec)?,
    };
    Ok(StageOutcome { report, pool, selected })
}

fn reinit_partitions_of(r: Reinit) -> &'static [Partition] {
    match r {
        Reinit::Initial | Reinit::Fresh => &[Partition::Backbone, Partition::Heads],
        Reinit::Heads => &[Partition::Heads],
        Reinit::Off => &[],
    }
}

/// Parameters at the start of active stage `stage`, before training.
pub fn reinit_for_stage(p: &ModelParams, cfg: &TrainConfig, stage: usize) -> ModelParams {
    let fresh = rng::substream_indexed(cfg.seed, "reinit", stage as u64);
    match cfg.reinit {
        Reinit::Initial => {
            let p = reinit_partitions(p, rng::substream(cfg.seed, "init"), &[Partition::Backbone]);
            reinit_partitions(&p, fresh, &[Partition::Heads])
        }
        r => reinit_partitions(p, fresh, reinit_partitions_of(r)),
    }
}

/// State after a number of finished phases.
#[derive(Clone, Debug, PartialEq)]
pub struct Progress {
    pub state: TrainState,
    /// One report per finished phase, burn-in first.
    pub reports: Vec<StageReport>,
}

impl Progress {
    pub fn phases_done(&self) -> usize {
        self.reports.len()
    }
}

/// Burn-in followed by `cfg.stages` active stages.
pub fn run_actress<E: Executor, O: Observer>(
    cfg: &TrainConfig,
    data: &RunData<'_>,
    exec: &E,
    observer: &mut O,
) -> Result<Progress> {
    resume_actress(cfg, data, exec, observer, None)
}

/// Continues a run from `from`, or starts one when `None`.
pub fn resume_actress<E: Executor, O: Observer>(
    cfg: &TrainConfig,
    data: &RunData<'_>,
    exec: &E,
    observer: &mut O,
    from: Option<Progress>,
) -> Result<Progress> {
    cfg.validate()?;
    data.validate()?;
    let mut progress = match from {
        Some(p) => p,
        None => Progress { state: TrainState::init(cfg)?, reports: Vec::new() },
    };
    if progress.phases_done() == 0 {
        let report = burn_in(&mut progress.state, data, cfg, exec)?;
        observer.phase_finished(&report, &progress.state)?;
        progress.reports.push(report);
    }
    for stage in progress.phases_done()..=cfg.stages {
        let outcome = active_stage(&mut progress.state, data, cfg, stage, cfg.metrics, exec)?;
        observer.pool_scored(stage, &outcome.pool, &outcome.selected)?;
        observer.phase_finished(&outcome.report, &progress.state)?;
        progress.reports.push(outcome.report);
    }
    Ok(progress)
}

/// Steps the active stage `stage` of an ACTRESS run on `data` takes.
pub fn active_stage_steps(data: &RunData<'_>, cfg: &TrainConfig) -> Result<usize> {
    let budget = curation::selection_budget(cfg.n_percent, data.unlabeled.len())?;
    let has_pseudo = budget.min(data.unlabeled.len()) > 0;
    Ok(cfg.stage_epochs * steps_per_epoch(data.labeled.len(), has_pseudo, cfg))
}

/// Labeled-only training with the same phase structure, learning-rate
/// schedule and step count as [`run_actress`], without pseudo labels or
/// re-initialization.
pub fn run_supervised_baseline<E: Executor, O: Observer>(
    cfg: &TrainConfig,
    data: &RunData<'_>,
    exec: &E,
    observer: &mut O,
) -> Result<Progress> {
    resume_supervised_baseline(cfg, data, exec, observer, None)
}

pub fn resume_supervised_baseline<E: Executor, O: Observer>(
    cfg: &TrainConfig,
    data: &RunData<'_>,
    exec: &E,
    observer: &mut O,
    from: Option<Progress>,
) -> Result<Progress> {
    cfg.validate()?;
    data.validate()?;
    let mut progress = match from {
        Some(p) => p,
        None => Progress { state: TrainState::init(cfg)?, reports: Vec::new() },
    };
    if progress.phases_done() == 0 {
        let report = burn_in(&mut progress.state, data, cfg, exec)?;
        observer.phase_finished(&report, &progress.state)?;
        progress.reports.push(report);
    }
    let per_epoch = active_stage_steps(data, cfg)? / cfg.stage_epochs.max(1);
    for stage in progress.phases_done()..=cfg.stages {
        let phase = Phase {
            index: stage,
            name: "baseline",
            epochs: cfg.stage_epochs,
            augment: cfg.augment,
            source: BatchSource::FixedSteps(per_epoch),
        };
        let (steps, epoch_losses) = train_phase(&mut progress.state, data.labeled, &[], cfg, &phase)?;
        let report = StageReport {
            stage,
            pool_size: 0,
            selected: 0,
            mean_fused: 0.0,
            steps,
            epoch_losses,
            accuracy: evaluate(&progress.state.params, data.test, exec)?,
        };
        observer.phase_finished(&report, &progress.state)?;
        progress.reports.push(report);
    }
    Ok(progress)
}

/// Parameters before and after a stage differ only outside the fusion
/// partition when the stage trains for zero epochs.
pub fn fusion_unchanged(before: &ModelParams, after: &ModelParams) -> bool {
    before.partition_values(Partition::Fusion) == after.partition_values(Partition::Fusion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::synthdata::{generate_dataset, split, GenSpec, SplitSpec};
    use rand::SeedableRng;

    fn small_cfg() -> TrainConfig {
        TrainConfig { burn_in_epochs: 1, stage_epochs: 1, stages: 1, batch_size: 8, ..TrainConfig::default() }
    }

    #[test]
    fn batch_mix() {
        let cfg = TrainConfig { batch_size: 8, ..TrainConfig::default() };
        let mut r = StreamRng::seed_from_u64(1);
        let b = compose_batch(50, 20, &cfg, &mut r);
        assert_eq!(b.iter().filter(|s| matches!(s, Slot::Labeled(_))).count(), 6);
        assert_eq!(b.iter().filter(|s| matches!(s, Slot::Pseudo(_))).count(), 2);
        let b = compose_batch(50, 0, &cfg, &mut r);
        assert_eq!(b.len(), 8);
        assert!(b.iter().all(|s| matches!(s, Slot::Labeled(_))));
    }

    #[test]
    fn epoch_ratio_within_one() {
        let mut r = StreamRng::seed_from_u64(2);
        for bs in [4usize, 8, 10, 16, 17, 32] {
            let cfg = TrainConfig { batch_size: bs, ..TrainConfig::default() };
            for (nl, np) in [(100usize, 40usize), (37, 5), (5, 100), (64, 9)] {
                let mut cyc = Cycler::new(np);
                let plan = epoch_plan(nl, &mut cyc, np, &cfg, &mut r);
                let l = plan.iter().flatten().filter(|s| matches!(s, Slot::Labeled(_))).count();
                let p = plan.iter().flatten().count() - l;
                assert_eq!(l, nl);
                if bs % 4 == 0 && np >= bs - cfg.labeled_per_batch() {
                    assert!((3 * p as i64 - l as i64).abs() <= 3, "{bs} {nl} {np}: {l} {p}");
                }
                assert!(plan.iter().all(|b| b.len() <= bs));
                assert_eq!(plan.len(), steps_per_epoch(nl, true, &cfg));
            }
        }
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(47, 60), 1e-3);
        assert!((cfg.lr_at(48, 60) - 1e-4).abs() < 1e-18);
        assert_eq!(cfg.lr_at(19, 25), 1e-3);
        assert!((cfg.lr_at(20, 25) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn zero_epoch_burn_in_keeps_params() {
        let data = generate_dataset(&GenSpec { n: 20, grid: 8, seed: 3 }).unwrap();
        let cfg = TrainConfig { burn_in_epochs: 0, ..small_cfg() };
        let mut st = TrainState::init(&cfg).unwrap();
        let before = st.clone();
        let d = RunData { labeled: &data, unlabeled: &[], test: &[] };
        let rep = burn_in(&mut st, &d, &cfg, &Sequential).unwrap();
        assert_eq!(st, before);
        assert_eq!(rep.steps, 0);
    }

    #[test]
    fn gold_leak_rejected() {
        let data = generate_dataset(&GenSpec { n: 20, grid: 8, seed: 3 }).unwrap();
        let d = RunData { labeled: &data[..10], unlabeled: &data[10..], test: &[] };
        assert!(matches!(d.validate(), Err(Error::GoldLeak(_))));
        let p = TrainState::init(&small_cfg()).unwrap().params;
        assert!(matches!(
            infer_unlabeled(&p, &data[10..], &ScoringOptions::default(), &Sequential),
            Err(Error::GoldLeak(_))
        ));
    }

    #[test]
    fn zero_epoch_stage_only_reinitializes() {
        let data = generate_dataset(&GenSpec { n: 30, grid: 8, seed: 4 }).unwrap();
        let sp = split(&data, &SplitSpec { label_fraction: 0.5, seed: 4 }).unwrap();
        let cfg = TrainConfig { stage_epochs: 0, reinit: Reinit::Fresh, ..small_cfg() };
        let d = RunData { labeled: &sp.labeled, unlabeled: &sp.unlabeled, test: &[] };
        let mut st = TrainState::init(&cfg).unwrap();
        let before = st.params.clone();
        let out = active_stage(&mut st, &d, &cfg, 1, MetricSet::ALL, &Sequential).unwrap();
        assert!(fusion_unchanged(&before, &st.params));
        assert_eq!(st.params, crate::model::reinit_selective(&before, rng::substream_indexed(cfg.seed, "reinit", 1)));
        assert_eq!(out.report.pool_size, 15);
        assert_eq!(out.report.selected, 2);
        assert_eq!(st.opt.steps_of(Partition::Heads), 0);
    }

    #[test]
    fn initial_reinit_restores_the_starting_backbone() {
        let cfg = TrainConfig { reinit: Reinit::Initial, ..small_cfg() };
        let start = TrainState::init(&cfg).unwrap().params;
        let mut trained = start.clone();
        trained.data.iter_mut().for_each(|v| *v += 0.25);
        let out = reinit_for_stage(&trained, &cfg, 2);
        assert_eq!(out.partition_values(Partition::Backbone), start.partition_values(Partition::Backbone));
        assert_eq!(out.partition_values(Partition::Fusion), trained.partition_values(Partition::Fusion));
        let heads = out.partition_values(Partition::Heads);
        assert!(heads.iter().zip(trained.partition_values(Partition::Heads)).all(|(a, b)| *a != b));
        assert_ne!(heads, reinit_for_stage(&trained, &cfg, 3).partition_values(Partition::Heads));
        assert_eq!(out, reinit_for_stage(&trained, &cfg, 2));
    }

    #[test]
    fn reinit_off_and_heads() {
        let base = small_cfg();
        let p = TrainState::init(&base).unwrap().params;
        assert_eq!(reinit_for_stage(&p, &TrainConfig { reinit: Reinit::Off, ..base.clone() }, 1), p);
        let h = reinit_for_stage(&p, &TrainConfig { reinit: Reinit::Heads, ..base }, 1);
        assert_eq!(h.partition_values(Partition::Backbone), p.partition_values(Partition::Backbone));
        assert_ne!(h.partition_values(Partition::Heads), p.partition_values(Partition::Heads));
        for r in [Reinit::Initial, Reinit::Fresh, Reinit::Heads, Reinit::Off] {
            assert_eq!(Reinit::from_name(r.name()), Some(r));
        }
    }
}
