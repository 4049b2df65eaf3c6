//! Run directories: data preparation, training with per-phase checkpoints,
//! resumption, and post-hoc analysis.
//!
//! ```text
//! <run-dir>/
//!   manifest.txt
//!   checkpoints/stage0.ckpt ... stage<K>.ckpt
//!   stages.csv  losses.csv
//!   pseudo/stage1.csv ... stage<K>.csv      (actress runs)
//!   curves.csv  ablation.csv                (analyze)
//!   plots/*.png                             (--emit png)
//!   attribution/sample<id>.csv              (analyze --dump-attribution)
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use actress_core::attribution;
use actress_core::curation::{MetricSet, PseudoLabel};
use actress_core::evalreport::{self, AblationReport, CurveOptions, QualityCurve, Ranker, SealedGold};
use actress_core::exec::Executor;
use actress_core::rng;
use actress_core::synthdata::{self, Sample, SplitSpec};
use actress_core::trainer::{self, Observer, Progress, RunData, StageReport, TrainState};

use crate::checkpoint::{self, Checkpoint, RunKind};
use crate::config::RunConfig;
use crate::dataset;
use crate::error::{Error, IoContext, Result};
use crate::manifest::RunManifest;
use crate::plot;
use crate::reports;

pub const STAGES_CSV: &str = "stages.csv";
pub const LOSSES_CSV: &str = "losses.csv";
pub const CURVES_CSV: &str = "curves.csv";
pub const ABLATION_CSV: &str = "ablation.csv";

pub fn checkpoint_path(stage: usize) -> String {
    format!("checkpoints/stage{stage}.ckpt")
}

pub fn pseudo_path(stage: usize) -> String {
    format!("pseudo/stage{stage}.csv")
}

/// Metric subsets compared by the ablation, single metrics first.
pub const ABLATION_SETS: [MetricSet; 5] = [MetricSet::FAITH, MetricSet::ROBUST, MetricSet::CONF, MetricSet::ALL, MetricSet::NONE];

/// Writes through a temporary file so an interrupted run never leaves a
/// truncated file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).at(&tmp)?;
    std::fs::rename(&tmp, path).at(path)
}

/// Pool, split and test set of a configuration.
pub struct Prepared {
    pub labeled: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Gold boxes of the unlabeled split, for evaluation only.
    pub gold: SealedGold,
    pub dataset_sha256: String,
    pub test_sha256: String,
}

impl Prepared {
    pub fn data(&self) -> RunData<'_> {
        RunData { labeled: &self.labeled, unlabeled: &self.unlabeled, test: &self.test }
    }

    /// Fails when the data differs from what `m` was recorded with.
    pub fn check_against(&self, m: &RunManifest) -> Result<()> {
        if self.dataset_sha256 != m.dataset_sha256 || self.test_sha256 != m.test_sha256 {
            return Err(Error::Invalid(format!(
                "data does not match the manifest (dataset {} vs {}, test {} vs {})",
                self.dataset_sha256, m.dataset_sha256, self.test_sha256, m.test_sha256
            )));
        }
        Ok(())
    }
}

fn load_or_generate(path: &Option<PathBuf>, spec: &synthdata::GenSpec) -> Result<Vec<Sample>> {
    match path {
        Some(p) => Ok(dataset::load(p)?.0),
        None => Ok(synthdata::generate_dataset(spec)?),
    }
}

/// Loads or generates the pool and the test set and splits the pool.
/// Hashes are taken over the canonical text form, so a generated pool and
/// the same pool read back from disk hash alike.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let pool = load_or_generate(&cfg.data.path, &cfg.pool_spec())?;
    let test = load_or_generate(&cfg.data.test_path, &cfg.test_spec())?;
    if test.iter().any(|s| s.gold.is_none()) {
        return Err(Error::Invalid("every test sample needs a gold box".into()));
    }
    let split = synthdata::split(&pool, &SplitSpec { label_fraction: cfg.data.label_fraction, seed: cfg.split_seed() })?;
    Ok(Prepared {
        dataset_sha256: dataset::sha256_hex(dataset::to_text(&pool).as_bytes()),
        test_sha256: dataset::sha256_hex(dataset::to_text(&test).as_bytes()),
        labeled: split.labeled,
        unlabeled: split.unlabeled,
        test,
        gold: split.sealed,
    })
}

/// Persists every finished phase: checkpoint, report CSVs and manifest.
struct RunDirObserver<'a> {
    dir: &'a Path,
    manifest: RunManifest,
    reports: Vec<StageReport>,
    png: bool,
}

impl RunDirObserver<'_> {
    fn note_report(&mut self, rel: &str) {
        if !self.manifest.reports.iter().any(|r| r == rel) {
            self.manifest.reports.push(rel.to_string());
        }
    }
}

impl Observer for RunDirObserver<'_> {
    fn pool_scored(&mut self, stage: usize, pool: &[PseudoLabel], selected: &[bool]) -> actress_core::Result<()> {
        let rel = pseudo_path(stage);
        write_atomic(&self.dir.join(&rel), reports::pseudo_csv(pool, selected).as_bytes()).map_err(to_core)?;
        self.note_report(&rel);
        Ok(())
    }

    fn phase_finished(&mut self, report: &StageReport, state: &TrainState) -> actress_core::Result<()> {
        self.reports.push(report.clone());
        let rel = checkpoint_path(report.stage);
        let ck = Checkpoint {
            kind: self.manifest.kind,
            progress: Progress { state: state.clone(), reports: self.reports.clone() },
        };
        checkpoint::save(&self.dir.join(&rel), &ck).map_err(to_core)?;
        write_atomic(&self.dir.join(STAGES_CSV), reports::stages_csv(&self.reports).as_bytes()).map_err(to_core)?;
        write_atomic(&self.dir.join(LOSSES_CSV), reports::losses_csv(&self.reports).as_bytes()).map_err(to_core)?;
        self.note_report(STAGES_CSV);
        self.note_report(LOSSES_CSV);
        if self.png {
            plot_stages(self.dir, &self.reports).map_err(to_core)?;
        }
        self.manifest.checkpoints.truncate(report.stage);
        self.manifest.checkpoints.push(rel);
        self.manifest.save(self.dir).map_err(to_core)?;
        log::info!(
            "phase {} done: {} steps, final loss {:.4}, test acc {}",
            report.stage,
            report.steps,
            report.epoch_losses.last().copied().unwrap_or(f64::NAN),
            report.accuracy.map_or_else(|| "-".into(), |a| format!("{:.2}", a.regression))
        );
        Ok(())
    }
}

/// Observer failures travel through the core error type.
fn to_core(e: Error) -> actress_core::Error {
    actress_core::Error::Observer(e.to_string())
}

fn plot_stages(dir: &Path, reports: &[StageReport]) -> Result<()> {
    let acc: Vec<(f64, f64)> =
        reports.iter().filter_map(|r| r.accuracy.map(|a| (r.stage as f64, a.regression))).collect();
    plot::lines(&dir.join("plots/stages.png"), &[acc])?;
    let mut x = 0.0;
    let mut loss = Vec::new();
    for r in reports {
        for &l in &r.epoch_losses {
            loss.push((x, l));
            x += 1.0;
        }
    }
    plot::lines(&dir.join("plots/losses.png"), &[loss])
}

/// How [`execute`] treats an existing run directory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Existing {
    /// Continue from the last checkpoint when the manifest matches.
    Resume,
    /// Refuse to touch a directory that already holds a manifest.
    Refuse,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub kind: RunKind,
    pub out_dir: PathBuf,
    pub existing: Existing,
    pub png: bool,
}

/// Trains `cfg` into `opts.out_dir`, resuming when allowed and possible.
pub fn execute<E: Executor>(cfg: &RunConfig, opts: &RunOptions, exec: &E) -> Result<Progress> {
    let prepared = prepare(cfg)?;
    execute_prepared(cfg, &prepared, opts, exec)
}

pub fn execute_prepared<E: Executor>(cfg: &RunConfig, prepared: &Prepared, opts: &RunOptions, exec: &E) -> Result<Progress> {
    let dir = opts.out_dir.as_path();
    std::fs::create_dir_all(dir).at(dir)?;
    let fresh = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        kind: opts.kind,
        dataset_sha256: prepared.dataset_sha256.clone(),
        test_sha256: prepared.test_sha256.clone(),
        checkpoints: Vec::new(),
        reports: Vec::new(),
        config: cfg.clone(),
    };
    let mut from = None;
    let mut manifest = fresh.clone();
    if dir.join(crate::manifest::FILE_NAME).exists() {
        let old = RunManifest::load(dir)?;
        if opts.existing == Existing::Refuse {
            return Err(Error::Invalid(format!("{} already holds a run", dir.display())));
        }
        if old.kind != opts.kind || old.config != *cfg {
            return Err(Error::Invalid(format!(
                "{} holds a different run; choose another --out-dir",
                dir.display()
            )));
        }
        prepared.check_against(&old)?;
        if let Some(last) = old.checkpoints.last() {
            let ck = checkpoint::load(&dir.join(last))?;
            if ck.kind != opts.kind {
                return Err(Error::Invalid(format!("{last} is a {} checkpoint", ck.kind.name())));
            }
            log::info!("resuming after {} finished phases", ck.progress.phases_done());
            from = Some(ck.progress);
        }
        manifest = old;
    }
    manifest.save(dir)?;
    let reports = from.as_ref().map(|p| p.reports.clone()).unwrap_or_default();
    let mut observer = RunDirObserver { dir, manifest, reports, png: opts.png };
    let train = cfg.resolved_train();
    let data = prepared.data();
    let progress = match opts.kind {
        RunKind::Actress => trainer::resume_actress(&train, &data, exec, &mut observer, from)?,
        RunKind::Baseline => trainer::resume_supervised_baseline(&train, &data, exec, &mut observer, from)?,
    };
    Ok(progress)
}

/// Settings for [`analyze`].
#[derive(Clone, Debug)]
pub struct AnalyzeOptions {
    pub curves: bool,
    pub ablation: bool,
    pub png: bool,
    /// Write attribution grids for this many unlabeled samples.
    pub dump_attribution: Option<usize>,
    pub random_draws: usize,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self { curves: true, ablation: false, png: false, dump_attribution: None, random_draws: 16 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Analysis {
    pub curve: Option<QualityCurve>,
    pub ablation: Vec<AblationReport>,
}

/// Quality curve of the burn-in model's pseudo labels.
pub fn curve_for<E: Executor>(
    cfg: &RunConfig,
    prepared: &Prepared,
    burned_in: &TrainState,
    random_draws: usize,
    exec: &E,
) -> Result<QualityCurve> {
    let train = cfg.resolved_train();
    let pool = trainer::infer_unlabeled(&burned_in.params, &prepared.unlabeled, &train.scoring, exec)?;
    let opts = CurveOptions { seed: rng::substream(cfg.seed, "curve"), random_draws };
    Ok(evalreport::quality_curve(&pool, &prepared.gold, &Ranker::STANDARD, &opts)?)
}

/// One active stage from the burn-in model per metric subset.
pub fn ablation_for<E: Executor>(
    cfg: &RunConfig,
    prepared: &Prepared,
    burned_in: &TrainState,
    sets: &[MetricSet],
    exec: &E,
) -> Result<Vec<AblationReport>> {
    let train = cfg.resolved_train();
    sets.iter()
        .map(|&m| {
            log::info!("ablation with metrics {}", m.label());
            Ok(evalreport::ablation(&train, &prepared.data(), &prepared.gold, burned_in, m, exec)?)
        })
        .collect()
}

/// Curves, ablation and attribution dumps from the burn-in checkpoint of
/// `run_dir`. Results are written next to the run's own reports.
pub fn analyze<E: Executor>(run_dir: &Path, opts: &AnalyzeOptions, exec: &E) -> Result<Analysis> {
    let mut manifest = RunManifest::load(run_dir)?;
    let cfg = manifest.config.clone();
    let prepared = prepare(&cfg)?;
    prepared.check_against(&manifest)?;
    let first = manifest
        .checkpoints
        .first()
        .ok_or_else(|| Error::Invalid(format!("{} has no burn-in checkpoint yet", run_dir.display())))?;
    let burned_in = checkpoint::load(&run_dir.join(first))?.progress.state;
    let mut out = Analysis::default();
    let mut written = Vec::new();

    if opts.curves {
        let curve = curve_for(&cfg, &prepared, &burned_in, opts.random_draws, exec)?;
        write_atomic(&run_dir.join(CURVES_CSV), reports::curves_csv(&curve).as_bytes())?;
        written.push(CURVES_CSV.to_string());
        if opts.png {
            let series: Vec<Vec<(f64, f64)>> = curve
                .rows
                .iter()
                .map(|r| curve.thresholds.iter().zip(&r.accuracy).map(|(&t, &a)| (t as f64, a)).collect())
                .collect();
            plot::lines(&run_dir.join("plots/curves.png"), &series)?;
        }
        out.curve = Some(curve);
    }
    if opts.ablation {
        let reps = ablation_for(&cfg, &prepared, &burned_in, &ABLATION_SETS, exec)?;
        write_atomic(&run_dir.join(ABLATION_CSV), reports::ablation_csv(&reps).as_bytes())?;
        written.push(ABLATION_CSV.to_string());
        if opts.png {
            let acc: Vec<f64> = reps.iter().map(|r| r.stage.accuracy.map_or(0.0, |a| a.regression)).collect();
            plot::bars(&run_dir.join("plots/ablation.png"), &acc)?;
        }
        out.ablation = reps;
    }
    if let Some(n) = opts.dump_attribution {
        for s in prepared.unlabeled.iter().take(n) {
            let (map, _) = attribution::attribution_map(&burned_in.params, s, cfg.train.scoring.normalize_relevance)?;
            let rel = format!("attribution/sample{}.csv", s.id);
            write_atomic(&run_dir.join(&rel), attribution_csv(&map).as_bytes())?;
            if opts.png {
                plot::heatmap(&run_dir.join(format!("plots/attribution{}.png", s.id)), map.grid, &map.values)?;
            }
            written.push(rel);
        }
    }
    for rel in written {
        if !manifest.reports.contains(&rel) {
            manifest.reports.push(rel);
        }
    }
    manifest.save(run_dir)?;
    Ok(out)
}

/// One grid row per line, comma separated.
pub fn attribution_csv(map: &attribution::AttributionMap) -> String {
    let mut s = String::new();
    for row in map.values.chunks(map.grid) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}
