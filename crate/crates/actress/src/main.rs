//! `actress` command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use actress::checkpoint::RunKind;
use actress::config::RunConfig;
use actress::manifest::RunManifest;
use actress::threads::Threaded;
use actress::workflow::{self, AnalyzeOptions, Existing, RunOptions};
use actress::{dataset, reports};
use actress_core::synthdata::{self, GenSpec};

#[derive(Parser)]
#[command(name = "actress", version, about = "Semi-supervised visual grounding with attribution-guided pseudo labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic grounding dataset.
    GenData(GenArgs),
    /// Train on the labeled split only (no active stages).
    BurnIn(TrainArgs),
    /// Burn-in followed by the active retraining stages.
    Run(TrainArgs),
    /// Labeled-only training with the same step budget as `run`.
    Baseline(TrainArgs),
    /// Pseudo-label quality curves, metric ablation and attribution dumps.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; the dataset is written to `<out>/dataset.txt`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Emit {
    Csv,
    Png,
}

#[derive(Args)]
struct TrainArgs {
    /// Config file; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rerun the configuration recorded in a manifest.
    #[arg(long, conflicts_with = "config")]
    manifest: Option<PathBuf>,
    /// Overrides the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides one config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Same as `--set scoring.confidence_combine=...`.
    #[arg(long, value_name = "product|sum")]
    confidence_combine: Option<String>,
    /// Same as `--set scoring.normalize_relevance=true`.
    #[arg(long)]
    relevance_normalize: bool,
    #[arg(long, env = "ACTRESS_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Worker threads for scoring and evaluation; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
    /// `csv` writes reports only; `png` adds plots.
    #[arg(long, value_enum, default_value_t = Emit::Csv)]
    emit: Emit,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// Pseudo-label quality per ranker at the top-k% thresholds.
    #[arg(long)]
    curves: bool,
    /// One active stage per metric subset from the burn-in checkpoint.
    #[arg(long)]
    ablation: bool,
    /// Write attribution grids for the first N unlabeled samples.
    #[arg(long, value_name = "N")]
    dump_attribution: Option<usize>,
    /// Permutations averaged for the random ranker.
    #[arg(long, default_value_t = 16)]
    random_draws: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, value_enum, default_value_t = Emit::Csv)]
    emit: Emit,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(&a),
        Command::BurnIn(a) => train(&a, RunKind::Actress, true),
        Command::Run(a) => train(&a, RunKind::Actress, false),
        Command::Baseline(a) => train(&a, RunKind::Baseline, false),
        Command::Analyze(a) => analyze(&a),
    }
}

fn gen_data(a: &GenArgs) -> anyhow::Result<()> {
    let samples = synthdata::generate_dataset(&GenSpec { n: a.n, grid: a.grid, seed: a.seed })?;
    let path = a.out.join("dataset.txt");
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let sha = dataset::save(&path, &samples)?;
    println!("{}  {}", sha, path.display());
    Ok(())
}

fn resolve_config(a: &TrainArgs, burn_in_only: bool) -> anyhow::Result<(RunConfig, Option<RunManifest>)> {
    let (mut cfg, manifest) = match (&a.config, &a.manifest) {
        (Some(p), _) => (RunConfig::load(p)?, None),
        (None, Some(p)) => {
            let dir = if p.is_dir() { p.as_path() } else { p.parent().unwrap_or(Path::new(".")) };
            let m = RunManifest::load(dir)?;
            (m.config.clone(), Some(m))
        }
        (None, None) => (RunConfig::default(), None),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    for s in &a.sets {
        let (k, v) = s.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got `{s}`"))?;
        cfg.set(k.trim(), v.trim()).map_err(|m| anyhow::anyhow!("--set {s}: {m}"))?;
    }
    if let Some(c) = &a.confidence_combine {
        cfg.set("scoring.confidence_combine", c).map_err(|m| anyhow::anyhow!("--confidence-combine: {m}"))?;
    }
    if a.relevance_normalize {
        cfg.train.scoring.normalize_relevance = true;
    }
    if burn_in_only {
        cfg.train.stages = 0;
    }
    cfg.validate()?;
    Ok((cfg, manifest))
}

fn train(a: &TrainArgs, kind: RunKind, burn_in_only: bool) -> anyhow::Result<()> {
    let (cfg, manifest) = resolve_config(a, burn_in_only)?;
    if a.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let Some(out_dir) = a.out_dir.clone() else {
        bail!("--out-dir (or ACTRESS_OUT_DIR) is required");
    };
    if let Some(m) = &manifest {
        if m.kind != kind {
            bail!("the manifest records a {} run", m.kind.name());
        }
    }
    log::info!("config:\n{}", cfg.to_text());
    let prepared = workflow::prepare(&cfg)?;
    if let Some(m) = &manifest {
        prepared.check_against(m)?;
    }
    let opts = RunOptions { kind, out_dir, existing: Existing::Resume, png: a.emit == Emit::Png };
    let progress = workflow::execute_prepared(&cfg, &prepared, &opts, &Threaded::new(a.threads))?;
    print!("{}", reports::stages_csv(&progress.reports));
    Ok(())
}

fn analyze(a: &AnalyzeArgs) -> anyhow::Result<()> {
    let opts = AnalyzeOptions {
        curves: a.curves || (!a.ablation && a.dump_attribution.is_none()),
        ablation: a.ablation,
        png: a.emit == Emit::Png,
        dump_attribution: a.dump_attribution,
        random_draws: a.random_draws,
    };
    let out = workflow::analyze(&a.run_dir, &opts, &Threaded::new(a.threads))?;
    if let Some(c) = &out.curve {
        print!("{}", reports::curves_csv(c));
    }
    if !out.ablation.is_empty() {
        print!("{}", reports::ablation_csv(&out.ablation));
    }
    Ok(())
}
