use std::path::Path;

use actress::checkpoint::RunKind;
use actress::config::RunConfig;
use actress::manifest::RunManifest;
use actress::threads::Threaded;
use actress::workflow::{self, Existing, RunOptions};

fn small() -> RunConfig {
    RunConfig::parse(
        "seed = 4\ndata.n = 300\ndata.test_n = 60\ntrain.burn_in_epochs = 4\ntrain.stage_epochs = 2\ntrain.stages = 2\n",
    )
    .unwrap()
}

fn opts(dir: &Path, kind: RunKind) -> RunOptions {
    RunOptions { kind, out_dir: dir.to_path_buf(), existing: Existing::Resume, png: false }
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    std::fs::read(dir.join(rel)).unwrap()
}

#[test]
fn resuming_after_an_interruption_matches_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = small();
    let full = workflow::execute(&cfg, &opts(&a, RunKind::Actress), &Threaded::new(1)).unwrap();
    workflow::execute(&cfg, &opts(&b, RunKind::Actress), &Threaded::new(1)).unwrap();

    // drop the last stage as if the process died before finishing it
    let mut m = RunManifest::load(&b).unwrap();
    let last = m.checkpoints.pop().unwrap();
    std::fs::remove_file(b.join(&last)).unwrap();
    std::fs::remove_file(b.join(workflow::pseudo_path(2))).unwrap();
    m.save(&b).unwrap();

    let resumed = workflow::execute(&cfg, &opts(&b, RunKind::Actress), &Threaded::new(1)).unwrap();
    assert_eq!(resumed, full);
    for rel in [workflow::STAGES_CSV, workflow::LOSSES_CSV, &workflow::pseudo_path(2), &last] {
        assert_eq!(read(&a, rel), read(&b, rel), "{rel}");
    }
    assert_eq!(RunManifest::load(&a).unwrap(), RunManifest::load(&b).unwrap());
}

#[test]
fn finished_runs_resume_as_a_no_op() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small();
    let first = workflow::execute(&cfg, &opts(tmp.path(), RunKind::Baseline), &Threaded::new(1)).unwrap();
    let before = read(tmp.path(), workflow::STAGES_CSV);
    let again = workflow::execute(&cfg, &opts(tmp.path(), RunKind::Baseline), &Threaded::new(1)).unwrap();
    assert_eq!(first, again);
    assert_eq!(before, read(tmp.path(), workflow::STAGES_CSV));
}

#[test]
fn a_directory_holding_another_run_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.train.stages = 0;
    workflow::execute(&cfg, &opts(tmp.path(), RunKind::Actress), &Threaded::new(1)).unwrap();
    let mut other = cfg.clone();
    other.seed = 5;
    assert!(workflow::execute(&other, &opts(tmp.path(), RunKind::Actress), &Threaded::new(1)).is_err());
    assert!(workflow::execute(&cfg, &opts(tmp.path(), RunKind::Baseline), &Threaded::new(1)).is_err());
    let refuse = RunOptions { existing: Existing::Refuse, ..opts(tmp.path(), RunKind::Actress) };
    assert!(workflow::execute(&cfg, &refuse, &Threaded::new(1)).is_err());
}

#[test]
fn results_do_not_depend_on_the_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small();
    let one = workflow::execute(&cfg, &opts(&tmp.path().join("one"), RunKind::Actress), &Threaded::new(1)).unwrap();
    let three = workflow::execute(&cfg, &opts(&tmp.path().join("three"), RunKind::Actress), &Threaded::new(3)).unwrap();
    assert_eq!(one, three);
    assert_eq!(read(&tmp.path().join("one"), &workflow::pseudo_path(1)), read(&tmp.path().join("three"), &workflow::pseudo_path(1)));
}

#[test]
fn analyze_writes_curves_ablation_and_attribution() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.train.stages = 0;
    workflow::execute(&cfg, &opts(tmp.path(), RunKind::Actress), &Threaded::new(1)).unwrap();
    let a = workflow::AnalyzeOptions {
        curves: true,
        ablation: true,
        png: true,
        dump_attribution: Some(2),
        random_draws: 4,
    };
    let out = workflow::analyze(tmp.path(), &a, &Threaded::new(1)).unwrap();
    assert_eq!(out.ablation.len(), workflow::ABLATION_SETS.len());
    let curves = String::from_utf8(read(tmp.path(), workflow::CURVES_CSV)).unwrap();
    assert_eq!(curves.lines().next(), Some("ranker,top50,top40,top30,top20,top10,auc"));
    assert_eq!(curves.lines().count(), 6);
    assert!(tmp.path().join(workflow::ABLATION_CSV).exists());
    assert!(tmp.path().join("plots/curves.png").exists());
    let m = RunManifest::load(tmp.path()).unwrap();
    assert!(m.reports.iter().any(|r| r == workflow::CURVES_CSV));
    assert_eq!(m.reports.iter().filter(|r| r.starts_with("attribution/")).count(), 2);
}
