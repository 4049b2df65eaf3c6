//! `manifest.txt`: everything needed to resume or reproduce a run.
//!
//! ```text
//! # actress run manifest
//! version = 0.1.0
//! kind = actress
//! dataset_sha256 = ...
//! test_sha256 = ...
//! checkpoint = checkpoints/stage0.ckpt
//! report = stages.csv
//! [config]
//! seed = 0
//! ...
//! ```
//!
//! Paths are relative to the run directory. The `[config]` section is a
//! complete config file.

use std::path::Path;

use crate::checkpoint::RunKind;
use crate::config::RunConfig;
use crate::error::{Error, IoContext, Result};

pub const FILE_NAME: &str = "manifest.txt";
const HEADER: &str = "# actress run manifest";

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub kind: RunKind,
    pub dataset_sha256: String,
    pub test_sha256: String,
    /// One per finished phase, in order.
    pub checkpoints: Vec<String>,
    pub reports: Vec<String>,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{HEADER}\nversion = {}\nkind = {}\ndataset_sha256 = {}\ntest_sha256 = {}\n",
            self.version,
            self.kind.name(),
            self.dataset_sha256,
            self.test_sha256
        );
        for c in &self.checkpoints {
            s.push_str(&format!("checkpoint = {c}\n"));
        }
        for r in &self.reports {
            s.push_str(&format!("report = {r}\n"));
        }
        s.push_str("[config]\n");
        s.push_str(&self.config.to_text());
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (head, config) = text.split_once("[config]\n").ok_or_else(|| Error::parse("manifest", 0, "missing [config] section"))?;
        let mut lines = head.lines().enumerate();
        if lines.next().map(|(_, l)| l) != Some(HEADER) {
            return Err(Error::parse("manifest", 1, format!("expected `{HEADER}`")));
        }
        let (mut version, mut kind, mut ds, mut ts) = (None, None, None, None);
        let (mut checkpoints, mut reports) = (Vec::new(), Vec::new());
        for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
            let (k, v) = line.split_once(" = ").ok_or_else(|| Error::parse("manifest", i + 1, "expected `key = value`"))?;
            match k {
                "version" => version = Some(v.to_string()),
                "kind" => kind = Some(RunKind::from_name(v).ok_or_else(|| Error::parse("manifest", i + 1, "unknown kind"))?),
                "dataset_sha256" => ds = Some(v.to_string()),
                "test_sha256" => ts = Some(v.to_string()),
                "checkpoint" => checkpoints.push(v.to_string()),
                "report" => reports.push(v.to_string()),
                _ => return Err(Error::parse("manifest", i + 1, format!("unknown key `{k}`"))),
            }
        }
        let (Some(version), Some(kind), Some(dataset_sha256), Some(test_sha256)) = (version, kind, ds, ts) else {
            return Err(Error::parse("manifest", 0, "incomplete manifest"));
        };
        Ok(Self { version, kind, dataset_sha256, test_sha256, checkpoints, reports, config: RunConfig::parse(config)? })
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(FILE_NAME);
        Self::parse(&std::fs::read_to_string(&path).at(&path)?)
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(FILE_NAME);
        std::fs::write(&path, self.to_text()).at(&path)
    }
}
