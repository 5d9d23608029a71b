//! Running an experiment into a directory, the run manifest, and replay.

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::experiments;
use crate::output::{Stage, Stages};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub version: String,
    pub schema_version: u32,
    /// SHA-256 of the running executable, when readable.
    pub build: Option<String>,
}

impl Artifact {
    pub fn current() -> Self {
        let build = std::env::current_exe().ok().and_then(|p| std::fs::read(p).ok()).map(|b| sha256(&b));
        Artifact {
            name: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            schema_version: SCHEMA_VERSION,
            build,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    ChecksFailed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: Artifact,
    pub config: ExperimentConfig,
    pub threads: usize,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    pub stages: Vec<Stage>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub status: Status,
    pub failed_checks: Vec<String>,
}

pub fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn default_output(cfg: &ExperimentConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("{}-{}", cfg.experiment.name(), cfg.seed))
}

/// Runs the experiment, writes its outputs and the manifest into `dir`.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<RunManifest> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let mut stages = Stages::default();
    let outcome = experiments::run(cfg, &mut stages).with_context(|| format!("experiment {}", cfg.experiment.name()))?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut outputs = Vec::new();
    for f in &outcome.files {
        let path = dir.join(&f.name);
        std::fs::write(&path, &f.bytes).with_context(|| format!("writing {}", path.display()))?;
        outputs.push(FileDigest {
            path: f.name.clone(),
            sha256: sha256(&f.bytes),
            bytes: f.bytes.len() as u64,
            schema: Some(f.schema.clone()),
            schema_version: Some(SCHEMA_VERSION),
        });
    }
    let inputs = outcome
        .inputs
        .iter()
        .map(|p| {
            let b = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(FileDigest { path: p.display().to_string(), sha256: sha256(&b), bytes: b.len() as u64, schema: None, schema_version: None })
        })
        .collect::<Result<_>>()?;
    let failed_checks: Vec<String> = outcome.checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
    let manifest = RunManifest {
        artifact: Artifact::current(),
        config: cfg.clone(),
        threads: rayon::current_num_threads(),
        started_unix_seconds: started,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
        stages: stages.0,
        inputs,
        outputs,
        status: if failed_checks.is_empty() { Status::Pass } else { Status::ChecksFailed },
        failed_checks,
    };
    let mut text = serde_json::to_vec_pretty(&manifest)?;
    text.push(b'\n');
    std::fs::write(dir.join(MANIFEST_NAME), text)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("invalid manifest at `{path}`: {}", e.into_inner())
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Divergence {
    pub path: String,
    pub recorded: Option<String>,
    pub replayed: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReplayReport {
    pub manifest: String,
    pub replay_dir: String,
    /// The executable differs from the recording one (outputs may still agree).
    pub build_changed: bool,
    pub identical: Vec<String>,
    pub diverged: Vec<Divergence>,
    pub inputs_changed: Vec<Divergence>,
}

impl ReplayReport {
    pub fn is_identical(&self) -> bool {
        self.diverged.is_empty() && self.inputs_changed.is_empty()
    }
}

/// Re-executes the recorded config into `dir` and compares digests file by file.
pub fn replay(manifest_path: &Path, dir: &Path) -> Result<(ReplayReport, RunManifest)> {
    let recorded = read_manifest(manifest_path)?;
    let now = Artifact::current();
    if recorded.artifact.name != now.name || recorded.artifact.version != now.version || recorded.artifact.schema_version != now.schema_version {
        bail!(
            "manifest was written by {} {} (schema {}), this is {} {} (schema {})",
            recorded.artifact.name,
            recorded.artifact.version,
            recorded.artifact.schema_version,
            now.name,
            now.version,
            now.schema_version
        );
    }
    let cfg = recorded.config.clone().resolve()?;
    let fresh = run(&cfg, dir)?;
    let by_path = |v: &[FileDigest]| v.iter().map(|d| (d.path.clone(), d.sha256.clone())).collect::<BTreeMap<_, _>>();
    let (old, new) = (by_path(&recorded.outputs), by_path(&fresh.outputs));
    let mut identical = Vec::new();
    let mut diverged = Vec::new();
    for path in old.keys().chain(new.keys().filter(|k| !old.contains_key(*k))) {
        match (old.get(path), new.get(path)) {
            (Some(a), Some(b)) if a == b => identical.push(path.clone()),
            (a, b) => diverged.push(Divergence { path: path.clone(), recorded: a.cloned(), replayed: b.cloned() }),
        }
    }
    let (old_in, new_in) = (by_path(&recorded.inputs), by_path(&fresh.inputs));
    let inputs_changed = old_in
        .keys()
        .chain(new_in.keys().filter(|k| !old_in.contains_key(*k)))
        .filter(|p| old_in.get(*p) != new_in.get(*p))
        .map(|p| Divergence { path: p.clone(), recorded: old_in.get(p).cloned(), replayed: new_in.get(p).cloned() })
        .collect();
    let report = ReplayReport {
        manifest: manifest_path.display().to_string(),
        replay_dir: dir.display().to_string(),
        build_changed: recorded.artifact.build != now.build,
        identical,
        diverged,
        inputs_changed,
    };
    Ok((report, fresh))
}
