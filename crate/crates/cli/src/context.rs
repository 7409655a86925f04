use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Bad flags or settings detected by the command layer.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// 1 for validation and usage errors, 2 for failures while doing the work.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<serde_json::Error>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<debias_core::Error>() {
            return if e.is_validation() { 1 } else { 2 };
        }
    }
    2
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    argv: Vec<String>,
    version: &'static str,
    seed: Option<u64>,
    jobs: Option<usize>,
    config: &'a serde_json::Value,
    inputs: &'a BTreeMap<String, String>,
    outputs: Vec<String>,
    status: &'static str,
    exit_code: u8,
    error: Option<String>,
    wall_time_secs: f64,
}

/// Per-invocation state: global flags, recorded inputs and outputs and the
/// effective settings, written to `run_manifest.json` on exit.
pub struct Context {
    pub command: &'static str,
    pub seed: Option<u64>,
    out: Option<PathBuf>,
    config_path: Option<PathBuf>,
    manifest_dir: Option<PathBuf>,
    effective: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

impl Context {
    pub fn new(command: &'static str, seed: Option<u64>, out: Option<PathBuf>, config_path: Option<PathBuf>) -> Self {
        Self {
            command,
            seed,
            out,
            config_path,
            manifest_dir: None,
            effective: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    /// `--out`, or `default` when absent.
    pub fn out_dir(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    /// Directory receiving `run_manifest.json` and `effective_config.json`.
    pub fn set_run_dir(&mut self, dir: &Path) {
        self.manifest_dir = Some(dir.to_path_buf());
    }

    /// Settings from `--config`, or `None` without one.
    pub fn config_file<T: DeserializeOwned>(&mut self) -> anyhow::Result<Option<T>> {
        let Some(path) = self.config_path.clone() else {
            return Ok(None);
        };
        let text = fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
        self.record_input(&path)?;
        let value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(Some(value))
    }

    pub fn settings<T: DeserializeOwned + Default>(&mut self) -> anyhow::Result<T> {
        Ok(self.config_file()?.unwrap_or_default())
    }

    /// Hashes an input file into the run manifest; errors if it is missing.
    pub fn record_input(&mut self, path: &Path) -> anyhow::Result<()> {
        if !path.is_file() {
            return Err(debias_core::Error::MissingFile(path.to_path_buf()).into());
        }
        let hash = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    pub fn record_output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    /// Stores the effective settings and dumps them to `effective_config.json`.
    pub fn record_settings<T: Serialize>(&mut self, settings: &T, dir: &Path) -> anyhow::Result<()> {
        self.effective = serde_json::to_value(settings)?;
        fs::create_dir_all(dir)?;
        let path = dir.join("effective_config.json");
        fs::write(&path, serde_json::to_string_pretty(&self.effective)? + "\n")?;
        self.record_output(path);
        Ok(())
    }

    pub fn write_run_manifest(
        &self,
        jobs: Option<usize>,
        wall_time_secs: f64,
        result: &anyhow::Result<()>,
        exit_code: u8,
    ) -> anyhow::Result<()> {
        let dir = self
            .manifest_dir
            .clone()
            .or_else(|| self.out.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir)?;
        let manifest = RunManifest {
            command: self.command,
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            jobs,
            config: &self.effective,
            inputs: &self.inputs,
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            status: if result.is_ok() { "success" } else { "failure" },
            exit_code,
            error: result.as_ref().err().map(|e| format!("{e:#}")),
            wall_time_secs,
        };
        fs::write(
            dir.join("run_manifest.json"),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(())
    }
}
