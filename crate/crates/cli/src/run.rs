use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub enum CliError {
    /// Bad flags or arguments: exit 1.
    Usage(String),
    /// Missing, unreadable or inconsistent input data: exit 2.
    Data(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl From<icedual::Error> for CliError {
    fn from(e: icedual::Error) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

pub fn write_json(path: &Path, v: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| io_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Serialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<PathBuf>,
    pub wall_seconds: f64,
    pub threads: usize,
    pub tool_version: String,
}

/// Collects what a subcommand read and wrote, then records it next to the
/// outputs.
pub struct Run {
    subcommand: String,
    config: serde_json::Value,
    inputs: Vec<InputHash>,
    outputs: Vec<PathBuf>,
    start: Instant,
}

impl Run {
    pub fn new(subcommand: &str, config: &impl Serialize) -> Self {
        Self {
            subcommand: subcommand.into(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            inputs: Vec::new(),
            outputs: Vec::new(),
            start: Instant::now(),
        }
    }

    /// Hash an input file. Fails with a data error when it cannot be read.
    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        if self.inputs.iter().any(|i| i.path == path) {
            return Ok(());
        }
        let sha256 = sha256_file(path)?;
        self.inputs.push(InputHash {
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    /// Write the manifest atomically (temp file, then rename).
    pub fn finish(self, manifest: &Path) -> CliResult<()> {
        let m = RunManifest {
            subcommand: self.subcommand,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_seconds: self.start.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
        };
        let dir = manifest.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
        let text = serde_json::to_string_pretty(&m).map_err(|e| io_err(manifest, e))?;
        std::fs::write(tmp.path(), text + "\n").map_err(|e| io_err(tmp.path(), e))?;
        tmp.persist(manifest).map_err(|e| io_err(manifest, e.error))?;
        log::info!("{} done in {:.1}s", m.subcommand, m.wall_seconds);
        Ok(())
    }
}

/// Manifest path for a run whose output is a directory.
pub fn dir_manifest(dir: &Path) -> PathBuf {
    dir.join("run.json")
}

/// Manifest path for a run whose output is a single file.
pub fn file_manifest(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    file.with_file_name(name)
}
