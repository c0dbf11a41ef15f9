//! Output-directory plumbing shared by every command: locking, digests,
//! atomic writes and the run manifest.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const LOCK_FILE: &str = ".amdiff.lock";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Writes through a sibling temp file and a rename, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn unix_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Input path to SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Unix seconds.
    pub started_at: f64,
    pub finished_at: f64,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub code_version: String,
}

/// An output directory held for the duration of one command.
pub struct RunDir {
    root: PathBuf,
    manifest: RunManifest,
}

impl RunDir {
    /// Creates `root` if needed and takes its lock; fails if another run
    /// holds it.
    pub fn open(root: &Path, command: &str) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let lock = root.join(LOCK_FILE);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&lock).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                CliError::Locked(root.to_path_buf())
            } else {
                CliError::io(&lock, e)
            }
        })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(RunDir {
            root: root.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                config: serde_json::Value::Null,
                seed: None,
                inputs: BTreeMap::new(),
                started_at: unix_seconds(),
                finished_at: 0.0,
                artifacts: Vec::new(),
                code_version: env!("CARGO_PKG_VERSION").to_string(),
            },
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn set_config(&mut self, config: serde_json::Value, seed: Option<u64>) {
        self.manifest.config = config;
        self.manifest.seed = seed;
    }

    pub fn record_input(&mut self, path: &Path, bytes: &[u8]) {
        self.manifest.inputs.insert(path.display().to_string(), sha256_hex(bytes));
    }

    /// Reads an input file and records its digest.
    pub fn input_bytes(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = read_bytes(path)?;
        self.record_input(path, &bytes);
        Ok(bytes)
    }

    pub fn input_text(&mut self, path: &Path) -> Result<String, CliError> {
        let bytes = self.input_bytes(path)?;
        String::from_utf8(bytes).map_err(|_| CliError::Input(format!("{}: not UTF-8", path.display())))
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        write_atomic(&path, bytes)?;
        if !self.manifest.artifacts.iter().any(|a| a == rel) {
            self.manifest.artifacts.push(rel.to_string());
        }
        Ok(path)
    }

    /// Writes the manifest and releases the lock.
    pub fn finish(mut self) -> Result<RunManifest, CliError> {
        self.manifest.finished_at = unix_seconds();
        let text = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&self.root.join(MANIFEST_FILE), &text)?;
        Ok(self.manifest.clone())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK_FILE));
    }
}

/// Line-delimited JSON records on standard error.
struct JsonLogger {
    level: log::LevelFilter,
}

impl log::Log for JsonLogger {
    fn enabled(&self, metadata: &log::Metadata) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &log::Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let line = serde_json::json!({
            "ts": unix_seconds(),
            "level": record.level().as_str(),
            "target": record.target(),
            "msg": record.args().to_string(),
        });
        let mut err = std::io::stderr().lock();
        let _ = writeln!(err, "{line}");
    }

    fn flush(&self) {
        let _ = std::io::stderr().flush();
    }
}

/// Installs the logger once per process. `AMDIFF_LOG` picks the level.
pub fn init_logging() {
    let level = std::env::var("AMDIFF_LOG")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(log::LevelFilter::Info);
    static LOGGER: OnceLock<JsonLogger> = OnceLock::new();
    let logger = LOGGER.get_or_init(|| JsonLogger { level });
    if log::set_logger(logger).is_ok() {
        log::set_max_level(logger.level);
    }
}
