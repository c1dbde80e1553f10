//! Output files shared by the subcommands: JSON documents, digests, run
//! manifests, metrics and loss traces.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use warpforge::analyze::{EvalMetrics, FoldReport};
use warpforge::engine::{LossRecord, RegistrationResult};

use crate::error::{CliError, CliResult};

pub const TOOL: &str = "warpforge";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(warpforge::Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("output types always serialize");
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::manifest(path, e.to_string()))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    /// `moving`, `fixed`, `labels` or `field`.
    pub role: String,
    /// Absolute path at the time of the run.
    pub path: PathBuf,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(role: &str, path: &Path) -> CliResult<Self> {
        let sha256 = sha256_file(path)?;
        let path = std::fs::canonicalize(path).map_err(|e| io_error(path, e))?;
        Ok(Self {
            role: role.to_string(),
            path,
            sha256,
        })
    }
}

/// Everything needed to repeat a run: the resolved configuration with every
/// default filled in, input digests, tool version, seed and timing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

impl RunManifest {
    pub fn new<C: Serialize>(
        command: &str,
        seed: Option<u64>,
        config: &C,
        inputs: Vec<InputDigest>,
        started: f64,
    ) -> Self {
        Self {
            tool: TOOL.to_string(),
            version: VERSION.to_string(),
            command: command.to_string(),
            seed,
            config: serde_json::to_value(config).expect("configs always serialize"),
            inputs,
            started_unix: started,
            finished_unix: unix_now(),
        }
    }

    pub fn input(&self, role: &str) -> Option<&InputDigest> {
        self.inputs.iter().find(|i| i.role == role)
    }
}

/// `metrics.json`. Fields that do not apply to a command are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ssim: f64,
    pub mse_255: f64,
    pub fold_count: usize,
    pub fold_percent: f64,
    pub iterations: Option<usize>,
    pub final_loss: Option<f64>,
    pub seed: Option<u64>,
}

impl Metrics {
    pub fn new(eval: &EvalMetrics, folds: &FoldReport) -> Self {
        Self {
            ssim: eval.ssim,
            mse_255: eval.mse_255,
            fold_count: folds.fold_count,
            fold_percent: folds.fold_percent,
            iterations: None,
            final_loss: None,
            seed: None,
        }
    }

    pub fn with_run(mut self, result: &RegistrationResult, seed: u64) -> Self {
        self.iterations = Some(result.iterations_run);
        self.final_loss = Some(result.final_loss());
        self.seed = Some(seed);
        self
    }
}

pub fn loss_trace_csv(trace: &[LossRecord]) -> String {
    let mut out = String::from("iteration,total,similarity,regularizer\n");
    for (i, r) in trace.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            i + 1,
            r.total,
            r.similarity,
            r.regularizer
        ));
    }
    out
}
