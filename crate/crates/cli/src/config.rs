//! Registration flags shared by `register` and `sweep`.

use clap::Args;
use warpforge::engine::{Precision, RegistrationConfig};
use warpforge::regularize::DEFAULT_ALPHA;
use warpforge::{RegularizerKind, SimilarityKind};

use crate::error::{CliError, CliResult};

/// Smoothing width used by `--reg gauss` when `--sigma` is absent.
pub const DEFAULT_SIGMA: f64 = 1.0;
/// Penalty weight used by penalty kinds when `--lambda` is absent.
pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Args, Debug, Clone, Default)]
pub struct RunFlags {
    /// Similarity loss: mse, pcc, cc, mi, ssim or ssim+pcc [default: ssim+pcc]
    #[arg(long)]
    pub loss: Option<String>,
    /// Regularizer: none, diffusion, tv, diffjac or gauss [default: none]
    #[arg(long)]
    pub reg: Option<String>,
    /// Penalty weight [default: 1 for penalty kinds, 0 otherwise]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Jacobian weight inside diffjac [default: 1]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Field smoothing width for gauss, in pixels [default: 1]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Optimizer iterations [default: 300]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Gaussian pre-filter width for the fixed image
    #[arg(long)]
    pub prefilter_sigma: Option<f64>,
    /// Arithmetic precision: f32 or f64 [default: f32]
    #[arg(long)]
    pub precision: Option<String>,
}

impl RunFlags {
    pub fn any_set(&self) -> bool {
        self.loss.is_some()
            || self.reg.is_some()
            || self.lambda.is_some()
            || self.alpha.is_some()
            || self.sigma.is_some()
            || self.iters.is_some()
            || self.lr.is_some()
            || self.prefilter_sigma.is_some()
            || self.precision.is_some()
    }

    /// Resolve into a full configuration with every default filled in.
    pub fn resolve(&self, seed: u64) -> CliResult<RegistrationConfig> {
        let defaults = RegistrationConfig::default();
        let similarity = match &self.loss {
            Some(s) => s.parse::<SimilarityKind>()?,
            None => defaults.similarity,
        };
        let regularizer = RegularizerKind::from_name(
            self.reg.as_deref().unwrap_or("none"),
            self.alpha.unwrap_or(DEFAULT_ALPHA),
            self.sigma.unwrap_or(DEFAULT_SIGMA),
        )?;
        let penalized = !matches!(
            regularizer,
            RegularizerKind::None | RegularizerKind::GaussianSmoothing { .. }
        );
        if !penalized && self.lambda.is_some_and(|l| l != 0.0) {
            return Err(CliError::usage(format!(
                "--lambda has no effect with --reg {}",
                regularizer.name()
            )));
        }
        let lambda = match self.lambda {
            Some(l) => l,
            None if penalized => DEFAULT_LAMBDA,
            None => 0.0,
        };
        let precision = match self.precision.as_deref() {
            None | Some("f32") => Precision::F32,
            Some("f64") => Precision::F64,
            Some(other) => {
                return Err(CliError::usage(format!(
                    "unknown precision {other:?}, expected f32 or f64"
                )))
            }
        };
        let config = RegistrationConfig {
            iterations: self.iters.unwrap_or(defaults.iterations),
            similarity,
            regularizer,
            lambda,
            learning_rate: self.lr.unwrap_or(defaults.learning_rate),
            seed,
            prefilter_sigma: self.prefilter_sigma,
            precision,
            ..defaults
        };
        config.validate()?;
        Ok(config)
    }
}
