//! Per-pair registration: a freshly initialized network is optimized on one
//! `(moving, fixed)` pair and nothing survives the call.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::regularize::RegularizerKind;
use crate::similarity::SimilarityKind;
use crate::tensor::filter::blur_channels;
use crate::tensor::{Graph, Tensor};
use crate::unet::{self, UNetConfig, UNetParams};
use crate::warp::{self, DisplacementField, Image, LabelMap};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_ITERATIONS: usize = 300;
/// Suggested iteration count for full-size (about 384²) images.
pub const DEFAULT_ITERATIONS_LARGE: usize = 1500;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Channel widths of the generator; the input size and seed come from the
/// registration itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub head_channels: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        let c = UNetConfig::default();
        Self {
            encoder_channels: c.encoder_channels,
            decoder_channels: c.decoder_channels,
            head_channels: c.head_channels,
        }
    }
}

impl Architecture {
    pub fn unet_config(&self, input_size: usize, seed: u64) -> UNetConfig {
        UNetConfig {
            input_size,
            encoder_channels: self.encoder_channels.clone(),
            decoder_channels: self.decoder_channels.clone(),
            head_channels: self.head_channels,
            depth: self.encoder_channels.len(),
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub iterations: usize,
    pub similarity: SimilarityKind,
    pub regularizer: RegularizerKind,
    /// Weight of the regularizer penalty.
    pub lambda: f64,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Gaussian pre-filter applied once to the fixed image.
    pub prefilter_sigma: Option<f64>,
    pub precision: Precision,
    pub architecture: Architecture,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            similarity: SimilarityKind::ssim_pcc(),
            regularizer: RegularizerKind::None,
            lambda: 0.0,
            learning_rate: DEFAULT_LEARNING_RATE,
            optimizer: Optimizer::default(),
            seed: 0,
            prefilter_sigma: None,
            precision: Precision::F32,
            architecture: Architecture::default(),
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if let Some(s) = self.prefilter_sigma {
            if !(s > 0.0) {
                return Err(Error::Config(format!("prefilter sigma must be > 0, got {s}")));
            }
        }
        match self.optimizer {
            Optimizer::Adam { beta1, beta2, eps } => {
                let ok = (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0;
                if !ok {
                    return Err(Error::Config(format!(
                        "adam needs 0 <= beta < 1 and eps > 0, got {beta1}, {beta2}, {eps}"
                    )));
                }
            }
            Optimizer::Sgd { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::Config(format!(
                        "momentum must be in [0, 1), got {momentum}"
                    )));
                }
            }
        }
        self.regularizer.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    /// `similarity + lambda · regularizer`.
    pub total: f64,
    pub similarity: f64,
    /// Unweighted penalty; zero for kinds without one or when `lambda` is 0.
    pub regularizer: f64,
}

#[derive(Clone, Debug)]
pub struct RegistrationResult {
    /// Field from the final iteration's forward pass.
    pub field: DisplacementField,
    /// Moving image warped by `field`.
    pub deformed: Image,
    pub deformed_labels: Option<LabelMap>,
    pub loss_trace: Vec<LossRecord>,
    pub wall_time: Duration,
    pub iterations_run: usize,
}

impl RegistrationResult {
    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().map_or(f64::NAN, |r| r.total)
    }
}

/// First and second moment estimates for Adam, one pair per tensor.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u32,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    check_state(params, grads, &state.m)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
    let (lr, eps) = (T::from_f64_lossy(lr), T::from_f64_lossy(eps));
    let (c1, c2) = (T::from_f64_lossy(c1), T::from_f64_lossy(c2));
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let mut_iter = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((p, &g), (m, v)) in mut_iter {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// SGD with heavy-ball momentum: `v = μ·v + g`, `p -= lr·v`.
pub fn sgd_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    velocity: &mut [Tensor<T>],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    check_state(params, grads, velocity)?;
    let (lr, mu) = (T::from_f64_lossy(lr), T::from_f64_lossy(momentum));
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((p, &g), v) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *v = mu * *v + g;
            *p = *p - lr * *v;
        }
    }
    Ok(())
}

fn check_state<T: Real>(params: &[Tensor<T>], grads: &[Tensor<T>], state: &[Tensor<T>]) -> Result<()> {
    let same = params.len() == grads.len()
        && params.len() == state.len()
        && params
            .iter()
            .zip(grads)
            .zip(state)
            .all(|((p, g), s)| p.shape() == g.shape() && p.shape() == s.shape());
    if !same {
        return Err(Error::shape(
            "optimizer",
            "parameter, gradient and state shapes differ",
        ));
    }
    Ok(())
}

/// Gaussian blur of the fixed image, applied once before optimization.
pub fn prefilter_fixed(fixed: &Image, sigma: f64) -> Result<Image> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("prefilter sigma must be > 0, got {sigma}")));
    }
    let (h, w) = fixed.dims();
    Image::new(h, w, blur_channels(fixed.values(), 1, h, w, sigma))
}

pub fn register(
    moving: &Image,
    fixed: &Image,
    labels: Option<&LabelMap>,
    config: &RegistrationConfig,
) -> Result<RegistrationResult> {
    match config.precision {
        Precision::F32 => register_with::<f32>(moving, fixed, labels, config),
        Precision::F64 => register_with::<f64>(moving, fixed, labels, config),
    }
}

enum OptimizerState<T> {
    Adam(AdamState<T>),
    Sgd(Vec<Tensor<T>>),
}

fn register_with<T: Real>(
    moving: &Image,
    fixed: &Image,
    labels: Option<&LabelMap>,
    config: &RegistrationConfig,
) -> Result<RegistrationResult> {
    config.validate()?;
    let start = Instant::now();
    let (h, w) = moving.dims();
    if fixed.dims() != (h, w) || h != w {
        return Err(Error::shape(
            "register",
            format!(
                "need square images of equal size, got {:?} and {:?}",
                moving.dims(),
                fixed.dims()
            ),
        ));
    }
    if let Some(l) = labels {
        if l.dims() != (h, w) {
            return Err(Error::shape(
                "register",
                format!("labels {:?} vs images {:?}", l.dims(), (h, w)),
            ));
        }
    }
    let fixed = match config.prefilter_sigma {
        Some(s) => prefilter_fixed(fixed, s)?,
        None => fixed.clone(),
    };
    let net = config.architecture.unet_config(h, config.seed);
    let mut params = UNetParams::<T>::init(&net)?;
    let mut opt = match config.optimizer {
        Optimizer::Adam { .. } => OptimizerState::Adam(AdamState::new(params.tensors())),
        Optimizer::Sgd { .. } => OptimizerState::Sgd(
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        ),
    };
    let moving_t = moving.to_tensor::<T>();
    let fixed_t = fixed.to_tensor::<T>();
    let use_penalty = config.lambda > 0.0;
    let lambda = T::from_f64_lossy(config.lambda);

    let mut trace = Vec::with_capacity(config.iterations);
    let mut field = None;
    for iteration in 0..config.iterations {
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let m = g.constant(moving_t.clone());
        let f = g.constant(fixed_t.clone());
        let raw = unet::forward_var(&net, &mut g, &vars, m, f)?;
        let u = config.regularizer.transform_field(&mut g, raw)?;
        let d = warp::warp_bilinear_var(&mut g, m, u)?;
        let sim = match config.similarity.loss(&mut g, d, f) {
            Err(Error::ZeroVariance { what }) if iteration > 0 => {
                return Err(Error::Diverged { iteration, what })
            }
            other => other?,
        };
        let mut loss = sim;
        let mut reg_value = 0.0;
        if use_penalty {
            if let Some(p) = config.regularizer.penalty(&mut g, u)? {
                reg_value = g.value(p).item().to_f64_lossy();
                let weighted = g.mul_scalar(p, lambda);
                loss = g.add(sim, weighted)?;
            }
        }
        let sim_value = g.value(sim).item().to_f64_lossy();
        let record = LossRecord {
            total: sim_value + config.lambda * reg_value,
            similarity: sim_value,
            regularizer: reg_value,
        };
        let current = DisplacementField::from_tensor(g.value(u))?;
        if !g.value(loss).item().is_finite() || !record.total.is_finite() || !current.is_finite() {
            return Err(Error::NonFinite { iteration });
        }
        trace.push(record);
        field = Some(current);

        let mut grads = g.backward(loss)?;
        let grads: Vec<Tensor<T>> = vars
            .iter()
            .zip(params.tensors())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        match (&mut opt, config.optimizer) {
            (OptimizerState::Adam(state), Optimizer::Adam { beta1, beta2, eps }) => adam_step(
                params.tensors_mut(),
                &grads,
                state,
                config.learning_rate,
                beta1,
                beta2,
                eps,
            )?,
            (OptimizerState::Sgd(velocity), Optimizer::Sgd { momentum }) => sgd_step(
                params.tensors_mut(),
                &grads,
                velocity,
                config.learning_rate,
                momentum,
            )?,
            _ => unreachable!("optimizer state matches its config"),
        }
    }

    let field = field.expect("at least one iteration");
    let deformed = warp::warp_bilinear(moving, &field)?;
    let deformed_labels = labels.map(|l| warp::warp_nearest(l, &field)).transpose()?;
    Ok(RegistrationResult {
        field,
        deformed,
        deformed_labels,
        iterations_run: trace.len(),
        loss_trace: trace,
        wall_time: start.elapsed(),
    })
}
