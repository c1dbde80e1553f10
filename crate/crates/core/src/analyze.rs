//! Deformation quality and registration accuracy: Jacobian determinants,
//! fold counts, evaluation metrics, grid rendering and parameter sweeps.

use serde::{Deserialize, Serialize};

use crate::engine::{register, RegistrationConfig, RegistrationResult};
use crate::error::{Error, Result};
use crate::regularize::{det_grid, RegularizerKind};
use crate::similarity::{self, SsimParams};
use crate::warp::{warp_bilinear, DisplacementField, Image};

/// `det(I + ∇u)` on the `(H-1)×(W-1)` sites with both forward neighbours.
#[derive(Clone, Debug, PartialEq)]
pub struct DetGrid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl DetGrid {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

pub fn jacobian_determinants(u: &DisplacementField) -> DetGrid {
    let (h, w) = u.dims();
    DetGrid {
        height: h.saturating_sub(1),
        width: w.saturating_sub(1),
        values: det_grid(u.planes(), h, w),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    /// Sites with `det <= 0`.
    pub fold_count: usize,
    /// `100 · fold_count / (H·W)`.
    pub fold_percent: f64,
    pub det_min: f64,
    pub det_max: f64,
    pub det_mean: f64,
}

pub fn fold_report(u: &DisplacementField) -> FoldReport {
    let grid = jacobian_determinants(u);
    let fold_count = grid.values.iter().filter(|&&d| d <= 0.0).count();
    let pixels = u.height() * u.width();
    let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for &d in &grid.values {
        lo = lo.min(d);
        hi = hi.max(d);
        sum += d;
    }
    let (det_min, det_max, det_mean) = if grid.values.is_empty() {
        (1.0, 1.0, 1.0)
    } else {
        (lo, hi, sum / grid.values.len() as f64)
    };
    FoldReport {
        fold_count,
        fold_percent: if pixels == 0 {
            0.0
        } else {
            100.0 * fold_count as f64 / pixels as f64
        },
        det_min,
        det_max,
        det_mean,
    }
}

/// Registration accuracy as reported: SSIM, and MSE on the 0–255 scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub ssim: f64,
    pub mse_255: f64,
}

pub const MSE_SCALE: f64 = 255.0 * 255.0;

pub fn eval_metrics(deformed: &Image, fixed: &Image) -> Result<EvalMetrics> {
    Ok(EvalMetrics {
        ssim: similarity::ssim(deformed, fixed, SsimParams::default())?,
        mse_255: similarity::mse(deformed, fixed)? * MSE_SCALE,
    })
}

/// Regular grid (lines of intensity 1 every `spacing` pixels on 0) warped by
/// `u` with the same sampler as the images.
pub fn render_grid(u: &DisplacementField, spacing: usize) -> Result<Image> {
    if spacing < 2 {
        return Err(Error::Config(format!("grid spacing must be >= 2, got {spacing}")));
    }
    let (h, w) = u.dims();
    let grid = Image::from_fn(h, w, |y, x| {
        if y % spacing == 0 || x % spacing == 0 {
            1.0
        } else {
            0.0
        }
    });
    warp_bilinear(&grid, u)
}

/// Diverging colour map of a determinant grid as 8-bit RGB: white at 1,
/// blue for expansion, red for compression, saturated red at `det <= 0`.
pub fn jacobian_rgb(grid: &DetGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(3 * grid.values.len());
    for &d in &grid.values {
        let t = (d - 1.0).clamp(-1.0, 1.0);
        let fade = (255.0 * (1.0 - t.abs())).round() as u8;
        if t < 0.0 {
            out.extend_from_slice(&[255, fade, fade]);
        } else {
            out.extend_from_slice(&[fade, fade, 255]);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Regularizer weight.
    Lambda,
    /// Gaussian smoothing width.
    Sigma,
    /// Jacobian weight of the combined regularizer.
    Alpha,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Sigma => "sigma",
            SweepParam::Alpha => "alpha",
        }
    }

    /// Default swept quantity for a regularizer: `sigma` for smoothing,
    /// `lambda` otherwise.
    pub fn default_for(kind: &RegularizerKind) -> Self {
        match kind {
            RegularizerKind::GaussianSmoothing { .. } => SweepParam::Sigma,
            _ => SweepParam::Lambda,
        }
    }

    /// Copy of `base` with this parameter set to `value`.
    pub fn apply(&self, base: &RegistrationConfig, value: f64) -> Result<RegistrationConfig> {
        let mut cfg = base.clone();
        match (self, &mut cfg.regularizer) {
            (SweepParam::Lambda, _) => cfg.lambda = value,
            (SweepParam::Sigma, RegularizerKind::GaussianSmoothing { sigma }) => *sigma = value,
            (SweepParam::Alpha, RegularizerKind::DiffusionJacobian { alpha }) => *alpha = value,
            (p, kind) => {
                return Err(Error::Config(format!(
                    "{} cannot be swept for regularizer {}",
                    p.name(),
                    kind.name()
                )))
            }
        }
        Ok(cfg)
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepParam::Lambda),
            "sigma" => Ok(SweepParam::Sigma),
            "alpha" => Ok(SweepParam::Alpha),
            other => Err(Error::Config(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub param: String,
    pub value: f64,
    pub seed: u64,
    pub ssim: f64,
    /// MSE on the 0–255 scale.
    pub mse: f64,
    pub fold_count: usize,
    pub fold_percent: f64,
    /// `ok`, or the error that stopped this cell.
    pub status: String,
}

pub const SWEEP_CSV_HEADER: &str = "param,value,seed,ssim,mse,fold_count,fold_percent";

impl SweepRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    /// One CSV line. Failed cells keep their key columns and leave the
    /// metrics as `NaN` with an empty fold count.
    pub fn csv_row(&self) -> String {
        let key = format!("{},{},{}", self.param, self.value, self.seed);
        if !self.is_ok() {
            return format!("{key},NaN,NaN,,NaN");
        }
        format!(
            "{key},{},{},{},{}",
            self.ssim, self.mse, self.fold_count, self.fold_percent
        )
    }
}

pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
pub struct SweepPlan {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug)]
pub struct CellOutcome {
    pub record: SweepRecord,
    /// Present when the cell registered successfully.
    pub result: Option<RegistrationResult>,
}

/// Run one registration per `(value, seed)` cell on up to `jobs` worker
/// threads. Failed cells are recorded, not fatal. Output is sorted by value
/// then seed, so it does not depend on scheduling.
pub fn sweep(
    moving: &Image,
    fixed: &Image,
    base: &RegistrationConfig,
    plan: &SweepPlan,
    jobs: usize,
) -> Result<Vec<CellOutcome>> {
    if plan.values.is_empty() || plan.seeds.is_empty() {
        return Err(Error::Config(
            "sweep grid needs at least one value and one seed".into(),
        ));
    }
    if let Some(v) = plan.values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Config(format!("sweep value {v} is not finite")));
    }
    let cells: Vec<(f64, u64)> = plan
        .values
        .iter()
        .flat_map(|&v| plan.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let run = |&(value, seed): &(f64, u64)| run_cell(moving, fixed, base, plan.param, value, seed);
    let mut outcomes: Vec<CellOutcome> = if jobs <= 1 {
        cells.iter().map(run).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("could not start {jobs} workers: {e}")))?;
        pool.install(|| cells.par_iter().map(run).collect())
    };
    outcomes.sort_by(|a, b| {
        a.record
            .value
            .total_cmp(&b.record.value)
            .then(a.record.seed.cmp(&b.record.seed))
    });
    Ok(outcomes)
}

fn run_cell(
    moving: &Image,
    fixed: &Image,
    base: &RegistrationConfig,
    param: SweepParam,
    value: f64,
    seed: u64,
) -> CellOutcome {
    let failed = |status: String| CellOutcome {
        record: SweepRecord {
            param: param.name().to_string(),
            value,
            seed,
            ssim: f64::NAN,
            mse: f64::NAN,
            fold_count: 0,
            fold_percent: f64::NAN,
            status,
        },
        result: None,
    };
    let attempt = || -> Result<(EvalMetrics, FoldReport, RegistrationResult)> {
        let mut cfg = param.apply(base, value)?;
        cfg.seed = seed;
        let result = register(moving, fixed, None, &cfg)?;
        let metrics = eval_metrics(&result.deformed, fixed)?;
        Ok((metrics, fold_report(&result.field), result))
    };
    match attempt() {
        Ok((metrics, folds, result)) => CellOutcome {
            record: SweepRecord {
                param: param.name().to_string(),
                value,
                seed,
                ssim: metrics.ssim,
                mse: metrics.mse_255,
                fold_count: folds.fold_count,
                fold_percent: folds.fold_percent,
                status: "ok".to_string(),
            },
            result: Some(result),
        },
        Err(e) => failed(format!("error: {e}")),
    }
}

/// Spearman rank correlation, ties sharing their average rank. Zero when
/// either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::shape(
            "spearman",
            format!(
                "need two equal-length samples of at least 2, got {} and {}",
                a.len(),
                b.len()
            ),
        ));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        // 1-based average of positions start..end.
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            out[i] = rank;
        }
        start = end;
    }
    out
}
