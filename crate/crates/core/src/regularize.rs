//! Deformation regularizers and the Gaussian field-smoothing alternative.
//!
//! All stencils are one-sided forward differences. Sites without a forward
//! neighbour contribute nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Graph, SpatialAxis, Tensor, Var};
use crate::warp::DisplacementField;

pub const DEFAULT_ALPHA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegularizerKind {
    None,
    Diffusion,
    Tv,
    /// Diffusion plus `alpha` times the non-negative Jacobian penalty.
    DiffusionJacobian {
        alpha: f64,
    },
    /// Smooth the network output before warping instead of penalizing it.
    GaussianSmoothing {
        sigma: f64,
    },
}

impl RegularizerKind {
    /// Name used on the command line and in reports.
    pub fn name(&self) -> &'static str {
        match self {
            RegularizerKind::None => "none",
            RegularizerKind::Diffusion => "diffusion",
            RegularizerKind::Tv => "tv",
            RegularizerKind::DiffusionJacobian { .. } => "diffjac",
            RegularizerKind::GaussianSmoothing { .. } => "gauss",
        }
    }

    /// Build from a command-line name. `alpha` and `sigma` are only read by
    /// the kinds that use them.
    pub fn from_name(name: &str, alpha: f64, sigma: f64) -> Result<Self> {
        let kind = match name {
            "none" => RegularizerKind::None,
            "diffusion" => RegularizerKind::Diffusion,
            "tv" => RegularizerKind::Tv,
            "diffjac" => RegularizerKind::DiffusionJacobian { alpha },
            "gauss" => RegularizerKind::GaussianSmoothing { sigma },
            other => return Err(Error::Config(format!("unknown regularizer {other:?}"))),
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RegularizerKind::DiffusionJacobian { alpha } if !(alpha >= 0.0) => {
                Err(Error::Config(format!("alpha must be >= 0, got {alpha}")))
            }
            RegularizerKind::GaussianSmoothing { sigma } if !(sigma > 0.0) => {
                Err(Error::Config(format!("smoothing sigma must be > 0, got {sigma}")))
            }
            _ => Ok(()),
        }
    }

    /// Field actually used for warping: the smoothed field for
    /// `GaussianSmoothing`, `u` itself otherwise.
    pub fn transform_field<T: Real>(&self, g: &mut Graph<T>, u: Var) -> Result<Var> {
        match *self {
            RegularizerKind::GaussianSmoothing { sigma } => g.gaussian_blur(u, sigma),
            _ => Ok(u),
        }
    }

    /// Penalty `R(u)` before weighting, or `None` for kinds without one.
    pub fn penalty<T: Real>(&self, g: &mut Graph<T>, u: Var) -> Result<Option<Var>> {
        Ok(match *self {
            RegularizerKind::None | RegularizerKind::GaussianSmoothing { .. } => None,
            RegularizerKind::Diffusion => Some(diffusion_var(g, u)?),
            RegularizerKind::Tv => Some(tv_var(g, u)?),
            RegularizerKind::DiffusionJacobian { alpha } => Some(combined_var(g, u, alpha)?),
        })
    }
}

fn check_field<T: Real>(g: &Graph<T>, op: &'static str, u: Var) -> Result<(usize, usize)> {
    let (c, h, w) = g.value(u).chw(op)?;
    if c != 2 {
        return Err(Error::shape(op, format!("expected 2 channels, got {c}")));
    }
    Ok((h, w))
}

fn sum_of_diffs<T: Real>(g: &mut Graph<T>, u: Var, norm: impl Fn(&mut Graph<T>, Var) -> Var) -> Result<Var> {
    let dx = g.forward_diff(u, SpatialAxis::Cols)?;
    let dy = g.forward_diff(u, SpatialAxis::Rows)?;
    let nx = norm(g, dx);
    let ny = norm(g, dy);
    let sx = g.sum(nx);
    let sy = g.sum(ny);
    g.add(sx, sy)
}

/// `Σ ||∇u||²` over all sites (a sum, not a mean).
pub fn diffusion_var<T: Real>(g: &mut Graph<T>, u: Var) -> Result<Var> {
    check_field(g, "diffusion", u)?;
    sum_of_diffs(g, u, |g, x| g.square(x))
}

/// `Σ ||∇u||₁`; the subgradient at a zero difference is zero.
pub fn tv_var<T: Real>(g: &mut Graph<T>, u: Var) -> Result<Var> {
    check_field(g, "tv", u)?;
    sum_of_diffs(g, u, |g, x| g.abs(x))
}

/// Forward-difference partials `[∂x u_x, ∂y u_x, ∂x u_y, ∂y u_y]` at `(y, x)`
/// for `y < h - 1`, `x < w - 1`.
fn partials<T: Real>(planes: &[T], h: usize, w: usize, y: usize, x: usize) -> [T; 4] {
    let (ux, uy) = planes.split_at(h * w);
    let i = y * w + x;
    [
        ux[i + 1] - ux[i],
        ux[i + w] - ux[i],
        uy[i + 1] - uy[i],
        uy[i + w] - uy[i],
    ]
}

fn det_of<T: Real>(p: [T; 4]) -> T {
    let [dxx, dyx, dxy, dyy] = p;
    (T::one() + dxx) * (T::one() + dyy) - dyx * dxy
}

/// `det(I + ∇u)` on the `(H-1)×(W-1)` sites where both forward differences
/// exist, row-major. Empty when either extent is below 2.
pub fn det_grid<T: Real>(planes: &[T], h: usize, w: usize) -> Vec<T> {
    if h < 2 || w < 2 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity((h - 1) * (w - 1));
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            out.push(det_of(partials(planes, h, w, y, x)));
        }
    }
    out
}

/// Jacobian determinant grid on the tape: `2×H×W -> (H-1)×(W-1)`.
pub fn jacobian_det_var<T: Real>(g: &mut Graph<T>, u: Var) -> Result<Var> {
    let (h, w) = check_field(g, "jacobian_det", u)?;
    if h < 2 || w < 2 {
        return Err(Error::shape(
            "jacobian_det",
            format!("field {h}×{w} is too small"),
        ));
    }
    let dets = det_grid(g.value(u).data(), h, w);
    let out = Tensor::new(&[h - 1, w - 1], dets)?;
    Ok(g.record(out, &[u], move |inp, _, grad, _| {
        let planes = inp[0].data();
        let gd = grad.data();
        let mut gu = vec![T::zero(); 2 * h * w];
        let off = h * w;
        for y in 0..h - 1 {
            for x in 0..w - 1 {
                let s = gd[y * (w - 1) + x];
                let [dxx, dyx, dxy, dyy] = partials(planes, h, w, y, x);
                let i = y * w + x;
                let a = s * (T::one() + dyy);
                let b = -s * dxy;
                let c = -s * dyx;
                let d = s * (T::one() + dxx);
                gu[i + 1] = gu[i + 1] + a;
                gu[i + w] = gu[i + w] + b;
                gu[i] = gu[i] - a - b;
                gu[off + i + 1] = gu[off + i + 1] + c;
                gu[off + i + w] = gu[off + i + w] + d;
                gu[off + i] = gu[off + i] - c - d;
            }
        }
        vec![Some(Tensor::new(&[2, h, w], gu).unwrap())]
    }))
}

/// `Σ (|det J| - det J)`: zero where the determinant is non-negative.
pub fn nonneg_jacobian_penalty_var<T: Real>(g: &mut Graph<T>, u: Var) -> Result<Var> {
    let det = jacobian_det_var(g, u)?;
    let abs = g.abs(det);
    let gap = g.sub(abs, det)?;
    Ok(g.sum(gap))
}

/// `diffusion(u) + alpha · nonneg_jacobian_penalty(u)`.
pub fn combined_var<T: Real>(g: &mut Graph<T>, u: Var, alpha: f64) -> Result<Var> {
    let diff = diffusion_var(g, u)?;
    if alpha == 0.0 {
        return Ok(diff);
    }
    let jac = nonneg_jacobian_penalty_var(g, u)?;
    let jac = g.mul_scalar(jac, T::from_f64_lossy(alpha));
    g.add(diff, jac)
}

fn eval_field(u: &DisplacementField, op: impl FnOnce(&mut Graph<f64>, Var) -> Result<Var>) -> f64 {
    let mut g = Graph::new();
    let v = g.constant(u.to_tensor());
    let out = op(&mut g, v).expect("a DisplacementField always has two channels");
    g.value(out).item()
}

pub fn diffusion(u: &DisplacementField) -> f64 {
    eval_field(u, diffusion_var)
}

pub fn tv(u: &DisplacementField) -> f64 {
    eval_field(u, tv_var)
}

pub fn nonneg_jacobian_penalty(u: &DisplacementField) -> f64 {
    det_grid(u.planes(), u.height(), u.width())
        .into_iter()
        .map(|d| d.abs() - d)
        .sum()
}

pub fn combined_diffusion_jacobian(u: &DisplacementField, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(diffusion(u) + alpha * nonneg_jacobian_penalty(u))
}

/// Each displacement channel convolved with a normalized Gaussian of radius
/// `ceil(3σ)`, reflective border.
pub fn gaussian_smooth_field(u: &DisplacementField, sigma: f64) -> Result<DisplacementField> {
    let mut g = Graph::<f64>::new();
    let v = g.constant(u.to_tensor());
    let out = g.gaussian_blur(v, sigma)?;
    DisplacementField::from_tensor(g.value(out))
}
