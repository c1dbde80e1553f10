//! Image similarity losses. Every loss is "lower is better"; the plain `f64`
//! metric functions evaluate the same graphs on constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};
use crate::warp::Image;

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const LOCAL_CC_WINDOW: usize = 3;
pub const LOCAL_CC_EPS: f64 = 1e-5;
pub const MI_BINS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: SSIM_WINDOW,
            c1: SSIM_C1,
            c2: SSIM_C2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiParams {
    /// Parzen kernel width in intensity units.
    pub sigma: f64,
    /// Number of intensity anchors spread uniformly over `[0, 1]`.
    pub bins: usize,
}

impl Default for MiParams {
    fn default() -> Self {
        Self {
            sigma: 1.0 / (MI_BINS - 1) as f64,
            bins: MI_BINS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimilarityKind {
    Mse,
    Pcc,
    LocalCc { window: usize, eps: f64 },
    Mi(MiParams),
    Ssim(SsimParams),
    SsimPcc(SsimParams),
}

impl SimilarityKind {
    pub fn local_cc() -> Self {
        SimilarityKind::LocalCc {
            window: LOCAL_CC_WINDOW,
            eps: LOCAL_CC_EPS,
        }
    }

    pub fn mi() -> Self {
        SimilarityKind::Mi(MiParams::default())
    }

    pub fn ssim() -> Self {
        SimilarityKind::Ssim(SsimParams::default())
    }

    pub fn ssim_pcc() -> Self {
        SimilarityKind::SsimPcc(SsimParams::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            SimilarityKind::Mse => "mse",
            SimilarityKind::Pcc => "pcc",
            SimilarityKind::LocalCc { .. } => "cc",
            SimilarityKind::Mi(_) => "mi",
            SimilarityKind::Ssim(_) => "ssim",
            SimilarityKind::SsimPcc(_) => "ssim+pcc",
        }
    }

    /// Loss `L_sim(d, f)` on the tape; `d` and `f` are `1×H×W`.
    pub fn loss<T: Real>(&self, g: &mut Graph<T>, d: Var, f: Var) -> Result<Var> {
        match *self {
            SimilarityKind::Mse => mse_var(g, d, f),
            SimilarityKind::Pcc => {
                let r = pcc_var(g, d, f)?;
                Ok(one_minus(g, r))
            }
            SimilarityKind::LocalCc { window, eps } => {
                let cc = local_cc_var(g, d, f, window, eps)?;
                Ok(g.neg(cc))
            }
            SimilarityKind::Mi(p) => {
                let mi = mi_var(g, d, f, p)?;
                Ok(g.neg(mi))
            }
            SimilarityKind::Ssim(p) => {
                let s = ssim_var(g, d, f, p)?;
                Ok(one_minus(g, s))
            }
            SimilarityKind::SsimPcc(p) => ssim_pcc_var(g, d, f, p),
        }
    }
}

impl std::str::FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mse" => SimilarityKind::Mse,
            "pcc" => SimilarityKind::Pcc,
            "cc" => SimilarityKind::local_cc(),
            "mi" => SimilarityKind::mi(),
            "ssim" => SimilarityKind::ssim(),
            "ssim+pcc" => SimilarityKind::ssim_pcc(),
            other => return Err(Error::Config(format!("unknown similarity {other:?}"))),
        })
    }
}

fn one_minus<T: Real>(g: &mut Graph<T>, x: Var) -> Var {
    let neg = g.neg(x);
    g.add_scalar(neg, T::one())
}

fn same_image_shape<T: Real>(g: &Graph<T>, op: &'static str, d: Var, f: Var) -> Result<(usize, usize)> {
    let (cd, hd, wd) = g.value(d).chw(op)?;
    let (cf, hf, wf) = g.value(f).chw(op)?;
    if (cd, hd, wd) != (cf, hf, wf) || cd != 1 {
        return Err(Error::shape(op, format!("{:?} vs {:?}", g.shape(d), g.shape(f))));
    }
    Ok((hd, wd))
}

/// Mean over pixels of `(f - d)²`.
pub fn mse_var<T: Real>(g: &mut Graph<T>, d: Var, f: Var) -> Result<Var> {
    same_image_shape(g, "mse", d, f)?;
    let diff = g.sub(f, d)?;
    let sq = g.square(diff);
    Ok(g.mean(sq))
}

fn centered<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let m = g.mean(x);
    g.sub_s(x, m)
}

fn variance_floor<T: Real>(g: &Graph<T>, x: Var) -> T {
    let n = T::from_usize(g.value(x).len()).unwrap();
    let scale = g.value(x).data().iter().fold(T::one(), |acc, v| acc.max(v.abs()));
    let tol = T::from_f64_lossy(16.0) * T::epsilon() * scale;
    n * tol * tol
}

/// Pearson correlation over all pixels.
pub fn pcc_var<T: Real>(g: &mut Graph<T>, d: Var, f: Var) -> Result<Var> {
    same_image_shape(g, "pcc", d, f)?;
    let floor_d = variance_floor(g, d);
    let floor_f = variance_floor(g, f);
    let cd = centered(g, d)?;
    let cf = centered(g, f)?;
    let prod = g.mul(cd, cf)?;
    let cov = g.sum(prod);
    let sd = g.square(cd);
    let vd = g.sum(sd);
    let sf = g.square(cf);
    let vf = g.sum(sf);
    if g.value(vf).item() <= floor_f {
        return Err(Error::ZeroVariance { what: "fixed image" });
    }
    if g.value(vd).item() <= floor_d {
        return Err(Error::ZeroVariance {
            what: "deformed image",
        });
    }
    let rd = g.sqrt(vd);
    let rf = g.sqrt(vf);
    let den = g.mul(rd, rf)?;
    g.div(cov, den)
}

/// Windowed statistics shared by local CC and SSIM, all `1×H'×W'`.
struct WindowSums {
    d: Var,
    f: Var,
    dd: Var,
    ff: Var,
    df: Var,
}

fn window_sums<T: Real>(g: &mut Graph<T>, d: Var, f: Var, k: usize) -> Result<WindowSums> {
    let dd = g.mul(d, d)?;
    let ff = g.mul(f, f)?;
    let df = g.mul(d, f)?;
    Ok(WindowSums {
        d: g.box_sum(d, k)?,
        f: g.box_sum(f, k)?,
        dd: g.box_sum(dd, k)?,
        ff: g.box_sum(ff, k)?,
        df: g.box_sum(df, k)?,
    })
}

fn check_window(op: &'static str, k: usize, h: usize, w: usize) -> Result<()> {
    if k.is_multiple_of(2) || k > h.min(w) {
        return Err(Error::Config(format!(
            "{op}: window {k} must be odd and at most {}",
            h.min(w)
        )));
    }
    Ok(())
}

/// Sum over all `k×k` windows of `cross² / (var_f·var_d + eps)`.
pub fn local_cc_var<T: Real>(g: &mut Graph<T>, d: Var, f: Var, k: usize, eps: f64) -> Result<Var> {
    let (h, w) = same_image_shape(g, "local_cc", d, f)?;
    check_window("local_cc", k, h, w)?;
    let s = window_sums(g, d, f, k)?;
    let inv_n = T::one() / T::from_usize(k * k).unwrap();
    // Σ(a - ā)(b - b̄) = Σab - Σa·Σb / n
    let centered_sum = |g: &mut Graph<T>, ab: Var, a: Var, b: Var| -> Result<Var> {
        let prod = g.mul(a, b)?;
        let prod = g.mul_scalar(prod, inv_n);
        g.sub(ab, prod)
    };
    let cross = centered_sum(g, s.df, s.f, s.d)?;
    let var_f = centered_sum(g, s.ff, s.f, s.f)?;
    let var_d = centered_sum(g, s.dd, s.d, s.d)?;
    let num = g.square(cross);
    let den = g.mul(var_f, var_d)?;
    let den = g.add_scalar(den, T::from_f64_lossy(eps));
    let ratio = g.div(num, den)?;
    Ok(g.sum(ratio))
}

/// Mean SSIM over every fully contained window, uniform window weights and
/// population (`1/n`) statistics.
pub fn ssim_var<T: Real>(g: &mut Graph<T>, d: Var, f: Var, p: SsimParams) -> Result<Var> {
    let (h, w) = same_image_shape(g, "ssim", d, f)?;
    check_window("ssim", p.window, h, w)?;
    let s = window_sums(g, d, f, p.window)?;
    let inv_n = T::one() / T::from_usize(p.window * p.window).unwrap();
    let two = T::one() + T::one();
    let (c1, c2) = (T::from_f64_lossy(p.c1), T::from_f64_lossy(p.c2));

    let mu_d = g.mul_scalar(s.d, inv_n);
    let mu_f = g.mul_scalar(s.f, inv_n);
    let mu_df = g.mul(mu_d, mu_f)?;
    let mu_dd = g.mul(mu_d, mu_d)?;
    let mu_ff = g.mul(mu_f, mu_f)?;
    let e_dd = g.mul_scalar(s.dd, inv_n);
    let e_ff = g.mul_scalar(s.ff, inv_n);
    let e_df = g.mul_scalar(s.df, inv_n);
    let var_d = g.sub(e_dd, mu_dd)?;
    let var_f = g.sub(e_ff, mu_ff)?;
    let cov = g.sub(e_df, mu_df)?;

    let lum_num = g.mul_scalar(mu_df, two);
    let lum_num = g.add_scalar(lum_num, c1);
    let lum_den = g.add(mu_dd, mu_ff)?;
    let lum_den = g.add_scalar(lum_den, c1);
    let cs_num = g.mul_scalar(cov, two);
    let cs_num = g.add_scalar(cs_num, c2);
    let cs_den = g.add(var_d, var_f)?;
    let cs_den = g.add_scalar(cs_den, c2);

    let num = g.mul(lum_num, cs_num)?;
    let den = g.mul(lum_den, cs_den)?;
    let map = g.div(num, den)?;
    Ok(g.mean(map))
}

/// `0.5·(1 - SSIM) + 0.5·(1 - PCC)`.
pub fn ssim_pcc_var<T: Real>(g: &mut Graph<T>, d: Var, f: Var, p: SsimParams) -> Result<Var> {
    let s = ssim_var(g, d, f, p)?;
    let r = pcc_var(g, d, f)?;
    let ls = one_minus(g, s);
    let lr = one_minus(g, r);
    let total = g.add(ls, lr)?;
    Ok(g.mul_scalar(total, T::from_f64_lossy(0.5)))
}

/// Gaussian Parzen weights `exp(-(x_i - a_k)² / 2σ²)` for anchors
/// `a_k = k / (bins - 1)`, normalized so each pixel contributes unit mass:
/// `N -> N×bins`.
fn parzen_weights<T: Real>(g: &mut Graph<T>, x: Var, bins: usize, sigma: f64) -> Result<Var> {
    let n = g.value(x).len();
    let anchors: Vec<T> = (0..bins)
        .map(|k| T::from_f64_lossy(k as f64 / (bins - 1) as f64))
        .collect();
    let inv_var = T::from_f64_lossy(1.0 / (sigma * sigma));
    let half = T::from_f64_lossy(0.5);
    let mut out = Vec::with_capacity(n * bins);
    for &v in g.value(x).data() {
        let row: Vec<T> = anchors
            .iter()
            .map(|&a| {
                let d = v - a;
                (-d * d * inv_var * half).exp()
            })
            .collect();
        let total = row.iter().fold(T::zero(), |acc, &w| acc + w);
        out.extend(row.into_iter().map(|w| w / total));
    }
    let out = Tensor::new(&[n, bins], out)?;
    let in_shape = g.shape(x).to_vec();
    Ok(g.record(out, &[x], move |inp, out, grad, _| {
        let xs = inp[0].data();
        let (od, gd) = (out.data(), grad.data());
        // w_k = e_k / Σe, ∂w_k/∂x = w_k (s_k - Σ_j w_j s_j), s_k = -(x - a_k)/σ²
        let gx = xs
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let w = &od[i * bins..(i + 1) * bins];
                let up = &gd[i * bins..(i + 1) * bins];
                let slope = |k: usize| -(v - anchors[k]) * inv_var;
                let mean = (0..bins).fold(T::zero(), |acc, k| acc + w[k] * slope(k));
                (0..bins).fold(T::zero(), |acc, k| acc + up[k] * w[k] * (slope(k) - mean))
            })
            .collect();
        vec![Some(Tensor::new(&in_shape, gx).unwrap())]
    }))
}

fn check_unit_range<T: Real>(g: &Graph<T>, x: Var) -> Result<()> {
    let tol = T::from_f64_lossy(1e-6);
    if let Some(&bad) = g
        .value(x)
        .data()
        .iter()
        .find(|&&v| !(v >= -tol && v <= T::one() + tol))
    {
        return Err(Error::IntensityRange {
            value: bad.to_f64_lossy(),
        });
    }
    Ok(())
}

/// Mutual information from a Gaussian-Parzen joint density on a
/// `bins×bins` anchor grid. Rows of the joint index the fixed image.
pub fn mi_var<T: Real>(g: &mut Graph<T>, d: Var, f: Var, p: MiParams) -> Result<Var> {
    same_image_shape(g, "mi", d, f)?;
    if p.bins < 2 || !(p.sigma > 0.0) {
        return Err(Error::Config(format!(
            "mi needs bins >= 2 and sigma > 0, got {} and {}",
            p.bins, p.sigma
        )));
    }
    check_unit_range(g, d)?;
    check_unit_range(g, f)?;
    let wf = parzen_weights(g, f, p.bins, p.sigma)?;
    let wd = parzen_weights(g, d, p.bins, p.sigma)?;
    let wft = g.transpose(wf)?;
    let joint = g.matmul(wft, wd)?;
    let total = g.sum(joint);
    let joint = g.div_s(joint, total)?;
    let pf = g.sum_axis(joint, 1)?;
    let pd = g.sum_axis(joint, 0)?;
    // Σ p log(p / (pf·pd)) = Σ p log p - Σ pf log pf - Σ pd log pd
    let hj = g.xlogx(joint);
    let hj = g.sum(hj);
    let hf = g.xlogx(pf);
    let hf = g.sum(hf);
    let hd = g.xlogx(pd);
    let hd = g.sum(hd);
    let m = g.sub(hj, hf)?;
    g.sub(m, hd)
}

fn eval_pair(d: &Image, f: &Image, op: impl FnOnce(&mut Graph<f64>, Var, Var) -> Result<Var>) -> Result<f64> {
    if d.dims() != f.dims() {
        return Err(Error::shape(
            "similarity",
            format!("{:?} vs {:?}", d.dims(), f.dims()),
        ));
    }
    let mut g = Graph::new();
    let dv = g.constant(d.to_tensor());
    let fv = g.constant(f.to_tensor());
    let out = op(&mut g, dv, fv)?;
    Ok(g.value(out).item())
}

pub fn mse(d: &Image, f: &Image) -> Result<f64> {
    eval_pair(d, f, mse_var)
}

pub fn pcc(d: &Image, f: &Image) -> Result<f64> {
    eval_pair(d, f, pcc_var)
}

pub fn local_cc(d: &Image, f: &Image, window: usize, eps: f64) -> Result<f64> {
    eval_pair(d, f, |g, a, b| local_cc_var(g, a, b, window, eps))
}

pub fn mi(d: &Image, f: &Image, params: MiParams) -> Result<f64> {
    eval_pair(d, f, |g, a, b| mi_var(g, a, b, params))
}

pub fn ssim(d: &Image, f: &Image, params: SsimParams) -> Result<f64> {
    eval_pair(d, f, |g, a, b| ssim_var(g, a, b, params))
}

/// SSIM+PCC loss value.
pub fn ssim_pcc(d: &Image, f: &Image, params: SsimParams) -> Result<f64> {
    eval_pair(d, f, |g, a, b| ssim_pcc_var(g, a, b, params))
}

/// Loss value of any kind outside the tape.
pub fn loss(kind: SimilarityKind, d: &Image, f: &Image) -> Result<f64> {
    eval_pair(d, f, |g, a, b| kind.loss(g, a, b))
}
