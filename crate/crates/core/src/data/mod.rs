//! Synthetic test data: phantoms with label maps, fold-free ground-truth
//! warps, noise/blur corruption, and file I/O.

pub mod io;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regularize::det_grid;
use crate::tensor::filter::blur_channels;
use crate::warp::{DisplacementField, Image, LabelMap};

/// Attempts before `make_ground_truth_warp` gives up.
pub const WARP_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    /// Modified (high-contrast) Shepp-Logan head phantom.
    SheppLogan,
    /// Torso-like nested ellipses: body, lungs, heart, liver, spine, aorta.
    EllipseBody,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shepp" => Ok(PhantomKind::SheppLogan),
            "body" => Ok(PhantomKind::EllipseBody),
            other => Err(Error::Config(format!("unknown phantom kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub size: usize,
    pub noise_sigma: Option<f64>,
    pub blur_sigma: Option<f64>,
    /// Seed for the noise, if any.
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(kind: PhantomKind, size: usize) -> Self {
        Self {
            kind,
            size,
            noise_sigma: None,
            blur_sigma: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 32 || !self.size.is_multiple_of(8) {
            return Err(Error::Config(format!(
                "phantom size must be >= 32 and divisible by 8, got {}",
                self.size
            )));
        }
        check_sigma("noise", self.noise_sigma, true)?;
        check_sigma("blur", self.blur_sigma, false)
    }
}

fn check_sigma(what: &str, sigma: Option<f64>, allow_zero: bool) -> Result<()> {
    match sigma {
        Some(s) if !s.is_finite() || s < 0.0 || (s == 0.0 && !allow_zero) => {
            Err(Error::Config(format!("{what} sigma must be positive, got {s}")))
        }
        _ => Ok(()),
    }
}

/// Ellipse in normalized coordinates `[-1, 1]²`, y pointing up.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub value: f64,
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub y0: f64,
    /// Counter-clockwise rotation in degrees.
    pub phi: f64,
}

impl Ellipse {
    const fn new(value: f64, a: f64, b: f64, x0: f64, y0: f64, phi: f64) -> Self {
        Self {
            value,
            a,
            b,
            x0,
            y0,
            phi,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi.to_radians().sin_cos();
        let (dx, dy) = (x - self.x0, y - self.y0);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Modified Shepp-Logan: intensities add up and stay within `[0, 1]`.
pub const SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse::new(1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    Ellipse::new(-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    Ellipse::new(-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    Ellipse::new(-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    Ellipse::new(0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    Ellipse::new(0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    Ellipse::new(0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    Ellipse::new(0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    Ellipse::new(0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    Ellipse::new(0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// Torso phantom: later ellipses overwrite earlier ones.
pub const ELLIPSE_BODY: [Ellipse; 7] = [
    Ellipse::new(0.45, 0.9, 0.62, 0.0, 0.0, 0.0),
    Ellipse::new(0.08, 0.28, 0.42, -0.42, 0.06, -10.0),
    Ellipse::new(0.08, 0.28, 0.42, 0.42, 0.06, 10.0),
    Ellipse::new(0.7, 0.22, 0.2, 0.08, 0.1, 20.0),
    Ellipse::new(0.6, 0.3, 0.16, -0.3, -0.32, 15.0),
    Ellipse::new(1.0, 0.1, 0.1, 0.0, -0.44, 0.0),
    Ellipse::new(0.85, 0.06, 0.06, 0.12, -0.24, 0.0),
];

pub fn ellipses(kind: PhantomKind) -> &'static [Ellipse] {
    match kind {
        PhantomKind::SheppLogan => &SHEPP_LOGAN,
        PhantomKind::EllipseBody => &ELLIPSE_BODY,
    }
}

/// Phantom image and label map. Label `k` (1-based) marks pixels whose last
/// containing ellipse is the `k`-th; background is 0. Noise and blur
/// settings apply to the image only.
pub fn make_phantom(spec: &PhantomSpec) -> Result<(Image, LabelMap)> {
    spec.validate()?;
    let m = spec.size;
    let shapes = ellipses(spec.kind);
    let additive = spec.kind == PhantomKind::SheppLogan;
    let mut values = vec![0.0; m * m];
    let mut labels = vec![0u16; m * m];
    for y in 0..m {
        let yn = 1.0 - (2 * y + 1) as f64 / m as f64;
        for x in 0..m {
            let xn = (2 * x + 1) as f64 / m as f64 - 1.0;
            let i = y * m + x;
            for (k, e) in shapes.iter().enumerate() {
                if e.contains(xn, yn) {
                    values[i] = if additive { values[i] + e.value } else { e.value };
                    labels[i] = k as u16 + 1;
                }
            }
        }
    }
    // Guard against rounding just outside the unit range.
    let image = Image::new(m, m, values.into_iter().map(|v: f64| v.clamp(0.0, 1.0)).collect())?;
    let image = corrupt(&image, spec.noise_sigma, spec.blur_sigma, spec.seed)?;
    Ok((image, LabelMap::new(m, m, labels)?))
}

/// Gaussian blur (reflective border) then additive Gaussian noise clamped
/// to `[0, 1]`. With neither set the image is returned unchanged.
pub fn corrupt(image: &Image, noise_sigma: Option<f64>, blur_sigma: Option<f64>, seed: u64) -> Result<Image> {
    check_sigma("noise", noise_sigma, true)?;
    check_sigma("blur", blur_sigma, false)?;
    let (h, w) = image.dims();
    let mut values = image.values().to_vec();
    if let Some(s) = blur_sigma {
        values = blur_channels(&values, 1, h, w, s);
    }
    if let Some(s) = noise_sigma.filter(|&s| s > 0.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut values {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v = (*v + s * n).clamp(0.0, 1.0);
        }
    }
    Image::new(h, w, values)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWarpSpec {
    /// Largest displacement magnitude in pixels.
    pub max_displacement: f64,
    /// Gaussian smoothing width of the underlying white noise, in pixels.
    pub smoothness: f64,
    pub seed: u64,
}

/// Smooth random field with `max |u| == max_displacement` and no site where
/// `det(I + ∇u) <= 0`. Draws are repeated until one is fold-free.
pub fn make_ground_truth_warp(spec: &SyntheticWarpSpec, size: usize) -> Result<DisplacementField> {
    if !(spec.smoothness >= 2.0) || !spec.smoothness.is_finite() {
        return Err(Error::Config(format!(
            "warp smoothness must be >= 2 px, got {}",
            spec.smoothness
        )));
    }
    if !(spec.max_displacement >= 0.0) || !spec.max_displacement.is_finite() {
        return Err(Error::Config(format!(
            "max displacement must be >= 0, got {}",
            spec.max_displacement
        )));
    }
    if size == 0 {
        return Err(Error::Config("warp size must be positive".into()));
    }
    if spec.max_displacement == 0.0 {
        return Ok(DisplacementField::zeros(size, size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..WARP_ATTEMPTS {
        let noise: Vec<f64> = (0..2 * size * size)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let smooth = blur_channels(&noise, 2, size, size, spec.smoothness);
        let field = DisplacementField::from_planes(size, size, smooth)?;
        let peak = field.max_magnitude();
        if !(peak > 0.0) {
            continue;
        }
        let field = field.scaled(spec.max_displacement / peak);
        let folds = det_grid(field.planes(), size, size)
            .iter()
            .filter(|&&d| d <= 0.0)
            .count();
        if folds == 0 {
            return Ok(field);
        }
    }
    Err(Error::WarpGeneration {
        attempts: WARP_ATTEMPTS,
    })
}
