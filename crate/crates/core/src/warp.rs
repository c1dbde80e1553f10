//! Spatial transformer: resampling the moving image at `p - u(p)`.
//!
//! Sample coordinates outside the image are clamped to the border, which keeps
//! the operator a convex combination of moving-image pixels. Where a
//! coordinate is clamped its derivative with respect to `u` is zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};

/// Grayscale image, row-major, intensities normalized to `[0, 1]` once ingested.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(
                "image",
                format!(
                    "{height}×{width} needs {} values, got {}",
                    height * width,
                    values.len()
                ),
            ));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("image contains non-finite value {bad}")));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// `1×H×W` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_f64(&[1, self.height, self.width], &self.values).expect("consistent shape")
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        match t.shape() {
            [1, h, w] | [h, w] => Self::new(*h, *w, t.to_f64()),
            s => Err(Error::shape("image", format!("expected 1×H×W, got {s:?}"))),
        }
    }
}

/// Per-pixel displacement `u = (u_x, u_y)` in pixels, stored as two planes.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DisplacementField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; 2 * height * width],
        }
    }

    pub fn constant(height: usize, width: usize, ux: f64, uy: f64) -> Self {
        Self::from_fn(height, width, |_, _| (ux, uy))
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> Self {
        let n = height * width;
        let mut data = vec![0.0; 2 * n];
        for y in 0..height {
            for x in 0..width {
                let (ux, uy) = f(y, x);
                data[y * width + x] = ux;
                data[n + y * width + x] = uy;
            }
        }
        Self { height, width, data }
    }

    /// From the planar layout `[u_x plane, u_y plane]`.
    pub fn from_planes(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 2 * height * width {
            return Err(Error::shape(
                "displacement field",
                format!(
                    "{height}×{width} needs {} values, got {}",
                    2 * height * width,
                    data.len()
                ),
            ));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn planes(&self) -> &[f64] {
        &self.data
    }

    pub fn ux(&self) -> &[f64] {
        &self.data[..self.height * self.width]
    }

    pub fn uy(&self) -> &[f64] {
        &self.data[self.height * self.width..]
    }

    pub fn get(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.data[i], self.data[self.height * self.width + i])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_magnitude(&self) -> f64 {
        self.ux()
            .iter()
            .zip(self.uy())
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    pub fn mean_magnitude(&self) -> f64 {
        let n = (self.height * self.width) as f64;
        self.ux()
            .iter()
            .zip(self.uy())
            .map(|(a, b)| a.hypot(*b))
            .sum::<f64>()
            / n
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// `2×H×W` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_f64(&[2, self.height, self.width], &self.data).expect("consistent shape")
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        match t.shape() {
            [2, h, w] => Self::from_planes(*h, *w, t.to_f64()),
            s => Err(Error::shape(
                "displacement field",
                format!("expected 2×H×W, got {s:?}"),
            )),
        }
    }
}

/// Integer organ/tissue labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(
                "label map",
                format!(
                    "{height}×{width} needs {} labels, got {}",
                    height * width,
                    labels.len()
                ),
            ));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    /// Sorted distinct labels present.
    pub fn alphabet(&self) -> Vec<u16> {
        let mut seen: Vec<u16> = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen
    }
}

/// Bilinear sample geometry for one output pixel.
#[derive(Clone, Copy)]
struct Sample {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
    free_x: bool,
    free_y: bool,
}

fn clamp_axis(s: f64, extent: usize) -> (usize, usize, f64, bool) {
    let max = (extent - 1) as f64;
    // NaN fails both comparisons and is treated as clamped at zero.
    let (s, free) = if s >= 0.0 && s <= max {
        (s, true)
    } else if s > max {
        (max, false)
    } else {
        (0.0, false)
    };
    let base = s.floor();
    let i0 = base as usize;
    if i0 + 1 >= extent {
        (i0.min(extent - 1), i0.min(extent - 1), 0.0, free)
    } else {
        (i0, i0 + 1, s - base, free)
    }
}

fn sample_at(x: usize, y: usize, ux: f64, uy: f64, h: usize, w: usize) -> Sample {
    let (x0, x1, fx, free_x) = clamp_axis(x as f64 - ux, w);
    let (y0, y1, fy, free_y) = clamp_axis(y as f64 - uy, h);
    Sample {
        x0,
        x1,
        y0,
        y1,
        fx,
        fy,
        free_x,
        free_y,
    }
}

fn check_dims(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{}×{} vs {}×{}", a.0, a.1, b.0, b.1)));
    }
    if a.0 == 0 || a.1 == 0 {
        return Err(Error::shape(op, "empty image"));
    }
    Ok(())
}

/// Warp `moving` (`C×H×W`) by `field` (`2×H×W`) on the tape; differentiable in
/// both arguments.
pub fn warp_bilinear_var<T: Real>(g: &mut Graph<T>, moving: Var, field: Var) -> Result<Var> {
    let (c, h, w) = g.value(moving).chw("warp_bilinear")?;
    match g.shape(field) {
        [2, fh, fw] => check_dims("warp_bilinear", (h, w), (*fh, *fw))?,
        s => return Err(Error::shape("warp_bilinear", format!("field shape {s:?}"))),
    }
    let n = h * w;
    let samples: Vec<Sample> = {
        let u = g.value(field).data();
        (0..n)
            .map(|i| sample_at(i % w, i / w, u[i].to_f64_lossy(), u[n + i].to_f64_lossy(), h, w))
            .collect()
    };
    let img = g.value(moving).data();
    let mut out = vec![T::zero(); c * n];
    for ch in 0..c {
        let plane = &img[ch * n..(ch + 1) * n];
        for (i, s) in samples.iter().enumerate() {
            out[ch * n + i] = interpolate(plane, w, s);
        }
    }
    let out = Tensor::new(&[c, h, w], out)?;
    Ok(g.record(out, &[moving, field], move |inp, _, grad, needs| {
        let img = inp[0].data();
        let gd = grad.data();
        let gm = needs[0].then(|| {
            let mut gm = vec![T::zero(); c * n];
            for ch in 0..c {
                for (i, s) in samples.iter().enumerate() {
                    let gv = gd[ch * n + i];
                    let (fx, fy) = (T::from_f64_lossy(s.fx), T::from_f64_lossy(s.fy));
                    let one = T::one();
                    let base = ch * n;
                    let idx = |y: usize, x: usize| base + y * w + x;
                    gm[idx(s.y0, s.x0)] = gm[idx(s.y0, s.x0)] + gv * (one - fx) * (one - fy);
                    gm[idx(s.y0, s.x1)] = gm[idx(s.y0, s.x1)] + gv * fx * (one - fy);
                    gm[idx(s.y1, s.x0)] = gm[idx(s.y1, s.x0)] + gv * (one - fx) * fy;
                    gm[idx(s.y1, s.x1)] = gm[idx(s.y1, s.x1)] + gv * fx * fy;
                }
            }
            Tensor::new(&[c, h, w], gm).unwrap()
        });
        let gu = needs[1].then(|| {
            let mut gu = vec![T::zero(); 2 * n];
            for ch in 0..c {
                let plane = &img[ch * n..(ch + 1) * n];
                for (i, s) in samples.iter().enumerate() {
                    let gv = gd[ch * n + i];
                    let (dsx, dsy) = sample_slopes(plane, w, s);
                    // d(sample)/du = -1 along each free axis.
                    if s.free_x {
                        gu[i] = gu[i] - gv * dsx;
                    }
                    if s.free_y {
                        gu[n + i] = gu[n + i] - gv * dsy;
                    }
                }
            }
            Tensor::new(&[2, h, w], gu).unwrap()
        });
        vec![gm, gu]
    }))
}

fn interpolate<T: Real>(plane: &[T], w: usize, s: &Sample) -> T {
    let one = T::one();
    let (fx, fy) = (T::from_f64_lossy(s.fx), T::from_f64_lossy(s.fy));
    let top = (one - fx) * plane[s.y0 * w + s.x0] + fx * plane[s.y0 * w + s.x1];
    let bottom = (one - fx) * plane[s.y1 * w + s.x0] + fx * plane[s.y1 * w + s.x1];
    (one - fy) * top + fy * bottom
}

/// Partial derivatives of the bilinear interpolant with respect to the sample
/// coordinates. At integral coordinates this is the right-cell derivative.
fn sample_slopes<T: Real>(plane: &[T], w: usize, s: &Sample) -> (T, T) {
    let one = T::one();
    let (fx, fy) = (T::from_f64_lossy(s.fx), T::from_f64_lossy(s.fy));
    let p00 = plane[s.y0 * w + s.x0];
    let p01 = plane[s.y0 * w + s.x1];
    let p10 = plane[s.y1 * w + s.x0];
    let p11 = plane[s.y1 * w + s.x1];
    let dsx = (one - fy) * (p01 - p00) + fy * (p11 - p10);
    let dsy = (one - fx) * (p10 - p00) + fx * (p11 - p01);
    (dsx, dsy)
}

/// Bilinear warp outside the tape.
pub fn warp_bilinear(moving: &Image, field: &DisplacementField) -> Result<Image> {
    check_dims("warp_bilinear", moving.dims(), field.dims())?;
    let (h, w) = moving.dims();
    let values = (0..h * w)
        .map(|i| {
            let (ux, uy) = field.get(i / w, i % w);
            interpolate(moving.values(), w, &sample_at(i % w, i / w, ux, uy, h, w))
        })
        .collect();
    Image::new(h, w, values)
}

/// Nearest-neighbour label warp: label at `round(p - u(p))`, border clamped.
pub fn warp_nearest(labels: &LabelMap, field: &DisplacementField) -> Result<LabelMap> {
    check_dims("warp_nearest", labels.dims(), field.dims())?;
    let (h, w) = labels.dims();
    let pick = |s: f64, extent: usize| -> usize {
        let r = s.round();
        if r >= (extent - 1) as f64 {
            extent - 1
        } else if r > 0.0 {
            r as usize
        } else {
            0
        }
    };
    let out = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let (ux, uy) = field.get(y, x);
            labels.get(pick(y as f64 - uy, h), pick(x as f64 - ux, w))
        })
        .collect();
    LabelMap::new(h, w, out)
}
