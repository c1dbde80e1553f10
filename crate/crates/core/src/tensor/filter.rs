//! Fixed (non-learned) Gaussian filtering with reflective borders.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;

/// Normalized 1D Gaussian truncated at radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(0.0) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    k
}

/// Symmetric reflection (`d c b a | a b c d | d c b a`) of an index into `0..n`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// One separable pass over every line of a `C×H×W` buffer.
/// `vertical` convolves along `H`; otherwise along `W`.
fn pass<T: Real>(src: &[T], c: usize, h: usize, w: usize, kernel: &[T], vertical: bool) -> Vec<T> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![T::zero(); src.len()];
    let (lines, len, stride, line_step) = if vertical { (w, h, w, 1) } else { (h, w, 1, w) };
    for ch in 0..c {
        let base = ch * h * w;
        for line in 0..lines {
            let origin = base + line * line_step;
            for i in 0..len {
                let mut acc = T::zero();
                for (t, &kv) in kernel.iter().enumerate() {
                    let j = reflect_index(i as isize + t as isize - r, len);
                    acc = acc + kv * src[origin + j * stride];
                }
                out[origin + i * stride] = acc;
            }
        }
    }
    out
}

fn pass_adjoint<T: Real>(g: &[T], c: usize, h: usize, w: usize, kernel: &[T], vertical: bool) -> Vec<T> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![T::zero(); g.len()];
    let (lines, len, stride, line_step) = if vertical { (w, h, w, 1) } else { (h, w, 1, w) };
    for ch in 0..c {
        let base = ch * h * w;
        for line in 0..lines {
            let origin = base + line * line_step;
            for i in 0..len {
                let gv = g[origin + i * stride];
                for (t, &kv) in kernel.iter().enumerate() {
                    let j = reflect_index(i as isize + t as isize - r, len);
                    out[origin + j * stride] = out[origin + j * stride] + kv * gv;
                }
            }
        }
    }
    out
}

/// Gaussian blur of each channel of a `C×H×W` buffer (outside the tape).
pub fn blur_channels<T: Real>(src: &[T], c: usize, h: usize, w: usize, sigma: f64) -> Vec<T> {
    let kernel: Vec<T> = gaussian_kernel(sigma)
        .into_iter()
        .map(T::from_f64_lossy)
        .collect();
    let tmp = pass(src, c, h, w, &kernel, false);
    pass(&tmp, c, h, w, &kernel, true)
}

impl<T: Real> Graph<T> {
    /// Per-channel Gaussian blur of a `C×H×W` tensor with a fixed kernel.
    pub fn gaussian_blur(&mut self, x: Var, sigma: f64) -> Result<Var> {
        if !(sigma > 0.0) {
            return Err(Error::Config(format!("gaussian sigma must be > 0, got {sigma}")));
        }
        let (c, h, w) = self.value(x).chw("gaussian_blur")?;
        let out = blur_channels(self.value(x).data(), c, h, w, sigma);
        let out = Tensor::new(&[c, h, w], out)?;
        let kernel: Vec<T> = gaussian_kernel(sigma)
            .into_iter()
            .map(T::from_f64_lossy)
            .collect();
        Ok(self.record(out, &[x], move |_, _, g, _| {
            let tmp = pass_adjoint(g.data(), c, h, w, &kernel, true);
            let gx = pass_adjoint(&tmp, c, h, w, &kernel, false);
            vec![Some(Tensor::new(&[c, h, w], gx).unwrap())]
        }))
    }
}
