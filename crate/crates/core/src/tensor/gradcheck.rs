//! Central finite-difference checks of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// `⟨∇f(x), v⟩` from the tape.
    pub analytic: f64,
    /// `(f(x + h·v) - f(x - h·v)) / 2h`.
    pub numeric: f64,
}

impl GradCheck {
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(1e-12);
        (self.analytic - self.numeric).abs() / scale
    }
}

/// Compare the directional derivative of a scalar function along a random
/// direction in `[-1, 1]^n` against a central difference with step `h`.
///
/// `f` receives a fresh graph and the input variable and must return a
/// one-element result.
pub fn check_directional<F>(f: F, x: &Tensor<f64>, h: f64, seed: u64) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    check_along(f, x, &dir, h)
}

pub fn check_along<F>(f: F, x: &Tensor<f64>, dir: &[f64], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let eval = |t: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(t);
        let out = f(&mut g, v)?;
        Ok(g.value(out).item())
    };
    let shifted = |sign: f64| {
        let data = x
            .data()
            .iter()
            .zip(dir)
            .map(|(&a, &d)| a + sign * h * d)
            .collect();
        Tensor::new(x.shape(), data).expect("same shape")
    };
    let numeric = (eval(shifted(1.0))? - eval(shifted(-1.0))?) / (2.0 * h);

    let mut g = Graph::new();
    let v = g.param(x.clone());
    let out = f(&mut g, v)?;
    let grads = g.backward(out)?;
    let analytic = grads
        .get(v)
        .map(|gr| gr.data().iter().zip(dir).map(|(a, b)| a * b).sum())
        .unwrap_or(0.0);
    Ok(GradCheck { analytic, numeric })
}

/// Random tensor with entries uniform in `[lo, hi)`.
pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("consistent shape")
}
