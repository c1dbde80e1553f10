//! Independent reference implementations used as test oracles. Nothing here
//! goes through the tape.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpforge::{DisplacementField, Image};

pub fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    Image::new(h, w, values).unwrap()
}

pub fn random_field(h: usize, w: usize, amplitude: f64, seed: u64) -> DisplacementField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..2 * h * w)
        .map(|_| rng.random_range(-amplitude..amplitude))
        .collect();
    DisplacementField::from_planes(h, w, data).unwrap()
}

pub fn mse(d: &Image, f: &Image) -> f64 {
    let n = d.values().len() as f64;
    d.values()
        .iter()
        .zip(f.values())
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        / n
}

pub fn pcc(d: &Image, f: &Image) -> f64 {
    let n = d.values().len() as f64;
    let md = d.values().iter().sum::<f64>() / n;
    let mf = f.values().iter().sum::<f64>() / n;
    let (mut cov, mut vd, mut vf) = (0.0, 0.0, 0.0);
    for (a, b) in d.values().iter().zip(f.values()) {
        cov += (a - md) * (b - mf);
        vd += (a - md) * (a - md);
        vf += (b - mf) * (b - mf);
    }
    cov / (vd.sqrt() * vf.sqrt())
}

fn window(img: &Image, y: usize, x: usize, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k * k);
    for a in 0..k {
        for b in 0..k {
            out.push(img.get(y + a, x + b));
        }
    }
    out
}

pub fn local_cc(d: &Image, f: &Image, k: usize, eps: f64) -> f64 {
    let mut total = 0.0;
    for y in 0..=d.height() - k {
        for x in 0..=d.width() - k {
            let wd = window(d, y, x, k);
            let wf = window(f, y, x, k);
            let n = wd.len() as f64;
            let md = wd.iter().sum::<f64>() / n;
            let mf = wf.iter().sum::<f64>() / n;
            let mut cross = 0.0;
            let mut vd = 0.0;
            let mut vf = 0.0;
            for (a, b) in wd.iter().zip(&wf) {
                cross += (b - mf) * (a - md);
                vd += (a - md) * (a - md);
                vf += (b - mf) * (b - mf);
            }
            total += cross * cross / (vf * vd + eps);
        }
    }
    total
}

pub fn ssim_window(wd: &[f64], wf: &[f64], c1: f64, c2: f64) -> f64 {
    let n = wd.len() as f64;
    let md = wd.iter().sum::<f64>() / n;
    let mf = wf.iter().sum::<f64>() / n;
    let vd = wd.iter().map(|a| (a - md) * (a - md)).sum::<f64>() / n;
    let vf = wf.iter().map(|b| (b - mf) * (b - mf)).sum::<f64>() / n;
    let cov = wd.iter().zip(wf).map(|(a, b)| (a - md) * (b - mf)).sum::<f64>() / n;
    ((2.0 * md * mf + c1) * (2.0 * cov + c2)) / ((md * md + mf * mf + c1) * (vd + vf + c2))
}

pub fn ssim(d: &Image, f: &Image, k: usize, c1: f64, c2: f64) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for y in 0..=d.height() - k {
        for x in 0..=d.width() - k {
            total += ssim_window(&window(d, y, x, k), &window(f, y, x, k), c1, c2);
            count += 1;
        }
    }
    total / count as f64
}

/// MI of the empirical joint histogram, intensities quantized to the nearest
/// of `bins` uniform anchors on `[0, 1]`.
pub fn histogram_mi(d: &Image, f: &Image, bins: usize) -> f64 {
    let q = |v: f64| ((v * (bins - 1) as f64).round() as usize).min(bins - 1);
    let mut joint = vec![0.0; bins * bins];
    for (a, b) in d.values().iter().zip(f.values()) {
        joint[q(*b) * bins + q(*a)] += 1.0;
    }
    let n = d.values().len() as f64;
    let mut pf = vec![0.0; bins];
    let mut pd = vec![0.0; bins];
    for i in 0..bins {
        for j in 0..bins {
            let p = joint[i * bins + j] / n;
            pf[i] += p;
            pd[j] += p;
        }
    }
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let p = joint[i * bins + j] / n;
            if p > 0.0 {
                mi += p * (p / (pf[i] * pd[j])).ln();
            }
        }
    }
    mi
}

/// Forward differences with the last row/column omitted: returns
/// `(∂x u_x, ∂y u_x, ∂x u_y, ∂y u_y)` at `(y, x)`, zero where no neighbour.
pub fn gradients(u: &DisplacementField, y: usize, x: usize) -> [f64; 4] {
    let (h, w) = u.dims();
    let (ux, uy) = u.get(y, x);
    let (mut dxx, mut dyx, mut dxy, mut dyy) = (0.0, 0.0, 0.0, 0.0);
    if x + 1 < w {
        let (a, b) = u.get(y, x + 1);
        dxx = a - ux;
        dxy = b - uy;
    }
    if y + 1 < h {
        let (a, b) = u.get(y + 1, x);
        dyx = a - ux;
        dyy = b - uy;
    }
    [dxx, dyx, dxy, dyy]
}

pub fn diffusion(u: &DisplacementField) -> f64 {
    let mut total = 0.0;
    for y in 0..u.height() {
        for x in 0..u.width() {
            total += gradients(u, y, x).iter().map(|v| v * v).sum::<f64>();
        }
    }
    total
}

pub fn tv(u: &DisplacementField) -> f64 {
    let mut total = 0.0;
    for y in 0..u.height() {
        for x in 0..u.width() {
            total += gradients(u, y, x).iter().map(|v| v.abs()).sum::<f64>();
        }
    }
    total
}

/// `det(I + ∇u)` at every site with both forward neighbours.
pub fn determinants(u: &DisplacementField) -> Vec<f64> {
    let mut out = Vec::new();
    for y in 0..u.height() - 1 {
        for x in 0..u.width() - 1 {
            let [dxx, dyx, dxy, dyy] = gradients(u, y, x);
            let m = [[1.0 + dxx, dyx], [dxy, 1.0 + dyy]];
            out.push(m[0][0] * m[1][1] - m[0][1] * m[1][0]);
        }
    }
    out
}

pub fn jacobian_penalty(u: &DisplacementField) -> f64 {
    determinants(u).iter().map(|d| d.abs() - d).sum()
}

pub fn fold_count(u: &DisplacementField) -> usize {
    determinants(u).iter().filter(|&&d| d <= 0.0).count()
}

/// Spearman rank correlation with average ranks for ties. Zero when either
/// side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}
