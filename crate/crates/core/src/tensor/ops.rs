//! Elementwise, reduction, pooling and layout operations on the tape.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::{gemm, MatRef, Real};

/// Spatial axis of a `C×H×W` tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpatialAxis {
    /// Along `H` (the y direction).
    Rows,
    /// Along `W` (the x direction).
    Cols,
}

fn same_shape<T: Real>(g: &Graph<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(op, format!("{:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

fn scalar_var<T: Real>(g: &Graph<T>, op: &'static str, s: Var) -> Result<()> {
    if g.value(s).len() != 1 {
        return Err(Error::shape(
            op,
            format!("expected a scalar operand, got {:?}", g.shape(s)),
        ));
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.record(out, &[a, b], |_, _, g, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.record(out, &[a, b], |_, _, g, _| {
            vec![Some(g.clone()), Some(g.map(|v| -v))]
        }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.record(out, &[a, b], |inp, _, g, needs| {
            vec![
                needs[0].then(|| g.zip_map(inp[1], |gv, y| gv * y)),
                needs[1].then(|| g.zip_map(inp[0], |gv, x| gv * x)),
            ]
        }))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "div", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x / y);
        Ok(self.record(out, &[a, b], |inp, out, g, needs| {
            vec![
                needs[0].then(|| g.zip_map(inp[1], |gv, y| gv / y)),
                needs[1].then(|| {
                    let q = out.zip_map(inp[1], |o, y| o / y);
                    g.zip_map(&q, |gv, q| -gv * q)
                }),
            ]
        }))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.mul_scalar(x, -T::one())
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.record(out, &[x], |_, _, g, _| vec![Some(g.clone())])
    }

    pub fn mul_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.record(out, &[x], move |_, _, g, _| vec![Some(g.map(|v| v * c))])
    }

    /// `x + s` where `s` is a one-element variable.
    pub fn add_s(&mut self, x: Var, s: Var) -> Result<Var> {
        scalar_var(self, "add_s", s)?;
        let sv = self.value(s).item();
        let out = self.value(x).map(|v| v + sv);
        let shape = self.shape(s).to_vec();
        Ok(self.record(out, &[x, s], move |_, _, g, needs| {
            vec![
                needs[0].then(|| g.clone()),
                needs[1].then(|| Tensor::full(&shape, g.data().iter().copied().sum())),
            ]
        }))
    }

    pub fn sub_s(&mut self, x: Var, s: Var) -> Result<Var> {
        let neg = self.neg(s);
        self.add_s(x, neg)
    }

    /// `x · s` where `s` is a one-element variable.
    pub fn mul_s(&mut self, x: Var, s: Var) -> Result<Var> {
        scalar_var(self, "mul_s", s)?;
        let sv = self.value(s).item();
        let out = self.value(x).map(|v| v * sv);
        let shape = self.shape(s).to_vec();
        Ok(self.record(out, &[x, s], move |inp, _, g, needs| {
            vec![
                needs[0].then(|| g.map(|v| v * sv)),
                needs[1].then(|| Tensor::full(&shape, g.dot(inp[0]))),
            ]
        }))
    }

    /// `x / s` where `s` is a one-element variable.
    pub fn div_s(&mut self, x: Var, s: Var) -> Result<Var> {
        scalar_var(self, "div_s", s)?;
        let sv = self.value(s).item();
        let out = self.value(x).map(|v| v / sv);
        let shape = self.shape(s).to_vec();
        Ok(self.record(out, &[x, s], move |_, out, g, needs| {
            vec![
                needs[0].then(|| g.map(|v| v / sv)),
                needs[1].then(|| Tensor::full(&shape, -g.dot(out) / sv)),
            ]
        }))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.sqrt());
        self.record(out, &[x], |_, out, g, _| {
            let two = T::one() + T::one();
            vec![Some(g.zip_map(out, |gv, y| gv / (two * y)))]
        })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.exp());
        self.record(out, &[x], |_, out, g, _| {
            vec![Some(g.zip_map(out, |gv, y| gv * y))]
        })
    }

    /// Absolute value; the subgradient at zero is zero.
    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.abs());
        self.record(out, &[x], |inp, _, g, _| {
            vec![Some(g.zip_map(inp[0], |gv, v| {
                if v > T::zero() {
                    gv
                } else if v < T::zero() {
                    -gv
                } else {
                    T::zero()
                }
            }))]
        })
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.record(out, &[x], |inp, _, g, _| {
            vec![Some(g.zip_map(inp[0], |gv, v| gv * (v + v)))]
        })
    }

    /// `max(0, x)`; gradient passes only where `x > 0`.
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.record(out, &[x], |inp, _, g, _| {
            vec![Some(g.zip_map(inp[0], |gv, v| {
                if v > T::zero() {
                    gv
                } else {
                    T::zero()
                }
            }))]
        })
    }

    /// `x·ln x` with `0·ln 0 := 0`. Non-positive entries get a zero gradient.
    pub fn xlogx(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v * v.ln() } else { T::zero() });
        self.record(out, &[x], |inp, _, g, _| {
            vec![Some(g.zip_map(inp[0], |gv, v| {
                if v > T::zero() {
                    gv * (v.ln() + T::one())
                } else {
                    T::zero()
                }
            }))]
        })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: T = self.value(x).data().iter().copied().sum();
        let shape = self.shape(x).to_vec();
        self.record(Tensor::scalar(total), &[x], move |_, _, g, _| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::from_usize(self.value(x).len()).unwrap();
        let s = self.sum(x);
        self.mul_scalar(s, T::one() / n)
    }

    /// Sum over one axis; the axis is removed from the output shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("sum_axis", format!("axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d = *d + s;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let out = Tensor::new(&out_shape, out)?;
        Ok(self.record(out, &[x], move |_, _, g, _| {
            let gd = g.data();
            let mut gx = vec![T::zero(); outer * len * inner];
            for o in 0..outer {
                for a in 0..len {
                    let base = (o * len + a) * inner;
                    gx[base..base + inner].copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(Tensor::new(&shape, gx).unwrap())]
        }))
    }

    /// Matrix product of rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = match (self.shape(a), self.shape(b)) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            (sa, sb) => {
                return Err(Error::shape("matmul", format!("{sa:?} · {sb:?}")));
            }
        };
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            MatRef::row_major(self.value(a).data(), k),
            MatRef::row_major(self.value(b).data(), n),
            T::zero(),
            &mut out,
        );
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.record(out, &[a, b], move |inp, _, g, needs| {
            let ga = needs[0].then(|| {
                let mut ga = vec![T::zero(); m * k];
                gemm(
                    m,
                    n,
                    k,
                    MatRef::row_major(g.data(), n),
                    MatRef::transposed(inp[1].data(), n),
                    T::zero(),
                    &mut ga,
                );
                Tensor::new(&[m, k], ga).unwrap()
            });
            let gb = needs[1].then(|| {
                let mut gb = vec![T::zero(); k * n];
                gemm(
                    k,
                    m,
                    n,
                    MatRef::transposed(inp[0].data(), k),
                    MatRef::row_major(g.data(), n),
                    T::zero(),
                    &mut gb,
                );
                Tensor::new(&[k, n], gb).unwrap()
            });
            vec![ga, gb]
        }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = match self.shape(x) {
            [r, c] => (*r, *c),
            s => return Err(Error::shape("transpose", format!("expected rank 2, got {s:?}"))),
        };
        let out = Tensor::new(&[c, r], transpose_data(self.value(x).data(), r, c))?;
        Ok(self.record(out, &[x], move |_, _, g, _| {
            vec![Some(
                Tensor::new(&[r, c], transpose_data(g.data(), c, r)).unwrap(),
            )]
        }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let old = self.shape(x).to_vec();
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.record(out, &[x], move |_, _, g, _| {
            vec![Some(g.clone().reshape(&old).unwrap())]
        }))
    }

    /// 2×2 max pooling with stride 2. Ties route the gradient to the first
    /// element of the block in row-major order.
    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw("maxpool2x2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "maxpool2x2",
                format!("spatial extent {h}×{w} must be even"),
            ));
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            let plane = ch * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let candidates = [
                        plane + 2 * i * w + 2 * j,
                        plane + 2 * i * w + 2 * j + 1,
                        plane + (2 * i + 1) * w + 2 * j,
                        plane + (2 * i + 1) * w + 2 * j + 1,
                    ];
                    let mut best = candidates[0];
                    for &cand in &candidates[1..] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::new(&[c, ho, wo], out)?;
        let in_shape = [c, h, w];
        Ok(self.record(out, &[x], move |_, _, g, _| {
            let mut gx = Tensor::zeros(&in_shape);
            let gxd = gx.data_mut();
            for (&src_idx, &gv) in argmax.iter().zip(g.data()) {
                gxd[src_idx] = gxd[src_idx] + gv;
            }
            vec![Some(gx)]
        }))
    }

    /// Stack two `C×H×W` tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).chw("concat_channels")?;
        let (cb, hb, wb) = self.value(b).chw("concat_channels")?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                format!("spatial {ha}×{wa} vs {hb}×{wb}"),
            ));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let out = Tensor::new(&[ca + cb, ha, wa], data)?;
        let split = ca * ha * wa;
        Ok(self.record(out, &[a, b], move |_, _, g, needs| {
            let (ga, gb) = g.data().split_at(split);
            vec![
                needs[0].then(|| Tensor::new(&[ca, ha, wa], ga.to_vec()).unwrap()),
                needs[1].then(|| Tensor::new(&[cb, hb, wb], gb.to_vec()).unwrap()),
            ]
        }))
    }

    /// Channels `start..start + len` of a `C×H×W` tensor.
    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw("narrow_channels")?;
        if start + len > c {
            return Err(Error::shape(
                "narrow_channels",
                format!("channels {start}..{} of {c}", start + len),
            ));
        }
        let plane = h * w;
        let data = self.value(x).data()[start * plane..(start + len) * plane].to_vec();
        let out = Tensor::new(&[len, h, w], data)?;
        Ok(self.record(out, &[x], move |_, _, g, _| {
            let mut gx = vec![T::zero(); c * plane];
            gx[start * plane..(start + len) * plane].copy_from_slice(g.data());
            vec![Some(Tensor::new(&[c, h, w], gx).unwrap())]
        }))
    }

    /// Forward difference `x[i+1] - x[i]` along a spatial axis. The last
    /// row (or column) has no forward neighbour and is zero.
    pub fn forward_diff(&mut self, x: Var, axis: SpatialAxis) -> Result<Var> {
        let (c, h, w) = self.value(x).chw("forward_diff")?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); c * h * w];
        let (step, valid) = diff_layout(axis, h, w);
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    if valid(i, j) {
                        let idx = (ch * h + i) * w + j;
                        out[idx] = src[idx + step] - src[idx];
                    }
                }
            }
        }
        let out = Tensor::new(&[c, h, w], out)?;
        Ok(self.record(out, &[x], move |_, _, g, _| {
            let gd = g.data();
            let mut gx = vec![T::zero(); c * h * w];
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        if valid(i, j) {
                            let idx = (ch * h + i) * w + j;
                            gx[idx] = gx[idx] - gd[idx];
                            gx[idx + step] = gx[idx + step] + gd[idx];
                        }
                    }
                }
            }
            vec![Some(Tensor::new(&[c, h, w], gx).unwrap())]
        }))
    }

    /// Sum over every fully contained `k×k` window of each channel:
    /// `C×H×W -> C×(H-k+1)×(W-k+1)`.
    pub fn box_sum(&mut self, x: Var, k: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw("box_sum")?;
        if k == 0 || k > h || k > w {
            return Err(Error::shape(
                "box_sum",
                format!("window {k} does not fit {h}×{w}"),
            ));
        }
        let (ho, wo) = (h - k + 1, w - k + 1);
        let out = box_sum_forward(self.value(x).data(), c, h, w, k);
        let out = Tensor::new(&[c, ho, wo], out)?;
        Ok(self.record(out, &[x], move |_, _, g, _| {
            let gx = box_sum_adjoint(g.data(), c, h, w, k);
            vec![Some(Tensor::new(&[c, h, w], gx).unwrap())]
        }))
    }
}

/// Flat offset of the forward neighbour, and whether site `(i, j)` has one.
fn diff_layout(axis: SpatialAxis, h: usize, w: usize) -> (usize, impl Fn(usize, usize) -> bool) {
    let step = match axis {
        SpatialAxis::Rows => w,
        SpatialAxis::Cols => 1,
    };
    (step, move |i: usize, j: usize| match axis {
        SpatialAxis::Rows => i + 1 < h,
        SpatialAxis::Cols => j + 1 < w,
    })
}

fn transpose_data<T: Copy>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * cols);
    for j in 0..cols {
        for i in 0..rows {
            out.push(src[i * cols + j]);
        }
    }
    out
}

fn box_sum_forward<T: Real>(src: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![T::zero(); c * h * wo];
    for ch in 0..c {
        for i in 0..h {
            let line = &src[(ch * h + i) * w..(ch * h + i + 1) * w];
            let dst = &mut rows[(ch * h + i) * wo..(ch * h + i + 1) * wo];
            for (j, d) in dst.iter_mut().enumerate() {
                *d = line[j..j + k].iter().copied().sum();
            }
        }
    }
    let mut out = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        for i in 0..ho {
            let dst = &mut out[(ch * ho + i) * wo..(ch * ho + i + 1) * wo];
            for a in 0..k {
                let line = &rows[(ch * h + i + a) * wo..(ch * h + i + a + 1) * wo];
                for (d, &s) in dst.iter_mut().zip(line) {
                    *d = *d + s;
                }
            }
        }
    }
    out
}

fn box_sum_adjoint<T: Real>(g: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![T::zero(); c * h * wo];
    for ch in 0..c {
        for i in 0..ho {
            let line = &g[(ch * ho + i) * wo..(ch * ho + i + 1) * wo];
            for a in 0..k {
                let dst = &mut rows[(ch * h + i + a) * wo..(ch * h + i + a + 1) * wo];
                for (d, &s) in dst.iter_mut().zip(line) {
                    *d = *d + s;
                }
            }
        }
    }
    let mut gx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for i in 0..h {
            let line = &rows[(ch * h + i) * wo..(ch * h + i + 1) * wo];
            let dst = &mut gx[(ch * h + i) * w..(ch * h + i + 1) * w];
            for (j, &s) in line.iter().enumerate() {
                for d in &mut dst[j..j + k] {
                    *d = *d + s;
                }
            }
        }
    }
    gx
}
