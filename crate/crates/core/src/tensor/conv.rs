//! Convolution kernels: `k×k` cross-correlation via im2col + GEMM, and the
//! stride-2 `2×2` transposed convolution used for upsampling.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::{gemm, MatRef, Real};

#[derive(Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Output columns `[lo, hi)` whose input column `ox + kx - pad` is in range.
    fn valid_span(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).min(self.wo);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.wo).max(lo);
        (lo, hi)
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let cols = g.cols();
    let mut col = vec![T::zero(); g.rows() * cols];
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                let (lo, hi) = g.valid_span(kx);
                if lo == hi {
                    continue;
                }
                for oy in 0..g.ho {
                    let iy = oy + ky;
                    if iy < g.pad || iy - g.pad >= g.h {
                        continue;
                    }
                    let src_row = &plane[(iy - g.pad) * g.w..(iy - g.pad + 1) * g.w];
                    let ix0 = lo + kx - g.pad;
                    dst[oy * g.wo + lo..oy * g.wo + hi].copy_from_slice(&src_row[ix0..ix0 + (hi - lo)]);
                }
            }
        }
    }
    col
}

fn col2im<T: Real>(col: &[T], g: &ConvGeom) -> Vec<T> {
    let cols = g.cols();
    let mut x = vec![T::zero(); g.cin * g.h * g.w];
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &col[row * cols..(row + 1) * cols];
                let (lo, hi) = g.valid_span(kx);
                if lo == hi {
                    continue;
                }
                for oy in 0..g.ho {
                    let iy = oy + ky;
                    if iy < g.pad || iy - g.pad >= g.h {
                        continue;
                    }
                    let ix0 = lo + kx - g.pad;
                    let dst = &mut plane[(iy - g.pad) * g.w + ix0..(iy - g.pad) * g.w + ix0 + (hi - lo)];
                    for (d, &s) in dst.iter_mut().zip(&src[oy * g.wo + lo..oy * g.wo + hi]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
    x
}

impl<T: Real> Graph<T> {
    /// 2D cross-correlation with zero padding:
    /// `C_in×H×W ⋆ C_out×C_in×k×k + bias -> C_out×H'×W'`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, padding: usize) -> Result<Var> {
        let (cin, h, w) = self.value(x).chw("conv2d")?;
        let (cout, k) = match self.shape(weight) {
            [co, ci, ky, kx] if *ci == cin && ky == kx => (*co, *ky),
            s => {
                return Err(Error::shape(
                    "conv2d",
                    format!("weight {s:?} incompatible with input channels {cin}"),
                ))
            }
        };
        if self.shape(bias) != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias {:?}, expected [{cout}]", self.shape(bias)),
            ));
        }
        if h + 2 * padding < k || w + 2 * padding < k {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {k} exceeds padded {h}×{w}"),
            ));
        }
        let geom = ConvGeom {
            cin,
            h,
            w,
            k,
            pad: padding,
            ho: h + 2 * padding - k + 1,
            wo: w + 2 * padding - k + 1,
        };
        let direct = k == 1 && padding == 0;
        let cols = geom.cols();
        let mut out = vec![T::zero(); cout * cols];
        for (co, &b) in self.value(bias).data().iter().enumerate() {
            out[co * cols..(co + 1) * cols].fill(b);
        }
        {
            let owned;
            let col: &[T] = if direct {
                self.value(x).data()
            } else {
                owned = im2col(self.value(x).data(), &geom);
                &owned
            };
            gemm(
                cout,
                geom.rows(),
                cols,
                MatRef::row_major(self.value(weight).data(), geom.rows()),
                MatRef::row_major(col, cols),
                T::one(),
                &mut out,
            );
        }
        let out = Tensor::new(&[cout, geom.ho, geom.wo], out)?;
        Ok(self.record(out, &[x, weight, bias], move |inp, _, g, needs| {
            let gd = g.data();
            let rows = geom.rows();
            let owned;
            let col: &[T] = if direct {
                inp[0].data()
            } else if needs[1] {
                owned = im2col(inp[0].data(), &geom);
                &owned
            } else {
                &[]
            };
            let gx = needs[0].then(|| {
                let mut gcol = vec![T::zero(); rows * cols];
                gemm(
                    rows,
                    cout,
                    cols,
                    MatRef::transposed(inp[1].data(), rows),
                    MatRef::row_major(gd, cols),
                    T::zero(),
                    &mut gcol,
                );
                let gx = if direct { gcol } else { col2im(&gcol, &geom) };
                Tensor::new(&[geom.cin, geom.h, geom.w], gx).unwrap()
            });
            let gw = needs[1].then(|| {
                let mut gw = vec![T::zero(); cout * rows];
                gemm(
                    cout,
                    cols,
                    rows,
                    MatRef::row_major(gd, cols),
                    MatRef::transposed(col, cols),
                    T::zero(),
                    &mut gw,
                );
                Tensor::new(inp[1].shape(), gw).unwrap()
            });
            let gb = needs[2].then(|| {
                let sums = gd.chunks(cols).map(|c| c.iter().copied().sum()).collect();
                Tensor::new(&[cout], sums).unwrap()
            });
            vec![gx, gw, gb]
        }))
    }

    /// Stride-2 `2×2` transposed convolution:
    /// `C_in×H×W`, weight `C_in×C_out×2×2` -> `C_out×2H×2W`.
    pub fn upconv2x2(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (cin, h, w) = self.value(x).chw("upconv2x2")?;
        let cout = match self.shape(weight) {
            [ci, co, 2, 2] if *ci == cin => *co,
            s => {
                return Err(Error::shape(
                    "upconv2x2",
                    format!("weight {s:?} incompatible with input channels {cin}"),
                ))
            }
        };
        if self.shape(bias) != [cout] {
            return Err(Error::shape(
                "upconv2x2",
                format!("bias {:?}, expected [{cout}]", self.shape(bias)),
            ));
        }
        let hw = h * w;
        let taps = cout * 4;
        // cols[(co·4 + dy·2 + dx), pixel] = Σ_ci w[ci, co, dy, dx] · x[ci, pixel]
        let mut cols = vec![T::zero(); taps * hw];
        gemm(
            taps,
            cin,
            hw,
            MatRef::transposed(self.value(weight).data(), taps),
            MatRef::row_major(self.value(x).data(), hw),
            T::zero(),
            &mut cols,
        );
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); cout * ho * wo];
        let bias_v = self.value(bias).data();
        for co in 0..cout {
            for dy in 0..2 {
                for dx in 0..2 {
                    let src = &cols[(co * 4 + dy * 2 + dx) * hw..][..hw];
                    for i in 0..h {
                        let dst_row = (co * ho + 2 * i + dy) * wo;
                        for j in 0..w {
                            out[dst_row + 2 * j + dx] = src[i * w + j] + bias_v[co];
                        }
                    }
                }
            }
        }
        let out = Tensor::new(&[cout, ho, wo], out)?;
        Ok(self.record(out, &[x, weight, bias], move |inp, _, g, needs| {
            let gd = g.data();
            let mut gcols = vec![T::zero(); taps * hw];
            for co in 0..cout {
                for dy in 0..2 {
                    for dx in 0..2 {
                        let dst = &mut gcols[(co * 4 + dy * 2 + dx) * hw..][..hw];
                        for i in 0..h {
                            let src_row = (co * ho + 2 * i + dy) * wo;
                            for j in 0..w {
                                dst[i * w + j] = gd[src_row + 2 * j + dx];
                            }
                        }
                    }
                }
            }
            let gx = needs[0].then(|| {
                let mut gx = vec![T::zero(); cin * hw];
                gemm(
                    cin,
                    taps,
                    hw,
                    MatRef::row_major(inp[1].data(), taps),
                    MatRef::row_major(&gcols, hw),
                    T::zero(),
                    &mut gx,
                );
                Tensor::new(&[cin, h, w], gx).unwrap()
            });
            let gw = needs[1].then(|| {
                let mut gw = vec![T::zero(); cin * taps];
                gemm(
                    cin,
                    hw,
                    taps,
                    MatRef::row_major(inp[0].data(), hw),
                    MatRef::transposed(&gcols, hw),
                    T::zero(),
                    &mut gw,
                );
                Tensor::new(inp[1].shape(), gw).unwrap()
            });
            let gb = needs[2].then(|| {
                let per = ho * wo;
                let sums = gd.chunks(per).map(|c| c.iter().copied().sum()).collect();
                Tensor::new(&[cout], sums).unwrap()
            });
            vec![gx, gw, gb]
        }))
    }
}
