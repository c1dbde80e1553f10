//! Generator network: a small U-Net mapping the stacked `[moving, fixed]`
//! pair to a two-channel displacement field.
//!
//! Every 3×3 convolution is zero-padded so skip connections align exactly.
//! Layout for `encoder_channels = [e0, .., eL]`, `decoder_channels = [d0, ..]`:
//!
//! - encoder level `i`: two 3×3 conv + ReLU at `M / 2^i`, then 2×2 max-pool
//! - bottleneck: two 3×3 conv + ReLU of width `eL`
//! - decoder level `j`: 2×2 up-conv to `d_j`, concat with the matching
//!   encoder output, two 3×3 conv + ReLU
//! - head: up-conv to `head_channels` at full resolution, concat with the
//!   first encoder output, one 3×3 conv + ReLU, then a 1×1 conv to 2 channels
//!   with no activation so displacements stay signed

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};
use crate::warp::{DisplacementField, Image};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Side length `M` of the square input images.
    pub input_size: usize,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub head_channels: usize,
    /// Number of pooling levels; equals the encoder level count.
    pub depth: usize,
    pub seed: u64,
}

impl UNetConfig {
    pub fn new(input_size: usize, seed: u64) -> Self {
        Self {
            input_size,
            encoder_channels: vec![16, 32, 64],
            decoder_channels: vec![64, 32],
            head_channels: 16,
            depth: 3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.encoder_channels.len() != self.depth {
            return Err(Error::Config(format!(
                "depth {} needs exactly that many encoder widths, got {:?}",
                self.depth, self.encoder_channels
            )));
        }
        if self.decoder_channels.len() + 1 != self.encoder_channels.len() {
            return Err(Error::Config(format!(
                "decoder needs one level fewer than the encoder: {:?} vs {:?}",
                self.decoder_channels, self.encoder_channels
            )));
        }
        let widths = self
            .encoder_channels
            .iter()
            .chain(&self.decoder_channels)
            .chain(std::iter::once(&self.head_channels));
        if widths.into_iter().any(|&c| c == 0) {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        let step = 1usize << self.depth;
        if self.input_size == 0 || !self.input_size.is_multiple_of(step) {
            return Err(Error::Config(format!(
                "input size {} must be a positive multiple of 2^{} = {step}",
                self.input_size, self.depth
            )));
        }
        Ok(())
    }

    /// Layers in the order the forward pass consumes them.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let conv3 = |c_in, c_out| LayerSpec {
            kind: LayerKind::Conv3x3,
            c_in,
            c_out,
        };
        let mut out = Vec::new();
        let mut c = 2;
        for &e in &self.encoder_channels {
            out.push(conv3(c, e));
            out.push(conv3(e, e));
            c = e;
        }
        out.push(conv3(c, c));
        out.push(conv3(c, c));
        let skips = self.encoder_channels.iter().rev();
        for (&d, &skip) in self.decoder_channels.iter().zip(skips) {
            out.push(LayerSpec {
                kind: LayerKind::UpConv2x2,
                c_in: c,
                c_out: d,
            });
            out.push(conv3(d + skip, d));
            out.push(conv3(d, d));
            c = d;
        }
        let h = self.head_channels;
        out.push(LayerSpec {
            kind: LayerKind::UpConv2x2,
            c_in: c,
            c_out: h,
        });
        out.push(conv3(h + self.encoder_channels[0], h));
        out.push(LayerSpec {
            kind: LayerKind::Conv1x1,
            c_in: h,
            c_out: 2,
        });
        out
    }
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self::new(128, 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv3x3,
    UpConv2x2,
    Conv1x1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
}

impl LayerSpec {
    pub fn kernel(&self) -> usize {
        match self.kind {
            LayerKind::Conv3x3 => 3,
            LayerKind::UpConv2x2 => 2,
            LayerKind::Conv1x1 => 1,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        let k = self.kernel();
        match self.kind {
            LayerKind::UpConv2x2 => [self.c_in, self.c_out, k, k],
            _ => [self.c_out, self.c_in, k, k],
        }
    }

    /// `k²·C_in·C_out + C_out`.
    pub fn parameter_count(&self) -> usize {
        let k = self.kernel();
        k * k * self.c_in * self.c_out + self.c_out
    }
}

/// Network weights: one `(weight, bias)` pair per layer, in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetParams<T> {
    config: UNetConfig,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> UNetParams<T> {
    /// He-normal weights (`std = sqrt(2 / (k²·C_in))`), zero biases, drawn
    /// from a generator seeded with `config.seed`.
    pub fn init(config: &UNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut tensors = Vec::new();
        for layer in config.layers() {
            let k = layer.kernel();
            let std = (2.0 / (k * k * layer.c_in) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let shape = layer.weight_shape();
            let n: usize = shape.iter().product();
            let w = (0..n)
                .map(|_| T::from_f64_lossy(normal.sample(&mut rng)))
                .collect();
            tensors.push(Tensor::new(&shape, w)?);
            tensors.push(Tensor::zeros(&[layer.c_out]));
        }
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    /// Wrap existing tensors, checking them against the layer list of
    /// `config`.
    pub fn from_tensors(config: &UNetConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let layers = config.layers();
        if tensors.len() != 2 * layers.len() {
            return Err(Error::shape(
                "unet params",
                format!("expected {} tensors, got {}", 2 * layers.len(), tensors.len()),
            ));
        }
        for (i, layer) in layers.iter().enumerate() {
            let (w, b) = (&tensors[2 * i], &tensors[2 * i + 1]);
            if w.shape() != layer.weight_shape() || b.shape() != [layer.c_out] {
                return Err(Error::shape(
                    "unet params",
                    format!("layer {i}: got {:?} and {:?}", w.shape(), b.shape()),
                ));
            }
        }
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn count_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Insert every tensor as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| g.param(t.clone())).collect()
    }

    /// Displacement field for a pair, outside any optimization.
    pub fn forward(&self, moving: &Image, fixed: &Image) -> Result<DisplacementField> {
        let mut g = Graph::new();
        let params: Vec<Var> = self.tensors.iter().map(|t| g.constant(t.clone())).collect();
        let m = g.constant(moving.to_tensor());
        let f = g.constant(fixed.to_tensor());
        let out = forward_var(&self.config, &mut g, &params, m, f)?;
        DisplacementField::from_tensor(g.value(out))
    }
}

/// Analytic parameter count of a configuration.
pub fn count_parameters(config: &UNetConfig) -> usize {
    config.layers().iter().map(LayerSpec::parameter_count).sum()
}

/// Forward pass on the tape. `params` are bound in layer order; `moving` and
/// `fixed` are `1×M×M`. Returns `2×M×M`.
pub fn forward_var<T: Real>(
    config: &UNetConfig,
    g: &mut Graph<T>,
    params: &[Var],
    moving: Var,
    fixed: Var,
) -> Result<Var> {
    let m = config.input_size;
    for v in [moving, fixed] {
        if g.shape(v) != [1, m, m] {
            return Err(Error::shape(
                "unet forward",
                format!("expected 1×{m}×{m} input, got {:?}", g.shape(v)),
            ));
        }
    }
    let layers = config.layers();
    if params.len() != 2 * layers.len() {
        return Err(Error::shape(
            "unet forward",
            format!("expected {} parameters, got {}", 2 * layers.len(), params.len()),
        ));
    }
    let mut next = 0;
    let mut layer = |g: &mut Graph<T>, x: Var, relu: bool| -> Result<Var> {
        let spec = layers[next];
        let (w, b) = (params[2 * next], params[2 * next + 1]);
        next += 1;
        let y = match spec.kind {
            LayerKind::Conv3x3 => g.conv2d(x, w, b, 1)?,
            LayerKind::Conv1x1 => g.conv2d(x, w, b, 0)?,
            LayerKind::UpConv2x2 => g.upconv2x2(x, w, b)?,
        };
        Ok(if relu { g.relu(y) } else { y })
    };

    let mut x = g.concat_channels(moving, fixed)?;
    let mut skips = Vec::with_capacity(config.depth);
    for _ in 0..config.depth {
        x = layer(g, x, true)?;
        x = layer(g, x, true)?;
        skips.push(x);
        x = g.maxpool2x2(x)?;
    }
    x = layer(g, x, true)?;
    x = layer(g, x, true)?;
    for _ in 0..config.decoder_channels.len() {
        let skip = skips.pop().expect("one skip per decoder level");
        x = layer(g, x, false)?;
        x = g.concat_channels(x, skip)?;
        x = layer(g, x, true)?;
        x = layer(g, x, true)?;
    }
    let skip = skips.pop().expect("first encoder output");
    x = layer(g, x, false)?;
    x = g.concat_channels(x, skip)?;
    x = layer(g, x, true)?;
    layer(g, x, false)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"UNPW";
const CHECKPOINT_VERSION: u16 = 1;

/// Write weights as `UNPW`, version, tensor count, then per tensor its rank,
/// dims and little-endian `f32` data.
pub fn write_checkpoint<T: Real>(params: &UNetParams<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for t in &params.tensors {
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Real>(config: &UNetConfig, path: &Path) -> Result<UNetParams<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(r.error(0, "bad magic, expected UNPW"));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.error(4, &format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(r.error(r.pos - 4, &format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(4 * n)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        tensors.push(Tensor::new(&shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(r.error(r.pos, "trailing bytes"));
    }
    UNetParams::from_tensors(config, tensors)
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn error(&self, offset: usize, reason: &str) -> Error {
        Error::format(self.path, offset as u64, reason)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(self.bytes.len(), "truncated"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
