use rand::Rng;

use super::{patch_fft_macs, Conv, Dffn, Norm, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor};

/// Circular cross-correlation of `q` and `k` inside every `patch x patch`
/// block, computed as `Re(ifft2(fft2(q) ⊙ conj(fft2(k))))`:
/// `A[t] = Σ_m q[m + t] k[m]` (indices mod `patch`).
pub fn correlation_map(g: &Graph, q: &Tensor, k: &Tensor, patch: usize) -> Result<Tensor> {
    q.shape().expect_eq(&k.shape())?;
    let fq = g.fft2_batched(q, patch)?;
    let fk = g.fft2_batched(k, patch)?;
    let prod = g.complex_mul(&fq, &fk, true)?;
    Ok(g.ifft2_batched(&prod, patch)?.re)
}

/// `(correlation_map(q, k) / patch²) ⊙ v`.
pub fn frequency_attention(g: &Graph, q: &Tensor, k: &Tensor, v: &Tensor, patch: usize) -> Result<Tensor> {
    let a = correlation_map(g, q, k, patch)?;
    let a = g.scalar_mul(&a, 1.0 / (patch * patch) as f64)?;
    g.mul(&a, v)
}

/// Frequency-domain self-attention.
///
/// Q, K, V come from a 1x1 projection followed by a 3x3 depthwise
/// convolution; the attention map replaces `QKᵀ` by an element-wise product
/// of patch spectra. Output: `x + project(A ⊙ V)`.
#[derive(Clone, Debug)]
pub struct Fsas {
    norm: Norm,
    qkv: Conv,
    depthwise: Conv,
    project: Conv,
    pub channels: usize,
    pub patch: usize,
}

impl Fsas {
    pub fn new(prefix: &str, channels: usize, patch: usize) -> Self {
        Fsas {
            norm: Norm::new(&format!("{prefix}.norm"), channels),
            qkv: Conv::new(&format!("{prefix}.qkv"), channels, 3 * channels, 1),
            depthwise: Conv::depthwise(&format!("{prefix}.dw"), 3 * channels),
            project: Conv::new(&format!("{prefix}.project"), channels, channels, 1),
            channels,
            patch,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.norm.init(store)?;
        self.qkv.init(store, rng)?;
        self.depthwise.init(store, rng)?;
        self.project.init(store, rng)
    }

    pub fn output_params(&self) -> [&str; 2] {
        self.project.param_names()
    }

    /// The `[Q, K, V]` projections of `x`.
    pub fn qkv(&self, g: &Graph, p: &ParamStore, x: &Tensor) -> Result<Vec<Tensor>> {
        let y = self.norm.forward(g, p, x)?;
        let y = self.qkv.forward(g, p, &y)?;
        let y = self.depthwise.forward(g, p, &y)?;
        g.split_channels(&y, &[self.channels; 3])
    }

    pub fn forward(&self, g: &Graph, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let qkv = self.qkv(g, p, x)?;
        let att = frequency_attention(g, &qkv[0], &qkv[1], &qkv[2], self.patch)?;
        let y = self.project.forward(g, p, &att)?;
        g.add(x, &y)
    }

    /// Multiply-adds of [`frequency_attention`] alone: three patch transforms.
    pub fn attention_macs(&self, n: usize, h: usize, w: usize) -> u64 {
        3 * patch_fft_macs(n, self.channels, h, w, self.patch)
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.qkv.macs(n, h, w)
            + self.depthwise.macs(n, h, w)
            + self.attention_macs(n, h, w)
            + self.project.macs(n, h, w)
    }
}

/// Cross-scale fusion: all three encoder outputs resampled to one level,
/// concatenated, then `1x1 -> GELU -> 3x3`.
#[derive(Clone, Debug)]
pub struct Aff {
    squeeze: Conv,
    mix: Conv,
    pub widths: [usize; 3],
    pub target: usize,
}

impl Aff {
    /// `target` is the zero-based level (0 = full resolution).
    pub fn new(prefix: &str, widths: [usize; 3], target: usize) -> Result<Self> {
        if target >= widths.len() {
            return Err(Error::contract(format!("AFF target level {target} out of range")));
        }
        let out = widths[target];
        let total = widths.iter().sum();
        Ok(Aff {
            squeeze: Conv::new(&format!("{prefix}.conv1x1"), total, out, 1),
            mix: Conv::new(&format!("{prefix}.conv3x3"), out, out, 3),
            widths,
            target,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.squeeze.init(store, rng)?;
        self.mix.init(store, rng)
    }

    fn resample(&self, g: &Graph, x: &Tensor, level: usize) -> Result<Tensor> {
        if level < self.target {
            let mut y = x.clone();
            for _ in level..self.target {
                y = g.downsample_bilinear(&y)?;
            }
            Ok(y)
        } else if level > self.target {
            g.upsample_bilinear(x, 1 << (level - self.target))
        } else {
            Ok(x.clone())
        }
    }

    pub fn forward(&self, g: &Graph, p: &ParamStore, enc: [&Tensor; 3]) -> Result<Tensor> {
        let batch = enc[0].shape().n();
        if enc.iter().any(|e| e.shape().n() != batch) {
            return Err(Error::dim("batch", "encoder outputs disagree on batch size"));
        }
        let parts = enc
            .iter()
            .enumerate()
            .map(|(level, e)| self.resample(g, e, level))
            .collect::<Result<Vec<_>>>()?;
        let cat = g.concat_channels(&parts.iter().collect::<Vec<_>>())?;
        let y = g.gelu(&self.squeeze.forward(g, p, &cat)?)?;
        self.mix.forward(g, p, &y)
    }

    /// Multiply-adds at the target resolution `h x w`.
    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.squeeze.macs(n, h, w) + self.mix.macs(n, h, w)
    }
}

/// Concatenate, run a DFFN of twice the width, split and sum the halves.
#[derive(Clone, Debug)]
pub struct Fuse {
    pub dffn: Dffn,
    pub channels: usize,
}

impl Fuse {
    pub fn new(prefix: &str, channels: usize, patch: usize) -> Self {
        Fuse {
            dffn: Dffn::new(&format!("{prefix}.dffn"), 2 * channels, patch),
            channels,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.dffn.init(store, rng)
    }

    pub fn forward(&self, g: &Graph, p: &ParamStore, aff_out: &Tensor, below_up: &Tensor) -> Result<Tensor> {
        let (a, b) = (aff_out.shape(), below_up.shape());
        if a.h() != b.h() {
            return Err(Error::dim("height", format!("cannot fuse {a} with {b}")));
        }
        if a.w() != b.w() {
            return Err(Error::dim("width", format!("cannot fuse {a} with {b}")));
        }
        let cat = g.concat_channels(&[aff_out, below_up])?;
        let y = self.dffn.forward(g, p, &cat)?;
        let halves = g.split_channels(&y, &[self.channels, self.channels])?;
        g.add(&halves[0], &halves[1])
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.dffn.macs(n, h, w)
    }
}
