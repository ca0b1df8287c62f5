use rand::Rng;

use super::{Conv, Norm, ParamStore};
use crate::error::Result;
use crate::tensor::{Graph, Tensor};

/// Scaled dot-product attention within each `patch x patch` block:
/// `softmax(QKᵀ / sqrt(C·patch²)) V` over the `patch²` tokens of the block.
pub fn softmax_attention(g: &Graph, q: &Tensor, k: &Tensor, v: &Tensor, patch: usize) -> Result<Tensor> {
    let shape = q.shape();
    shape.expect_eq(&k.shape())?;
    shape.expect_eq(&v.shape())?;
    let tq = g.patch_tokens(q, patch)?;
    let tk = g.patch_tokens(k, patch)?;
    let tv = g.patch_tokens(v, patch)?;
    let scores = g.batched_matmul(&tq, &g.transpose_hw(&tk)?)?;
    let scale = 1.0 / ((shape.c() * patch * patch) as f64).sqrt();
    let weights = g.softmax_lastdim(&g.scalar_mul(&scores, scale)?)?;
    let out = g.batched_matmul(&weights, &tv)?;
    g.tokens_to_image(&out, shape, patch)
}

/// Spatial self-attention block with the same projections as
/// [`super::Fsas`]: `x + project(softmax_attention(Q, K, V))`.
#[derive(Clone, Debug)]
pub struct BaselineAttention {
    norm: Norm,
    qkv: Conv,
    depthwise: Conv,
    project: Conv,
    pub channels: usize,
    pub patch: usize,
}

impl BaselineAttention {
    pub fn new(prefix: &str, channels: usize, patch: usize) -> Self {
        BaselineAttention {
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

    pub fn qkv(&self, g: &Graph, p: &ParamStore, x: &Tensor) -> Result<Vec<Tensor>> {
        let y = self.norm.forward(g, p, x)?;
        let y = self.qkv.forward(g, p, &y)?;
        let y = self.depthwise.forward(g, p, &y)?;
        g.split_channels(&y, &[self.channels; 3])
    }

    pub fn forward(&self, g: &Graph, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let qkv = self.qkv(g, p, x)?;
        let att = softmax_attention(g, &qkv[0], &qkv[1], &qkv[2], self.patch)?;
        let y = self.project.forward(g, p, &att)?;
        g.add(x, &y)
    }

    /// Multiply-adds of [`softmax_attention`] alone: `QKᵀ` and the product with `V`.
    pub fn attention_macs(&self, n: usize, h: usize, w: usize) -> u64 {
        let tokens = self.patch * self.patch;
        let blocks = n * (h / self.patch) * (w / self.patch);
        2 * (blocks * tokens * tokens * self.channels) as u64
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.qkv.macs(n, h, w)
            + self.depthwise.macs(n, h, w)
            + self.attention_macs(n, h, w)
            + self.project.macs(n, h, w)
    }
}
