use rand::Rng;

use super::{patch_fft_macs, Conv, Norm, ParamStore};
use crate::error::{Error, Result};
use crate::fourier::ComplexTensor;
use crate::tensor::{Graph, Shape, Tensor};

/// Shallow convolutional module: features from one level of the image pyramid.
///
/// `[3x3 -> GELU -> 1x1 -> GELU] x 2`, concatenated with the raw image,
/// then a 1x1 convolution to the level width.
#[derive(Clone, Debug)]
pub struct Scm {
    convs: [Conv; 4],
    out: Conv,
    pub out_channels: usize,
}

impl Scm {
    pub const IMAGE_CHANNELS: usize = 3;

    pub fn new(prefix: &str, out_channels: usize) -> Result<Self> {
        if out_channels < 8 || out_channels % 4 != 0 {
            return Err(Error::dim(
                "channel",
                format!("SCM width must be a multiple of 4 and at least 8, got {out_channels}"),
            ));
        }
        let (q, h) = (out_channels / 4, out_channels / 2);
        let c = Self::IMAGE_CHANNELS;
        Ok(Scm {
            convs: [
                Conv::new(&format!("{prefix}.conv0"), c, q, 3),
                Conv::new(&format!("{prefix}.conv1"), q, h, 1),
                Conv::new(&format!("{prefix}.conv2"), h, h, 3),
                Conv::new(&format!("{prefix}.conv3"), h, out_channels - c, 1),
            ],
            out: Conv::new(&format!("{prefix}.out"), out_channels, out_channels, 1),
            out_channels,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        for conv in &self.convs {
            conv.init(store, rng)?;
        }
        self.out.init(store, rng)
    }

    pub fn forward(&self, g: &Graph, p: &ParamStore, image: &Tensor) -> Result<Tensor> {
        if image.shape().c() != Self::IMAGE_CHANNELS {
            return Err(Error::dim(
                "channel",
                format!("SCM expects a 3-channel image, got {}", image.shape()),
            ));
        }
        let mut y = image.clone();
        for conv in &self.convs {
            y = g.gelu(&conv.forward(g, p, &y)?)?;
        }
        let cat = g.concat_channels(&[image, &y])?;
        self.out.forward(g, p, &cat)
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.convs.iter().map(|c| c.macs(n, h, w)).sum::<u64>() + self.out.macs(n, h, w)
    }
}

/// Feature attention module: `conv3x3(scm ⊙ prev) + prev`.
#[derive(Clone, Debug)]
pub struct Fam {
    conv: Conv,
}

impl Fam {
    pub fn new(prefix: &str, channels: usize) -> Self {
        Fam {
            conv: Conv::new(&format!("{prefix}.conv"), channels, channels, 3),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.conv.init(store, rng)
    }

    pub fn forward(&self, g: &Graph, p: &ParamStore, scm_out: &Tensor, prev_down: &Tensor) -> Result<Tensor> {
        let modulated = g.mul(scm_out, prev_down)?;
        let y = self.conv.forward(g, p, &modulated)?;
        g.add(&y, prev_down)
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.conv.macs(n, h, w)
    }
}

/// Feed-forward network gated in the frequency domain.
///
/// `x + contract(gelu(ifft(fft(dw(expand(norm(x)))) ⊙ W)))`, where the FFT is
/// taken per `patch x patch` block and `W` is a learnable complex gate with
/// one value per (channel, frequency). The gate starts at `1 + 0i`.
#[derive(Clone, Debug)]
pub struct Dffn {
    norm: Norm,
    expand: Conv,
    depthwise: Conv,
    gate_re: String,
    gate_im: String,
    contract: Conv,
    pub channels: usize,
    pub patch: usize,
}

impl Dffn {
    pub const EXPANSION: usize = 2;

    pub fn new(prefix: &str, channels: usize, patch: usize) -> Self {
        let hidden = channels * Self::EXPANSION;
        Dffn {
            norm: Norm::new(&format!("{prefix}.norm"), channels),
            expand: Conv::new(&format!("{prefix}.expand"), channels, hidden, 1),
            depthwise: Conv::depthwise(&format!("{prefix}.dw"), hidden),
            gate_re: format!("{prefix}.gate_re"),
            gate_im: format!("{prefix}.gate_im"),
            contract: Conv::new(&format!("{prefix}.contract"), hidden, channels, 1),
            channels,
            patch,
        }
    }

    pub fn hidden(&self) -> usize {
        self.channels * Self::EXPANSION
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.norm.init(store)?;
        self.expand.init(store, rng)?;
        self.depthwise.init(store, rng)?;
        let gate = Shape::new(1, self.hidden(), self.patch, self.patch);
        store.insert(&self.gate_re, Tensor::full(gate, 1.0))?;
        store.insert(&self.gate_im, Tensor::zeros(gate))?;
        self.contract.init(store, rng)
    }

    /// Parameters of the last projection; zeroing them makes the block the identity.
    pub fn output_params(&self) -> [&str; 2] {
        self.contract.param_names()
    }

    pub fn gate_params(&self) -> [&str; 2] {
        [&self.gate_re, &self.gate_im]
    }

    pub fn forward(&self, g: &Graph, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let [n, _, h, w] = x.shape().0;
        let y = self.norm.forward(g, p, x)?;
        let y = self.expand.forward(g, p, &y)?;
        let y = self.depthwise.forward(g, p, &y)?;
        let spectrum = g.fft2_batched(&y, self.patch)?;
        let gate = ComplexTensor {
            re: g.tile_patches(p.get(&self.gate_re)?, n, h, w)?,
            im: g.tile_patches(p.get(&self.gate_im)?, n, h, w)?,
        };
        let gated = g.complex_mul(&spectrum, &gate, false)?;
        // The gate breaks conjugate symmetry; the real part is the output.
        let y = g.ifft2_batched(&gated, self.patch)?.re;
        let y = g.gelu(&y)?;
        let y = self.contract.forward(g, p, &y)?;
        g.add(x, &y)
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.expand.macs(n, h, w)
            + self.depthwise.macs(n, h, w)
            + 2 * patch_fft_macs(n, self.hidden(), h, w, self.patch)
            + self.contract.macs(n, h, w)
    }
}
