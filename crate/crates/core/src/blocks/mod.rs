//! Network building blocks.
//!
//! Encoder side: [`Scm`] (shallow features from a downsampled image),
//! [`Fam`] (modulated fusion with the previous level), [`Dffn`] (feed-forward
//! network with a learnable frequency gate). Decoder side: [`Fsas`]
//! (frequency-domain self-attention), [`Aff`] (cross-scale encoder fusion)
//! and [`Fuse`]. [`BaselineAttention`] is the softmax dot-product attention
//! used as a reference and benchmark baseline.
//!
//! Every block is a lightweight description holding parameter paths; its
//! weights live in a [`ParamStore`].

mod attention;
mod decoder;
mod encoder;
mod params;

use rand::Rng;

pub use attention::{softmax_attention, BaselineAttention};
pub use decoder::{correlation_map, frequency_attention, Aff, Fsas, Fuse};
pub use encoder::{Dffn, Fam, Scm};
pub use params::ParamStore;

use crate::error::Result;
use crate::fourier::{fft2_butterflies, MACS_PER_BUTTERFLY};
use crate::tensor::{Conv2dOptions, Graph, Shape, Tensor};

/// Variance floor of the channel layer norm.
pub const LAYER_NORM_EPS: f64 = 1e-10;

fn uniform(shape: Shape, bound: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-bound..bound))
}

/// Convolution layer with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: String,
    pub bias: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub opts: Conv2dOptions,
}

impl Conv {
    /// Stride-1 convolution with "same" padding.
    pub fn new(prefix: &str, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self::with_options(prefix, in_channels, out_channels, kernel, Conv2dOptions::same(kernel))
    }

    /// Depthwise 3x3 convolution.
    pub fn depthwise(prefix: &str, channels: usize) -> Self {
        Self::with_options(
            prefix,
            channels,
            channels,
            3,
            Conv2dOptions {
                groups: channels,
                ..Conv2dOptions::same(3)
            },
        )
    }

    /// 3x3 stride-2 convolution halving the spatial size.
    pub fn strided(prefix: &str, in_channels: usize, out_channels: usize) -> Self {
        Self::with_options(
            prefix,
            in_channels,
            out_channels,
            3,
            Conv2dOptions {
                stride: 2,
                ..Conv2dOptions::same(3)
            },
        )
    }

    pub fn with_options(
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        opts: Conv2dOptions,
    ) -> Self {
        Conv {
            weight: format!("{prefix}.weight"),
            bias: format!("{prefix}.bias"),
            in_channels,
            out_channels,
            kernel,
            opts,
        }
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels / self.opts.groups,
            self.kernel,
            self.kernel,
        )
    }

    /// Fan-in scaled uniform weights, zero bias.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let shape = self.weight_shape();
        let fan_in = (shape.c() * self.kernel * self.kernel) as f64;
        store.insert(&self.weight, uniform(shape, 1.0 / fan_in.sqrt(), rng))?;
        store.insert(&self.bias, Tensor::zeros(Shape::new(1, self.out_channels, 1, 1)))
    }

    pub fn forward(&self, g: &Graph, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        g.conv2d(x, p.get(&self.weight)?, Some(p.get(&self.bias)?), self.opts)
    }

    pub fn param_names(&self) -> [&str; 2] {
        [&self.weight, &self.bias]
    }

    /// Multiply-adds on an `n x in_channels x h x w` input.
    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        let o = self.opts;
        let ho = (h + 2 * o.padding - self.kernel) / o.stride + 1;
        let wo = (w + 2 * o.padding - self.kernel) / o.stride + 1;
        (n * self.out_channels * ho * wo * (self.in_channels / o.groups) * self.kernel * self.kernel) as u64
    }
}

/// Learned 2x upsampling: transposed convolution, kernel 4, stride 2, padding 1.
#[derive(Clone, Debug)]
pub struct UpConv {
    pub weight: String,
    pub bias: String,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl UpConv {
    pub const KERNEL: usize = 4;
    pub const STRIDE: usize = 2;

    pub fn new(prefix: &str, in_channels: usize, out_channels: usize) -> Self {
        UpConv {
            weight: format!("{prefix}.weight"),
            bias: format!("{prefix}.bias"),
            in_channels,
            out_channels,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let shape = Shape::new(self.in_channels, self.out_channels, Self::KERNEL, Self::KERNEL);
        // each output pixel sees in_channels * (kernel/stride)^2 taps
        let taps = Self::KERNEL / Self::STRIDE;
        let fan_in = (self.in_channels * taps * taps) as f64;
        store.insert(&self.weight, uniform(shape, 1.0 / fan_in.sqrt(), rng))?;
        store.insert(&self.bias, Tensor::zeros(Shape::new(1, self.out_channels, 1, 1)))
    }

    pub fn forward(&self, g: &Graph, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        g.conv_transpose2d(x, p.get(&self.weight)?, Some(p.get(&self.bias)?), Self::STRIDE)
    }

    pub fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        (n * self.in_channels * h * w * self.out_channels * Self::KERNEL * Self::KERNEL) as u64
    }
}

/// Channel layer norm with learnable scale and shift.
#[derive(Clone, Debug)]
pub struct Norm {
    pub scale: String,
    pub shift: String,
    pub channels: usize,
}

impl Norm {
    pub fn new(prefix: &str, channels: usize) -> Self {
        Norm {
            scale: format!("{prefix}.scale"),
            shift: format!("{prefix}.shift"),
            channels,
        }
    }

    pub fn init(&self, store: &mut ParamStore) -> Result<()> {
        let shape = Shape::new(1, self.channels, 1, 1);
        store.insert(&self.scale, Tensor::full(shape, 1.0))?;
        store.insert(&self.shift, Tensor::zeros(shape))
    }

    pub fn forward(&self, g: &Graph, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        g.layer_norm_channels(x, p.get(&self.scale)?, p.get(&self.shift)?, LAYER_NORM_EPS)
    }
}

/// Multiply-adds of one patchwise 2-D FFT over `n x c x h x w`.
pub fn patch_fft_macs(n: usize, c: usize, h: usize, w: usize, patch: usize) -> u64 {
    let patches = (h / patch) * (w / patch);
    (n * c * patches) as u64 * fft2_butterflies(patch, patch) * MACS_PER_BUTTERFLY
}

/// Sets the named parameters to zero.
pub fn zero_params<'a>(store: &mut ParamStore, names: impl IntoIterator<Item = &'a str>) -> Result<()> {
    for name in names {
        let shape = store.get(name)?.shape();
        store.set(name, Tensor::zeros(shape))?;
    }
    Ok(())
}
