//! The three-scale asymmetric U-Net.
//!
//! Encoder level 1 is a 3x3 stem followed by DFFN blocks; levels 2 and 3 fuse
//! shallow features of the downsampled image (SCM) with the strided-conv
//! downsampled previous level (FAM) before their DFFN blocks. Every decoder
//! block is FSAS followed by DFFN. Decoder levels 2 and 1 take
//! `Fuse(AFF(enc1, enc2, enc3), up(decoder below))`; each level ends in a
//! 3x3 head whose output is added to the blurry image at that scale.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{zero_params, Aff, Conv, Dffn, Fam, Fsas, Fuse, ParamStore, Scm, UpConv};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Shape, Tensor};

pub const LEVELS: usize = 3;
pub const MAX_BASE_CHANNELS: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub blocks_per_level: usize,
    pub patch: usize,
    /// Ablation: FSAS before every encoder DFFN as well.
    pub symmetric_mode: bool,
    /// Ablation: with `false` the decoder input is `enc + up(decoder below)`.
    pub use_aff: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            levels: LEVELS,
            base_channels: 16,
            blocks_per_level: 2,
            patch: 8,
            symmetric_mode: false,
            use_aff: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels != LEVELS {
            return Err(Error::contract(format!("only {LEVELS} levels are supported, got {}", self.levels)));
        }
        if self.base_channels > MAX_BASE_CHANNELS {
            return Err(Error::contract(format!(
                "base_channels {} exceeds {MAX_BASE_CHANNELS}",
                self.base_channels
            )));
        }
        if self.base_channels < 4 || self.base_channels % 2 != 0 {
            return Err(Error::contract(format!(
                "base_channels must be even and at least 4, got {}",
                self.base_channels
            )));
        }
        if self.blocks_per_level == 0 {
            return Err(Error::contract("blocks_per_level must be at least 1"));
        }
        if !self.patch.is_power_of_two() {
            return Err(Error::contract(format!("patch {} is not a power of two", self.patch)));
        }
        Ok(())
    }

    pub fn widths(&self) -> [usize; 3] {
        let b = self.base_channels;
        [b, 2 * b, 4 * b]
    }

    /// Input height and width must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        (1 << (LEVELS - 1)) * self.patch
    }
}

/// Restored images at full, half and quarter resolution.
#[derive(Clone, Debug)]
pub struct ModelOutputs {
    pub restored: [Tensor; 3],
}

#[derive(Clone, Debug)]
struct Stage {
    fsas: Option<Fsas>,
    dffn: Dffn,
}

impl Stage {
    fn new(prefix: &str, channels: usize, patch: usize, with_fsas: bool) -> Self {
        Stage {
            fsas: with_fsas.then(|| Fsas::new(&format!("{prefix}.fsas"), channels, patch)),
            dffn: Dffn::new(&format!("{prefix}.dffn"), channels, patch),
        }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        if let Some(f) = &self.fsas {
            f.init(store, rng)?;
        }
        self.dffn.init(store, rng)
    }

    fn forward(&self, g: &Graph, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let x = match &self.fsas {
            Some(f) => f.forward(g, p, x)?,
            None => x.clone(),
        };
        self.dffn.forward(g, p, &x)
    }

    fn macs(&self, n: usize, h: usize, w: usize) -> u64 {
        self.fsas.as_ref().map_or(0, |f| f.macs(n, h, w)) + self.dffn.macs(n, h, w)
    }
}

#[derive(Clone, Debug)]
struct EncoderLevel {
    entry: EncoderEntry,
    stages: Vec<Stage>,
}

#[derive(Clone, Debug)]
enum EncoderEntry {
    Stem(Conv),
    Fused { scm: Scm, down: Conv, fam: Fam },
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    /// Absent on the coarsest level.
    merge: Option<DecoderMerge>,
    stages: Vec<Stage>,
    head: Conv,
}

#[derive(Clone, Debug)]
struct DecoderMerge {
    up: UpConv,
    fusion: Option<(Aff, Fuse)>,
}

#[derive(Clone, Debug)]
pub struct AmsaUnet {
    config: ModelConfig,
    encoder: Vec<EncoderLevel>,
    /// Index 0 is the full-resolution level.
    decoder: Vec<DecoderLevel>,
}

impl AmsaUnet {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let widths = config.widths();
        let patch = config.patch;
        let stages = |prefix: &str, c: usize, fsas: bool| {
            (0..config.blocks_per_level)
                .map(|i| Stage::new(&format!("{prefix}.block{i}"), c, patch, fsas))
                .collect::<Vec<_>>()
        };

        let mut encoder = Vec::with_capacity(LEVELS);
        for (l, &c) in widths.iter().enumerate() {
            let prefix = format!("enc{}", l + 1);
            let entry = if l == 0 {
                EncoderEntry::Stem(Conv::new(&format!("{prefix}.stem"), Scm::IMAGE_CHANNELS, c, 3))
            } else {
                EncoderEntry::Fused {
                    scm: Scm::new(&format!("{prefix}.scm"), c)?,
                    down: Conv::strided(&format!("{prefix}.down"), widths[l - 1], c),
                    fam: Fam::new(&format!("{prefix}.fam"), c),
                }
            };
            encoder.push(EncoderLevel {
                entry,
                stages: stages(&prefix, c, config.symmetric_mode),
            });
        }

        let mut decoder = Vec::with_capacity(LEVELS);
        for (l, &c) in widths.iter().enumerate() {
            let prefix = format!("dec{}", l + 1);
            let merge = (l + 1 < LEVELS).then(|| -> Result<DecoderMerge> {
                Ok(DecoderMerge {
                    up: UpConv::new(&format!("{prefix}.up"), widths[l + 1], c),
                    fusion: if config.use_aff {
                        Some((
                            Aff::new(&format!("{prefix}.aff"), widths, l)?,
                            Fuse::new(&format!("{prefix}.fuse"), c, patch),
                        ))
                    } else {
                        None
                    },
                })
            });
            decoder.push(DecoderLevel {
                merge: merge.transpose()?,
                stages: stages(&prefix, c, true),
                head: Conv::new(&format!("{prefix}.head"), c, Scm::IMAGE_CHANNELS, 3),
            });
        }

        Ok(AmsaUnet {
            config,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Fresh parameters drawn from the configured seed.
    pub fn init_params(&self) -> Result<ParamStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut store = ParamStore::new();
        for level in &self.encoder {
            match &level.entry {
                EncoderEntry::Stem(conv) => conv.init(&mut store, &mut rng)?,
                EncoderEntry::Fused { scm, down, fam } => {
                    scm.init(&mut store, &mut rng)?;
                    down.init(&mut store, &mut rng)?;
                    fam.init(&mut store, &mut rng)?;
                }
            }
            for s in &level.stages {
                s.init(&mut store, &mut rng)?;
            }
        }
        // coarsest first, matching the order of evaluation
        for level in self.decoder.iter().rev() {
            if let Some(m) = &level.merge {
                m.up.init(&mut store, &mut rng)?;
                if let Some((aff, fuse)) = &m.fusion {
                    aff.init(&mut store, &mut rng)?;
                    fuse.init(&mut store, &mut rng)?;
                }
            }
            for s in &level.stages {
                s.init(&mut store, &mut rng)?;
            }
            level.head.init(&mut store, &mut rng)?;
        }
        Ok(store)
    }

    /// Names of the output head parameters, finest level first.
    pub fn head_params(&self) -> Vec<&str> {
        self.decoder.iter().flat_map(|l| l.head.param_names()).collect()
    }

    /// Zeroes all output heads, making the model the identity on every scale.
    pub fn zero_heads(&self, store: &mut ParamStore) -> Result<()> {
        zero_params(store, self.head_params())
    }

    pub fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.c() != Scm::IMAGE_CHANNELS {
            return Err(Error::dim("channel", format!("expected an RGB image, got {shape}")));
        }
        let m = self.config.size_multiple();
        if shape.h() % m != 0 {
            return Err(Error::dim("height", format!("height {} must be a multiple of {m}", shape.h())));
        }
        if shape.w() % m != 0 {
            return Err(Error::dim("width", format!("width {} must be a multiple of {m}", shape.w())));
        }
        Ok(())
    }

    /// The image at scales 1, 1/2 and 1/4.
    pub fn pyramid(&self, g: &Graph, image: &Tensor) -> Result<[Tensor; 3]> {
        build_pyramid(g, image)
    }

    pub fn encode(&self, g: &Graph, p: &ParamStore, image: &Tensor) -> Result<[Tensor; 3]> {
        self.check_input(image.shape())?;
        let pyramid = self.pyramid(g, image)?;
        self.encode_pyramid(g, p, &pyramid)
    }

    fn encode_pyramid(&self, g: &Graph, p: &ParamStore, pyramid: &[Tensor; 3]) -> Result<[Tensor; 3]> {
        let mut outs: Vec<Tensor> = Vec::with_capacity(LEVELS);
        for (l, level) in self.encoder.iter().enumerate() {
            let mut x = match &level.entry {
                EncoderEntry::Stem(conv) => conv.forward(g, p, &pyramid[0])?,
                EncoderEntry::Fused { scm, down, fam } => {
                    let shallow = scm.forward(g, p, &pyramid[l])?;
                    let prev = down.forward(g, p, &outs[l - 1])?;
                    fam.forward(g, p, &shallow, &prev)?
                }
            };
            for s in &level.stages {
                x = s.forward(g, p, &x)?;
            }
            outs.push(x);
        }
        Ok(outs.try_into().expect("three levels"))
    }

    pub fn decode(&self, g: &Graph, p: &ParamStore, enc: &[Tensor; 3], pyramid: &[Tensor; 3]) -> Result<ModelOutputs> {
        let mut restored: Vec<Option<Tensor>> = vec![None; LEVELS];
        let mut below: Option<Tensor> = None;
        for l in (0..LEVELS).rev() {
            let level = &self.decoder[l];
            let mut x = match (&level.merge, &below) {
                (None, _) => enc[l].clone(),
                (Some(m), Some(feat)) => {
                    let up = m.up.forward(g, p, feat)?;
                    match &m.fusion {
                        Some((aff, fuse)) => {
                            let mixed = aff.forward(g, p, [&enc[0], &enc[1], &enc[2]])?;
                            fuse.forward(g, p, &mixed, &up)?
                        }
                        None => g.add(&enc[l], &up)?,
                    }
                }
                (Some(_), None) => unreachable!("levels are decoded coarsest first"),
            };
            for s in &level.stages {
                x = s.forward(g, p, &x)?;
            }
            let residual = level.head.forward(g, p, &x)?;
            restored[l] = Some(g.add(&pyramid[l], &residual)?);
            below = Some(x);
        }
        let restored: Vec<Tensor> = restored.into_iter().map(|t| t.expect("decoded")).collect();
        Ok(ModelOutputs {
            restored: restored.try_into().expect("three levels"),
        })
    }

    pub fn forward(&self, g: &Graph, p: &ParamStore, image: &Tensor) -> Result<ModelOutputs> {
        self.check_input(image.shape())?;
        let pyramid = self.pyramid(g, image)?;
        let enc = self.encode_pyramid(g, p, &pyramid)?;
        self.decode(g, p, &enc, &pyramid)
    }

    /// Closed-form multiply-add count of one forward pass on an `n x 3 x h x w`
    /// input: convolutions, transposed convolutions, matrix products and FFT
    /// butterflies (4 per butterfly). Element-wise work is not counted.
    pub fn forward_macs(&self, n: usize, h: usize, w: usize) -> u64 {
        let size = |l: usize| (h >> l, w >> l);
        let mut total = 0;
        for (l, level) in self.encoder.iter().enumerate() {
            let (hl, wl) = size(l);
            total += match &level.entry {
                EncoderEntry::Stem(conv) => conv.macs(n, hl, wl),
                EncoderEntry::Fused { scm, down, fam } => {
                    let (hp, wp) = size(l - 1);
                    scm.macs(n, hl, wl) + down.macs(n, hp, wp) + fam.macs(n, hl, wl)
                }
            };
            total += level.stages.iter().map(|s| s.macs(n, hl, wl)).sum::<u64>();
        }
        for (l, level) in self.decoder.iter().enumerate() {
            let (hl, wl) = size(l);
            if let Some(m) = &level.merge {
                let (hb, wb) = size(l + 1);
                total += m.up.macs(n, hb, wb);
                if let Some((aff, fuse)) = &m.fusion {
                    total += aff.macs(n, hl, wl) + fuse.macs(n, hl, wl);
                }
            }
            total += level.stages.iter().map(|s| s.macs(n, hl, wl)).sum::<u64>();
            total += level.head.macs(n, hl, wl);
        }
        total
    }
}

/// Full, half and quarter resolution copies of `image` by repeated 2x bilinear reduction.
pub fn build_pyramid(g: &Graph, image: &Tensor) -> Result<[Tensor; 3]> {
    let half = g.downsample_bilinear(image)?;
    let quarter = g.downsample_bilinear(&half)?;
    Ok([image.clone(), half, quarter])
}
