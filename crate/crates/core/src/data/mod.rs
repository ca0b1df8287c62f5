//! Images, synthetic blur and batched training pairs.

mod blur;
mod dataset;
mod pnm;
mod texture;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use blur::{synthesize_blur, BlurSpec, MAX_OFFSET};
pub use dataset::{random_crop_pair, Batch, EpochIter, PairDataset};
pub use pnm::{read_image, write_image, ImageBuffer};
pub use texture::procedural_texture;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Shape, Tensor};

/// Concatenates tensors of identical `C x H x W` along the batch axis.
pub fn stack_batch(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::contract("cannot stack an empty batch"))?.shape();
    let mut data = Vec::with_capacity(first.plane() * first.c() * parts.len());
    let mut n = 0;
    for t in parts {
        let s = t.shape();
        if (s.c(), s.h(), s.w()) != (first.c(), first.h(), first.w()) {
            return Err(Error::dim("batch", format!("cannot stack {s} with {first}")));
        }
        data.extend_from_slice(t.data());
        n += s.n();
    }
    Tensor::new(Shape::new(n, first.c(), first.h(), first.w()), data)
}

/// Full, half and quarter resolution by repeated 2x bilinear reduction.
pub fn build_pyramid(image: &Tensor) -> Result<[Tensor; 3]> {
    let s = image.shape();
    if s.h() % 4 != 0 {
        return Err(Error::dim("height", format!("{} is not a multiple of 4", s.h())));
    }
    if s.w() % 4 != 0 {
        return Err(Error::dim("width", format!("{} is not a multiple of 4", s.w())));
    }
    crate::network::build_pyramid(&Graph::new(), image)
}

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            count: 100,
            width: 64,
            height: 64,
            frames: 5,
            seed: 0,
        }
    }
}

/// Sharp procedural textures and their linear-motion blurs, in memory.
/// Pair `i` is named `{i:04}.ppm`.
pub fn synth_pairs(opts: &SynthOptions) -> Result<Vec<(String, ImageBuffer, ImageBuffer)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    (0..opts.count)
        .map(|i| {
            let sharp = procedural_texture(opts.width, opts.height, &mut rng)?;
            let spec = BlurSpec::linear(opts.frames, rng.gen())?;
            let blur = synthesize_blur(&sharp, &spec)?;
            Ok((format!("{i:04}.ppm"), blur, sharp))
        })
        .collect()
}

/// Writes [`synth_pairs`] into `dir_blur` and `dir_sharp`, creating them.
pub fn write_synth_dataset(opts: &SynthOptions, dir_blur: &Path, dir_sharp: &Path) -> Result<()> {
    for dir in [dir_blur, dir_sharp] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for (name, blur, sharp) in synth_pairs(opts)? {
        write_image(&blur, dir_blur.join(&name))?;
        write_image(&sharp, dir_sharp.join(&name))?;
    }
    Ok(())
}
