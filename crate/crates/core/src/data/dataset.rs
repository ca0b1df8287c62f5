use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pnm::read_image;
use super::{stack_batch, ImageBuffer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Identical random `size x size` window from both images, as `1 x C x size x size` tensors.
pub fn random_crop_pair(blur: &ImageBuffer, sharp: &ImageBuffer, size: usize, rng: &mut impl Rng) -> Result<(Tensor, Tensor)> {
    if !blur.same_dims(sharp) {
        return Err(Error::contract(format!(
            "pair dims differ: {}x{}x{} vs {}x{}x{}",
            blur.width(),
            blur.height(),
            blur.channels(),
            sharp.width(),
            sharp.height(),
            sharp.channels()
        )));
    }
    if size == 0 || size > blur.width() || size > blur.height() {
        return Err(Error::contract(format!(
            "crop {size} does not fit a {}x{} image",
            blur.width(),
            blur.height()
        )));
    }
    let x0 = rng.gen_range(0..=blur.width() - size);
    let y0 = rng.gen_range(0..=blur.height() - size);
    Ok((blur.crop_tensor(x0, y0, size, size)?, sharp.crop_tensor(x0, y0, size, size)?))
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("ppm") || e.eq_ignore_ascii_case("pgm"))
}

fn list_images(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = BTreeSet::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if is_image(&path) {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.insert(name.to_string());
            }
        }
    }
    Ok(names)
}

/// Blurry/sharp pairs matched by file name, in sorted name order. Grayscale
/// files are promoted to RGB.
#[derive(Clone, Debug)]
pub struct PairDataset {
    names: Vec<String>,
    blur: Vec<ImageBuffer>,
    sharp: Vec<ImageBuffer>,
}

impl PairDataset {
    pub fn load(dir_blur: impl AsRef<Path>, dir_sharp: impl AsRef<Path>) -> Result<Self> {
        let (dir_blur, dir_sharp) = (dir_blur.as_ref(), dir_sharp.as_ref());
        let blur_names = list_images(dir_blur)?;
        let sharp_names = list_images(dir_sharp)?;
        if let Some(name) = blur_names.difference(&sharp_names).next() {
            return Err(Error::Dataset {
                path: dir_sharp.join(name),
                message: format!("no sharp counterpart for {}", dir_blur.join(name).display()),
            });
        }
        if let Some(name) = sharp_names.difference(&blur_names).next() {
            return Err(Error::Dataset {
                path: dir_blur.join(name),
                message: format!("no blurry counterpart for {}", dir_sharp.join(name).display()),
            });
        }
        let mut data = PairDataset {
            names: Vec::new(),
            blur: Vec::new(),
            sharp: Vec::new(),
        };
        for name in blur_names {
            let b = read_image(dir_blur.join(&name))?.to_rgb();
            let s = read_image(dir_sharp.join(&name))?.to_rgb();
            data.push(name, b, s).map_err(|e| Error::Dataset {
                path: PathBuf::from(dir_blur),
                message: e.to_string(),
            })?;
        }
        if data.is_empty() {
            return Err(Error::Dataset {
                path: dir_blur.to_path_buf(),
                message: "no .ppm or .pgm files".into(),
            });
        }
        Ok(data)
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, ImageBuffer, ImageBuffer)>) -> Result<Self> {
        let mut data = PairDataset {
            names: Vec::new(),
            blur: Vec::new(),
            sharp: Vec::new(),
        };
        for (name, b, s) in pairs {
            data.push(name, b, s)?;
        }
        Ok(data)
    }

    fn push(&mut self, name: String, blur: ImageBuffer, sharp: ImageBuffer) -> Result<()> {
        if !blur.same_dims(&sharp) {
            return Err(Error::contract(format!("pair {name}: blurry and sharp dims differ")));
        }
        self.names.push(name);
        self.blur.push(blur);
        self.sharp.push(sharp);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn pair(&self, i: usize) -> (&str, &ImageBuffer, &ImageBuffer) {
        (&self.names[i], &self.blur[i], &self.sharp[i])
    }

    /// Moves the last `holdout` pairs (in name order) into a second dataset.
    pub fn split_off(&mut self, holdout: usize) -> PairDataset {
        let at = self.len().saturating_sub(holdout);
        PairDataset {
            names: self.names.split_off(at),
            blur: self.blur.split_off(at),
            sharp: self.sharp.split_off(at),
        }
    }

    pub fn batches_per_epoch(&self, batch: usize) -> usize {
        if batch == 0 {
            0
        } else {
            self.len() / batch
        }
    }

    /// Batches of epoch `epoch`: a seeded shuffle of all pairs, cut into
    /// full batches with the remainder dropped. `crop = None` keeps whole
    /// images, which then must share dims within a batch.
    ///
    /// Each epoch draws from its own stream of the generator seeded by
    /// `seed`, so any epoch can be replayed without the ones before it.
    pub fn epoch(&self, epoch: u64, batch: usize, crop: Option<usize>, seed: u64) -> Result<EpochIter<'_>> {
        if batch == 0 {
            return Err(Error::contract("batch size must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng);
        order.truncate(self.batches_per_epoch(batch) * batch);
        Ok(EpochIter {
            data: self,
            order,
            next: 0,
            batch,
            crop,
            rng,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub names: Vec<String>,
    pub blur: Tensor,
    pub sharp: Tensor,
}

pub struct EpochIter<'a> {
    data: &'a PairDataset,
    order: Vec<usize>,
    next: usize,
    batch: usize,
    crop: Option<usize>,
    rng: ChaCha8Rng,
}

impl EpochIter<'_> {
    /// Pair indices in visiting order, excluding the dropped remainder.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    fn make_batch(&mut self, idx: &[usize]) -> Result<Batch> {
        let mut blur = Vec::with_capacity(idx.len());
        let mut sharp = Vec::with_capacity(idx.len());
        for &i in idx {
            let (_, b, s) = self.data.pair(i);
            let (tb, ts) = match self.crop {
                Some(size) => random_crop_pair(b, s, size, &mut self.rng)?,
                None => (b.to_tensor(), s.to_tensor()),
            };
            blur.push(tb);
            sharp.push(ts);
        }
        Ok(Batch {
            names: idx.iter().map(|&i| self.data.names[i].clone()).collect(),
            blur: stack_batch(&blur)?,
            sharp: stack_batch(&sharp)?,
        })
    }
}

impl Iterator for EpochIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next + self.batch > self.order.len() {
            return None;
        }
        let idx = self.order[self.next..self.next + self.batch].to_vec();
        self.next += self.batch;
        Some(self.make_batch(&idx))
    }
}
