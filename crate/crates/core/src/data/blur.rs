//! Motion blur as the average of shifted copies of a sharp frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ImageBuffer;
use crate::error::{Error, Result};

/// Largest allowed shift along either axis.
pub const MAX_OFFSET: i32 = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlurSpec {
    trajectory: Vec<(i32, i32)>,
    pub seed: u64,
}

impl BlurSpec {
    pub fn new(trajectory: Vec<(i32, i32)>, seed: u64) -> Result<Self> {
        if let Some(&(dx, dy)) = trajectory.iter().find(|(dx, dy)| dx.abs() > MAX_OFFSET || dy.abs() > MAX_OFFSET) {
            return Err(Error::contract(format!(
                "trajectory offset ({dx}, {dy}) exceeds ±{MAX_OFFSET} pixels"
            )));
        }
        Ok(BlurSpec { trajectory, seed })
    }

    /// `frames` points spaced one pixel apart on a line through the origin,
    /// with a direction drawn from `seed`.
    pub fn linear(frames: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let (sin, cos) = theta.sin_cos();
        let centre = (frames as f64 - 1.0) / 2.0;
        let trajectory = (0..frames)
            .map(|i| {
                let t = i as f64 - centre;
                ((t * cos).round() as i32, (t * sin).round() as i32)
            })
            .collect();
        Self::new(trajectory, seed)
    }

    pub fn frames(&self) -> usize {
        self.trajectory.len()
    }

    pub fn trajectory(&self) -> &[(i32, i32)] {
        &self.trajectory
    }
}

fn shifted(i: usize, d: i32, len: usize) -> usize {
    (i as i64 - i64::from(d)).clamp(0, len as i64 - 1) as usize
}

/// `B = (1/M) Σ S_i` where frame `S_i` is `sharp` translated by the `i`-th
/// offset with edge clamping. Averaged in f64, rounded half away from zero.
pub fn synthesize_blur(sharp: &ImageBuffer, spec: &BlurSpec) -> Result<ImageBuffer> {
    let m = spec.frames();
    if m == 0 {
        return Err(Error::contract("blur needs at least one frame"));
    }
    let (w, h) = (sharp.width(), sharp.height());
    ImageBuffer::from_fn(w, h, sharp.channels(), |x, y, c| {
        let sum: f64 = spec
            .trajectory
            .iter()
            .map(|&(dx, dy)| f64::from(sharp.get(shifted(x, dx, w), shifted(y, dy, h), c)))
            .sum();
        (sum / m as f64).round() as u8
    })
}
