//! Procedural RGB textures for synthetic training pairs: a colour gradient,
//! a few sinusoidal gratings and hard-edged rectangles and discs.

use rand::Rng;

use super::ImageBuffer;
use crate::error::Result;

fn colour(rng: &mut impl Rng) -> [f64; 3] {
    [rng.gen_range(0.0..255.0), rng.gen_range(0.0..255.0), rng.gen_range(0.0..255.0)]
}

enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Disc { cx: f64, cy: f64, r2: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Disc { cx, cy, r2 } => (x - cx).powi(2) + (y - cy).powi(2) < r2,
        }
    }
}

pub fn procedural_texture(width: usize, height: usize, rng: &mut impl Rng) -> Result<ImageBuffer> {
    let (wf, hf) = (width as f64, height as f64);
    let (c0, c1) = (colour(rng), colour(rng));
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (gs, gc) = angle.sin_cos();

    let gratings: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let period = rng.gen_range(3.0..16.0);
            let k = std::f64::consts::TAU / period;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp = [rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0)];
            (k * theta.cos(), k * theta.sin(), phase, amp)
        })
        .collect();

    let count = rng.gen_range(4..=9);
    let shapes: Vec<(Shape, [f64; 3])> = (0..count)
        .map(|_| {
            let shape = if rng.gen_bool(0.5) {
                let (x0, y0) = (rng.gen_range(0.0..wf), rng.gen_range(0.0..hf));
                let (sw, sh) = (rng.gen_range(0.1..0.5) * wf, rng.gen_range(0.1..0.5) * hf);
                Shape::Rect { x0, y0, x1: x0 + sw, y1: y0 + sh }
            } else {
                let r = rng.gen_range(0.05..0.3) * wf.min(hf);
                Shape::Disc {
                    cx: rng.gen_range(0.0..wf),
                    cy: rng.gen_range(0.0..hf),
                    r2: r * r,
                }
            };
            (shape, colour(rng))
        })
        .collect();

    let diag = (wf * wf + hf * hf).sqrt();
    ImageBuffer::from_fn(width, height, 3, |x, y, c| {
        let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
        let t = (((xf - wf / 2.0) * gc + (yf - hf / 2.0) * gs) / diag + 0.5).clamp(0.0, 1.0);
        let mut v = c0[c] * (1.0 - t) + c1[c] * t;
        for (kx, ky, phase, amp) in &gratings {
            v += amp[c] * (kx * xf + ky * yf + phase).sin();
        }
        // later shapes paint over earlier ones
        if let Some((_, col)) = shapes.iter().rev().find(|(s, _)| s.contains(xf, yf)) {
            v = 0.75 * col[c] + 0.25 * v;
        }
        v.clamp(0.0, 255.0).round() as u8
    })
}
