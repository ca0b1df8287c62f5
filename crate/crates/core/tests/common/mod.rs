//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use amsa_core::{Shape, Tensor};
use rand::Rng;

pub fn random(shape: Shape, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

pub fn random_vec(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Direct cross-correlation with zero padding, one loop per index.
pub fn conv2d_naive(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor {
    let [n, _, h, wd] = x.shape().0;
    let [cout, cpg, k, _] = w.shape().0;
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let opg = cout / groups;
    Tensor::from_fn(Shape::new(n, cout, ho, wo), |b, co, oy, ox| {
        let group = co / opg;
        let mut acc = bias.map_or(0.0, |t| t.at(0, co, 0, 0));
        for ci in 0..cpg {
            for ky in 0..k {
                for kx in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                        acc += x.at(b, group * cpg + ci, iy as usize, ix as usize) * w.at(co, ci, ky, kx);
                    }
                }
            }
        }
        acc
    })
}

/// Direct 2-D DFT: `X[u,v] = Σ x[y,x] e^{-2πi(uy/H + vx/W)}`.
pub fn dft2_naive(h: usize, w: usize, re: &[f64], im: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut out_re = vec![0.0; h * w];
    let mut out_im = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut sr, mut si) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let phase = -2.0 * std::f64::consts::PI
                        * (((u * y) % h) as f64 / h as f64 + ((v * x) % w) as f64 / w as f64);
                    let (s, c) = phase.sin_cos();
                    let (a, b) = (re[y * w + x], im[y * w + x]);
                    sr += a * c - b * s;
                    si += a * s + b * c;
                }
            }
            out_re[u * w + v] = sr;
            out_im[u * w + v] = si;
        }
    }
    (out_re, out_im)
}

/// Circular convolution `Σ_m f[m] g[t - m]` of two `h x w` grids.
pub fn circular_convolution(h: usize, w: usize, f: &[f64], g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for ty in 0..h {
        for tx in 0..w {
            let mut acc = 0.0;
            for my in 0..h {
                for mx in 0..w {
                    acc += f[my * w + mx] * g[((ty + h - my) % h) * w + (tx + w - mx) % w];
                }
            }
            out[ty * w + tx] = acc;
        }
    }
    out
}

/// Circular cross-correlation `Σ_m f[m + t] g[m]` of two `h x w` grids.
pub fn circular_correlation(h: usize, w: usize, f: &[f64], g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for ty in 0..h {
        for tx in 0..w {
            let mut acc = 0.0;
            for my in 0..h {
                for mx in 0..w {
                    acc += f[((my + ty) % h) * w + (mx + tx) % w] * g[my * w + mx];
                }
            }
            out[ty * w + tx] = acc;
        }
    }
    out
}

/// Per-patch circular cross-correlation of two feature maps.
pub fn patch_correlation(q: &Tensor, k: &Tensor, patch: usize) -> Vec<f64> {
    let [n, c, h, w] = q.shape().0;
    let mut out = vec![0.0; q.numel()];
    for b in 0..n {
        for ch in 0..c {
            for py in (0..h).step_by(patch) {
                for px in (0..w).step_by(patch) {
                    let grab = |t: &Tensor| {
                        (0..patch * patch)
                            .map(|i| t.at(b, ch, py + i / patch, px + i % patch))
                            .collect::<Vec<_>>()
                    };
                    let a = circular_correlation(patch, patch, &grab(q), &grab(k));
                    for (i, v) in a.into_iter().enumerate() {
                        out[((b * c + ch) * h + py + i / patch) * w + px + i % patch] = v;
                    }
                }
            }
        }
    }
    out
}
