use super::{Graph, Shape, Tensor};
use crate::error::{Error, Result};

fn matmul_into(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let orow = &mut out[i * p..(i + 1) * p];
        for (kk, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            for (o, bv) in orow.iter_mut().zip(&b[kk * p..(kk + 1) * p]) {
                *o += av * bv;
            }
        }
    }
}

fn patch_grid(shape: Shape, patch: usize) -> Result<(usize, usize)> {
    if patch == 0 {
        return Err(Error::contract("patch size must be positive"));
    }
    if shape.h() % patch != 0 {
        return Err(Error::dim(
            "height",
            format!("height {} is not divisible by patch {patch}", shape.h()),
        ));
    }
    if shape.w() % patch != 0 {
        return Err(Error::dim(
            "width",
            format!("width {} is not divisible by patch {patch}", shape.w()),
        ));
    }
    Ok((shape.h() / patch, shape.w() / patch))
}

/// For every token-layout element, the index of the image-layout element it holds.
fn token_index(shape: Shape, patch: usize, rows: usize, cols: usize) -> Vec<usize> {
    let [n, c, h, w] = shape.0;
    let mut index = Vec::with_capacity(shape.numel());
    for b in 0..n {
        for py in 0..rows {
            for px in 0..cols {
                for dy in 0..patch {
                    for dx in 0..patch {
                        for ch in 0..c {
                            index.push(((b * c + ch) * h + py * patch + dy) * w + px * patch + dx);
                        }
                    }
                }
            }
        }
    }
    index
}

impl Graph {
    /// Matrix product over the trailing two axes, batched over `(N, C)`:
    /// `(N, C, M, K) x (N, C, K, P) -> (N, C, M, P)`.
    pub fn batched_matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let [n, c, m, k] = a.shape().0;
        let [bn, bc, bk, p] = b.shape().0;
        if (bn, bc) != (n, c) {
            let axis = if bn != n { "batch" } else { "channel" };
            return Err(Error::dim(axis, format!("cannot batch {} with {}", a.shape(), b.shape())));
        }
        if bk != k {
            return Err(Error::dim(
                "height",
                format!("inner dimensions differ: {} x {}", a.shape(), b.shape()),
            ));
        }
        self.count_macs((n * c * m * k * p) as u64);
        let (ad, bd) = (a.shared_data(), b.shared_data());
        let mut out = vec![0.0; n * c * m * p];
        for i in 0..n * c {
            matmul_into(
                &mut out[i * m * p..(i + 1) * m * p],
                &ad[i * m * k..],
                &bd[i * k * p..],
                m,
                k,
                p,
            );
        }
        self.emit(&[a, b], Shape::new(n, c, m, p), out, move |g, needs| {
            let ga = needs[0].then(|| {
                // dA = dC · Bᵀ
                let mut ga = vec![0.0; ad.len()];
                for i in 0..n * c {
                    let gc = &g[i * m * p..(i + 1) * m * p];
                    let bm = &bd[i * k * p..(i + 1) * k * p];
                    let gam = &mut ga[i * m * k..(i + 1) * m * k];
                    for r in 0..m {
                        for kk in 0..k {
                            gam[r * k + kk] = gc[r * p..(r + 1) * p]
                                .iter()
                                .zip(&bm[kk * p..(kk + 1) * p])
                                .map(|(x, y)| x * y)
                                .sum();
                        }
                    }
                }
                ga
            });
            let gb = needs[1].then(|| {
                // dB = Aᵀ · dC
                let mut gb = vec![0.0; bd.len()];
                for i in 0..n * c {
                    let gc = &g[i * m * p..(i + 1) * m * p];
                    let am = &ad[i * m * k..(i + 1) * m * k];
                    let gbm = &mut gb[i * k * p..(i + 1) * k * p];
                    for r in 0..m {
                        for kk in 0..k {
                            let av = am[r * k + kk];
                            for (o, gv) in gbm[kk * p..(kk + 1) * p].iter_mut().zip(&gc[r * p..(r + 1) * p]) {
                                *o += av * gv;
                            }
                        }
                    }
                }
                gb
            });
            vec![ga, gb]
        })
    }

    /// Rearranges every `patch x patch` block into a token matrix:
    /// `(N, C, H, W) -> (N * H/patch * W/patch, 1, patch², C)`.
    pub fn patch_tokens(&self, x: &Tensor, patch: usize) -> Result<Tensor> {
        let (rows, cols) = patch_grid(x.shape(), patch)?;
        let [n, c, ..] = x.shape().0;
        let index = token_index(x.shape(), patch, rows, cols);
        self.gather(x, Shape::new(n * rows * cols, 1, patch * patch, c), index)
    }

    /// Inverse of [`Graph::patch_tokens`] for an image of shape `shape`.
    pub fn tokens_to_image(&self, tokens: &Tensor, shape: Shape, patch: usize) -> Result<Tensor> {
        let (rows, cols) = patch_grid(shape, patch)?;
        let expected = Shape::new(shape.n() * rows * cols, 1, patch * patch, shape.c());
        expected.expect_eq(&tokens.shape())?;
        let forward = token_index(shape, patch, rows, cols);
        let mut index = vec![0; forward.len()];
        for (token_pos, &image_pos) in forward.iter().enumerate() {
            index[image_pos] = token_pos;
        }
        self.gather(tokens, shape, index)
    }
}
