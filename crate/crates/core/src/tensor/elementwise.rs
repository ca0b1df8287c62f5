use std::sync::Arc;

use super::{Graph, Shape, Tensor};
use crate::error::{Error, Result};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// GELU, tanh approximation.
pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

pub(crate) fn gelu_derivative(x: f64) -> f64 {
    let t = (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    fn binary(
        &self,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        backward: impl FnOnce(&[f64], &[f64], &[f64], &[bool]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Result<Tensor> {
        a.shape().expect_eq(&b.shape())?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let (ad, bd) = (a.shared_data(), b.shared_data());
        self.emit(&[a, b], a.shape(), data, move |g, needs| backward(g, &ad, &bd, needs))
    }

    fn unary(
        &self,
        x: &Tensor,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Tensor> {
        let data: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
        let xd = x.shared_data();
        let yd = Arc::new(data.clone());
        self.emit(&[x], x.shape(), data, move |g, _| {
            let gx = g
                .iter()
                .zip(xd.iter().zip(yd.iter()))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x + y, |g, _, _, needs| {
            vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())]
        })
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x - y, |g, _, _, needs| {
            vec![
                needs[0].then(|| g.to_vec()),
                needs[1].then(|| g.iter().map(|v| -v).collect()),
            ]
        })
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x * y, |g, a, b, needs| {
            vec![
                needs[0].then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
                needs[1].then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
            ]
        })
    }

    pub fn scalar_mul(&self, x: &Tensor, s: f64) -> Result<Tensor> {
        self.unary(x, |v| v * s, move |_, _| s)
    }

    pub fn add_scalar(&self, x: &Tensor, s: f64) -> Result<Tensor> {
        self.unary(x, |v| v + s, |_, _| 1.0)
    }

    pub fn gelu(&self, x: &Tensor) -> Result<Tensor> {
        self.unary(x, gelu_scalar, |x, _| gelu_derivative(x))
    }

    pub fn relu(&self, x: &Tensor) -> Result<Tensor> {
        self.unary(x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self, x: &Tensor) -> Result<Tensor> {
        self.unary(x, sigmoid_scalar, |_, y| y * (1.0 - y))
    }

    /// Absolute value; the subgradient at zero is zero.
    pub fn abs(&self, x: &Tensor) -> Result<Tensor> {
        self.unary(x, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// Sum of all elements, as a 1x1x1x1 tensor.
    pub fn sum(&self, x: &Tensor) -> Result<Tensor> {
        let total = x.data().iter().sum();
        let n = x.numel();
        self.emit(&[x], Shape::SCALAR, vec![total], move |g, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.numel() as f64;
        let s = self.sum(x)?;
        self.scalar_mul(&s, 1.0 / n)
    }

    /// Softmax over the width axis.
    pub fn softmax_lastdim(&self, x: &Tensor) -> Result<Tensor> {
        let w = x.shape().w();
        let mut data = x.to_vec();
        for row in data.chunks_exact_mut(w) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            let inv = 1.0 / total;
            row.iter_mut().for_each(|v| *v *= inv);
        }
        let yd = Arc::new(data.clone());
        self.emit(&[x], x.shape(), data, move |g, _| {
            let mut gx = vec![0.0; g.len()];
            for ((gx, g), y) in gx.chunks_exact_mut(w).zip(g.chunks_exact(w)).zip(yd.chunks_exact(w)) {
                let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                for i in 0..w {
                    gx[i] = y[i] * (g[i] - dot);
                }
            }
            vec![Some(gx)]
        })
    }

    /// Normalizes each spatial position across channels, then applies a
    /// per-channel scale and shift (both shaped `1xCx1x1`).
    ///
    /// The biased variance is floored at `eps` (rather than offset by it), so
    /// positions with variance above the floor are standardized exactly.
    pub fn layer_norm_channels(
        &self,
        x: &Tensor,
        scale: &Tensor,
        shift: &Tensor,
        eps: f64,
    ) -> Result<Tensor> {
        let [n, c, h, w] = x.shape().0;
        let param_shape = Shape::new(1, c, 1, 1);
        param_shape.expect_eq(&scale.shape())?;
        param_shape.expect_eq(&shift.shape())?;
        let plane = h * w;
        let xd = x.data();
        let mut normalized = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; n * plane];
        for b in 0..n {
            let base = b * c * plane;
            for p in 0..plane {
                let mut mean = 0.0;
                for ch in 0..c {
                    mean += xd[base + ch * plane + p];
                }
                mean /= c as f64;
                let mut var = 0.0;
                for ch in 0..c {
                    let d = xd[base + ch * plane + p] - mean;
                    var += d * d;
                }
                var /= c as f64;
                // a negative inverse marks a floored position, whose scale is constant
                let r = 1.0 / var.max(eps).sqrt();
                inv_std[b * plane + p] = if var > eps { r } else { -r };
                for ch in 0..c {
                    let i = base + ch * plane + p;
                    normalized[i] = (xd[i] - mean) * r;
                }
            }
        }
        let (sd, hd) = (scale.data(), shift.data());
        let mut out = normalized.clone();
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                for v in &mut out[off..off + plane] {
                    *v = *v * sd[ch] + hd[ch];
                }
            }
        }

        let scale_data = scale.shared_data();
        self.emit(&[x, scale, shift], x.shape(), out, move |g, needs| {
            let mut gscale = vec![0.0; c];
            let mut gshift = vec![0.0; c];
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * plane;
                    for p in 0..plane {
                        gscale[ch] += g[off + p] * normalized[off + p];
                        gshift[ch] += g[off + p];
                    }
                }
            }
            let gx = needs[0].then(|| {
                let mut gx = vec![0.0; g.len()];
                let inv_c = 1.0 / c as f64;
                for b in 0..n {
                    let base = b * c * plane;
                    for p in 0..plane {
                        let mut mean_g = 0.0;
                        let mut mean_gx = 0.0;
                        for ch in 0..c {
                            let i = base + ch * plane + p;
                            let gn = g[i] * scale_data[ch];
                            mean_g += gn;
                            mean_gx += gn * normalized[i];
                        }
                        mean_g *= inv_c;
                        mean_gx *= inv_c;
                        let r = inv_std[b * plane + p];
                        if r < 0.0 {
                            mean_gx = 0.0;
                        }
                        for ch in 0..c {
                            let i = base + ch * plane + p;
                            let gn = g[i] * scale_data[ch];
                            gx[i] = r.abs() * (gn - mean_g - normalized[i] * mean_gx);
                        }
                    }
                }
                gx
            });
            vec![gx, Some(gscale), Some(gshift)]
        })
    }

    pub fn concat_channels(&self, parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_channels needs at least one tensor"))?
            .shape();
        let [n, _, h, w] = first.0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            Shape::new(n, s.c(), h, w).expect_eq(&s)?;
            widths.push(s.c());
        }
        let c_total: usize = widths.iter().sum();
        let plane = h * w;
        let mut data = Vec::with_capacity(n * c_total * plane);
        for b in 0..n {
            for (p, &c) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        self.emit(parts, Shape::new(n, c_total, h, w), data, move |g, needs| {
            let mut out: Vec<Option<Vec<f64>>> = widths
                .iter()
                .zip(needs)
                .map(|(&c, &need)| need.then(|| Vec::with_capacity(n * c * plane)))
                .collect();
            for b in 0..n {
                let mut off = b * c_total * plane;
                for (slot, &c) in out.iter_mut().zip(&widths) {
                    if let Some(v) = slot {
                        v.extend_from_slice(&g[off..off + c * plane]);
                    }
                    off += c * plane;
                }
            }
            out
        })
    }

    /// Splits along channels into consecutive groups of the given widths.
    pub fn split_channels(&self, x: &Tensor, widths: &[usize]) -> Result<Vec<Tensor>> {
        let [n, c, h, w] = x.shape().0;
        if widths.iter().sum::<usize>() != c || widths.contains(&0) {
            return Err(Error::dim(
                "channel",
                format!("cannot split {c} channels into {widths:?}"),
            ));
        }
        let plane = h * w;
        let xd = x.data();
        let mut outputs = Vec::with_capacity(widths.len());
        let mut start = 0;
        for &cw in widths {
            let mut data = Vec::with_capacity(n * cw * plane);
            for b in 0..n {
                let off = (b * c + start) * plane;
                data.extend_from_slice(&xd[off..off + cw * plane]);
            }
            outputs.push((Shape::new(n, cw, h, w), data));
            start += cw;
        }
        let widths = widths.to_vec();
        self.emit_multi(&[x], outputs, move |grads, _| {
            let mut gx = vec![0.0; n * c * plane];
            let mut start = 0;
            for (g, &cw) in grads.iter().zip(&widths) {
                for b in 0..n {
                    let off = (b * c + start) * plane;
                    gx[off..off + cw * plane]
                        .copy_from_slice(&g[b * cw * plane..(b + 1) * cw * plane]);
                }
                start += cw;
            }
            vec![Some(gx)]
        })
    }

    /// Reinterprets the row-major buffer with a new shape of equal size.
    pub fn reshape(&self, x: &Tensor, shape: Shape) -> Result<Tensor> {
        shape.validate()?;
        if shape.numel() != x.numel() {
            return Err(Error::dim(
                "data",
                format!("cannot reshape {} into {shape}", x.shape()),
            ));
        }
        self.emit(&[x], shape, x.to_vec(), |g, _| vec![Some(g.to_vec())])
    }

    /// Swaps the height and width axes.
    pub fn transpose_hw(&self, x: &Tensor) -> Result<Tensor> {
        let [n, c, h, w] = x.shape().0;
        let mut index = Vec::with_capacity(x.numel());
        for plane in 0..n * c {
            for xi in 0..w {
                for yi in 0..h {
                    index.push((plane * h + yi) * w + xi);
                }
            }
        }
        self.gather(x, Shape::new(n, c, w, h), index)
    }

    /// `out[i] = x[index[i]]`; the adjoint scatters (and sums repeated indices).
    pub(crate) fn gather(&self, x: &Tensor, shape: Shape, index: Vec<usize>) -> Result<Tensor> {
        debug_assert_eq!(index.len(), shape.numel());
        let xd = x.data();
        let data = index.iter().map(|&i| xd[i]).collect();
        let len = x.numel();
        self.emit(&[x], shape, data, move |g, _| {
            let mut gx = vec![0.0; len];
            for (&i, &g) in index.iter().zip(g) {
                gx[i] += g;
            }
            vec![Some(gx)]
        })
    }

    /// Tiles a `1xCxPxP` map over every `PxP` patch of an `NxCxHxW` tensor.
    pub fn tile_patches(&self, map: &Tensor, n: usize, h: usize, w: usize) -> Result<Tensor> {
        let [one, c, ph, pw] = map.shape().0;
        if one != 1 {
            return Err(Error::dim("batch", "patch map must have batch size 1"));
        }
        if h % ph != 0 {
            return Err(Error::dim("height", format!("{h} is not a multiple of patch {ph}")));
        }
        if w % pw != 0 {
            return Err(Error::dim("width", format!("{w} is not a multiple of patch {pw}")));
        }
        let mut index = Vec::with_capacity(n * c * h * w);
        for _ in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        index.push((ch * ph + y % ph) * pw + x % pw);
                    }
                }
            }
        }
        self.gather(map, Shape::new(n, c, h, w), index)
    }

    /// Elementwise complex magnitude `sqrt(re² + im²)`; the subgradient at zero is zero.
    pub fn complex_abs(&self, re: &Tensor, im: &Tensor) -> Result<Tensor> {
        re.shape().expect_eq(&im.shape())?;
        let data: Vec<f64> = re
            .data()
            .iter()
            .zip(im.data())
            .map(|(a, b)| a.hypot(*b))
            .collect();
        let (rd, id) = (re.shared_data(), im.shared_data());
        let md = Arc::new(data.clone());
        self.emit(&[re, im], re.shape(), data, move |g, needs| {
            let part = |src: &[f64]| -> Vec<f64> {
                g.iter()
                    .zip(src.iter().zip(md.iter()))
                    .map(|(g, (v, m))| if *m > 0.0 { g * v / m } else { 0.0 })
                    .collect()
            };
            vec![needs[0].then(|| part(&rd)), needs[1].then(|| part(&id))]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    fn t(shape: Shape, v: Vec<f64>) -> Tensor {
        Tensor::new(shape, v).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let g = Graph::new();
        let y = g.softmax_lastdim(&Tensor::zeros(Shape::new(1, 1, 1, 4))).unwrap();
        assert_eq!(y.data(), &[0.25; 4]);
    }

    #[test]
    fn layer_norm_standardizes_each_position() {
        let g = Graph::new();
        let x = Tensor::from_fn(Shape::new(2, 5, 3, 3), |n, c, y, x| {
            ((n * 7 + c * 13 + y * 5 + x * 3) % 11) as f64 * 0.37 - 1.2
        });
        let ones = Tensor::full(Shape::new(1, 5, 1, 1), 1.0);
        let zeros = Tensor::zeros(Shape::new(1, 5, 1, 1));
        let y = g.layer_norm_channels(&x, &ones, &zeros, 1e-12).unwrap();
        for n in 0..2 {
            for yy in 0..3 {
                for xx in 0..3 {
                    let vals: Vec<f64> = (0..5).map(|c| y.at(n, c, yy, xx)).collect();
                    let mean = vals.iter().sum::<f64>() / 5.0;
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
                    assert!(mean.abs() < 1e-9);
                    assert!((var - 1.0).abs() < 1e-9, "var {var}");
                }
            }
        }
    }

    #[test]
    fn sum_of_squares_gradient() {
        let g = Graph::new();
        let x = g.leaf(&t(Shape::new(1, 1, 1, 3), vec![1.0, 2.0, 3.0]));
        let sq = g.mul(&x, &x).unwrap();
        let loss = g.sum(&sq).unwrap();
        let grads = g.backward(&loss).unwrap();
        assert_eq!(grads.data(&x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let g = Graph::new();
        let x = g.leaf(&Tensor::full(Shape::new(2, 2, 2, 2), 0.3));
        let loss = g.sum(&x).unwrap();
        let grads = g.backward(&loss).unwrap();
        assert!(grads.data(&x).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn split_rejects_bad_widths() {
        let g = Graph::new();
        let x = Tensor::zeros(Shape::new(1, 4, 2, 2));
        assert!(g.split_channels(&x, &[1, 2]).is_err());
        let parts = g.split_channels(&x, &[1, 3]).unwrap();
        assert_eq!(parts[1].shape(), Shape::new(1, 3, 2, 2));
    }

    #[test]
    fn concat_then_split_is_identity() {
        let g = Graph::new();
        let a = Tensor::from_fn(Shape::new(2, 1, 2, 2), |n, _, y, x| (n * 4 + y * 2 + x) as f64);
        let b = Tensor::from_fn(Shape::new(2, 2, 2, 2), |n, c, y, x| -((n * 8 + c * 4 + y * 2 + x) as f64));
        let cat = g.concat_channels(&[&a, &b]).unwrap();
        let parts = g.split_channels(&cat, &[1, 2]).unwrap();
        assert_eq!(parts[0].data(), a.data());
        assert_eq!(parts[1].data(), b.data());
    }

    #[test]
    fn transpose_hw_moves_elements() {
        let g = Graph::new();
        let x = Tensor::from_fn(Shape::new(1, 1, 2, 3), |_, _, y, x| (y * 3 + x) as f64);
        let y = g.transpose_hw(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 3, 2));
        assert_eq!(y.at(0, 0, 2, 1), x.at(0, 0, 1, 2));
    }

    #[test]
    fn tile_patches_repeats_map() {
        let g = Graph::new();
        let m = Tensor::from_fn(Shape::new(1, 1, 2, 2), |_, _, y, x| (y * 2 + x) as f64);
        let tiled = g.tile_patches(&m, 2, 4, 4).unwrap();
        assert_eq!(tiled.at(1, 0, 3, 2), m.at(0, 0, 1, 0));
        assert!(g.tile_patches(&m, 1, 3, 4).is_err());
    }
}
