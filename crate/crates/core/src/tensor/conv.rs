use std::sync::Arc;

use super::{Graph, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Conv2dOptions {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dOptions {
    /// Stride 1 with "same" zero padding for an odd kernel.
    pub fn same(kernel: usize) -> Self {
        Conv2dOptions {
            padding: kernel / 2,
            ..Default::default()
        }
    }
}

/// Geometry of a cross-correlation `x (n,cin,h,w) -> y (n,cout,hout,wout)`.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    groups: usize,
    hout: usize,
    wout: usize,
}

impl Geometry {
    fn cin_per_group(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_per_group(&self) -> usize {
        self.cout / self.groups
    }

    fn macs(&self) -> u64 {
        (self.n * self.cout * self.hout * self.wout * self.cin_per_group() * self.k * self.k) as u64
    }

    /// Output indices `o` with `o*stride + kk - pad` inside `[0, len)`.
    fn valid_range(&self, kk: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let offset = kk as isize - self.pad as isize;
        // smallest o with o*s + offset >= 0
        let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
        // largest o with o*s + offset <= len-1, exclusive bound
        let hi_incl = (len as isize - 1 - offset).div_euclid(s);
        let hi = (hi_incl + 1).clamp(0, out_len as isize);
        (lo.min(hi) as usize, hi as usize)
    }

    /// Calls `f(co, cin_in_group, kh, kw, oy, ox_lo, ox_hi, iy, ix_lo)` for every
    /// contiguous run of valid taps.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize, usize, usize)) {
        let cin_g = self.cin_per_group();
        for co in 0..self.cout {
            for cig in 0..cin_g {
                for kh in 0..self.k {
                    let (oy_lo, oy_hi) = self.valid_range(kh, self.h, self.hout);
                    for kw in 0..self.k {
                        let (ox_lo, ox_hi) = self.valid_range(kw, self.w, self.wout);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let ix_lo = ox_lo * self.stride + kw - self.pad;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * self.stride + kh - self.pad;
                            f(co, cig, kh, kw, oy, ox_lo, ox_hi, iy, ix_lo);
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &[f64], weight: &[f64]) -> Vec<f64> {
        let (plane_in, plane_out) = (self.h * self.w, self.hout * self.wout);
        let cin_g = self.cin_per_group();
        let cout_g = self.cout_per_group();
        let mut out = vec![0.0; self.n * self.cout * plane_out];
        for b in 0..self.n {
            let xb = &x[b * self.cin * plane_in..(b + 1) * self.cin * plane_in];
            let ob = &mut out[b * self.cout * plane_out..(b + 1) * self.cout * plane_out];
            self.for_each_run(|co, cig, kh, kw, oy, ox_lo, ox_hi, iy, ix_lo| {
                let ci = (co / cout_g) * cin_g + cig;
                let wv = weight[((co * cin_g + cig) * self.k + kh) * self.k + kw];
                let orow = &mut ob[co * plane_out + oy * self.wout..][ox_lo..ox_hi];
                let irow = &xb[ci * plane_in + iy * self.w..];
                if self.stride == 1 {
                    for (o, i) in orow.iter_mut().zip(&irow[ix_lo..]) {
                        *o += wv * i;
                    }
                } else {
                    for (j, o) in orow.iter_mut().enumerate() {
                        *o += wv * irow[ix_lo + j * self.stride];
                    }
                }
            });
        }
        out
    }

    fn backward_input(&self, gout: &[f64], weight: &[f64]) -> Vec<f64> {
        let (plane_in, plane_out) = (self.h * self.w, self.hout * self.wout);
        let cin_g = self.cin_per_group();
        let cout_g = self.cout_per_group();
        let mut gin = vec![0.0; self.n * self.cin * plane_in];
        for b in 0..self.n {
            let gb = &gout[b * self.cout * plane_out..(b + 1) * self.cout * plane_out];
            let ib = &mut gin[b * self.cin * plane_in..(b + 1) * self.cin * plane_in];
            self.for_each_run(|co, cig, kh, kw, oy, ox_lo, ox_hi, iy, ix_lo| {
                let ci = (co / cout_g) * cin_g + cig;
                let wv = weight[((co * cin_g + cig) * self.k + kh) * self.k + kw];
                let grow = &gb[co * plane_out + oy * self.wout..][ox_lo..ox_hi];
                let irow = &mut ib[ci * plane_in + iy * self.w..];
                if self.stride == 1 {
                    for (i, g) in irow[ix_lo..].iter_mut().zip(grow) {
                        *i += wv * g;
                    }
                } else {
                    for (j, g) in grow.iter().enumerate() {
                        irow[ix_lo + j * self.stride] += wv * g;
                    }
                }
            });
        }
        gin
    }

    fn backward_weight(&self, x: &[f64], gout: &[f64]) -> Vec<f64> {
        let (plane_in, plane_out) = (self.h * self.w, self.hout * self.wout);
        let cin_g = self.cin_per_group();
        let cout_g = self.cout_per_group();
        let mut gw = vec![0.0; self.cout * cin_g * self.k * self.k];
        for b in 0..self.n {
            let xb = &x[b * self.cin * plane_in..(b + 1) * self.cin * plane_in];
            let gb = &gout[b * self.cout * plane_out..(b + 1) * self.cout * plane_out];
            self.for_each_run(|co, cig, kh, kw, oy, ox_lo, ox_hi, iy, ix_lo| {
                let ci = (co / cout_g) * cin_g + cig;
                let grow = &gb[co * plane_out + oy * self.wout..][ox_lo..ox_hi];
                let irow = &xb[ci * plane_in + iy * self.w..];
                let acc: f64 = if self.stride == 1 {
                    grow.iter().zip(&irow[ix_lo..]).map(|(g, i)| g * i).sum()
                } else {
                    grow.iter()
                        .enumerate()
                        .map(|(j, g)| g * irow[ix_lo + j * self.stride])
                        .sum()
                };
                gw[((co * cin_g + cig) * self.k + kh) * self.k + kw] += acc;
            });
        }
        gw
    }
}

fn bias_grad(gout: &[f64], n: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut gb = vec![0.0; c];
    for b in 0..n {
        for (ch, acc) in gb.iter_mut().enumerate() {
            let off = (b * c + ch) * plane;
            *acc += gout[off..off + plane].iter().sum::<f64>();
        }
    }
    gb
}

fn add_bias(out: &mut [f64], bias: &[f64], n: usize, c: usize, plane: usize) {
    for b in 0..n {
        for (ch, bv) in bias.iter().enumerate() {
            let off = (b * c + ch) * plane;
            out[off..off + plane].iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn check_bias(bias: Option<&Tensor>, cout: usize) -> Result<()> {
    if let Some(b) = bias {
        Shape::new(1, cout, 1, 1).expect_eq(&b.shape())?;
    }
    Ok(())
}

fn square_kernel(weight: &Shape) -> Result<usize> {
    if weight.h() != weight.w() {
        return Err(Error::dim(
            "width",
            format!("kernel must be square, got {}x{}", weight.h(), weight.w()),
        ));
    }
    Ok(weight.h())
}

impl Graph {
    /// 2-D cross-correlation with zero padding.
    ///
    /// `weight` is `(C_out, C_in/groups, k, k)`, `bias` is `(1, C_out, 1, 1)`.
    pub fn conv2d(
        &self,
        input: &Tensor,
        weight: &Tensor,
        bias: Option<&Tensor>,
        opts: Conv2dOptions,
    ) -> Result<Tensor> {
        let [n, cin, h, w] = input.shape().0;
        let ws = weight.shape();
        let k = square_kernel(&ws)?;
        let Conv2dOptions {
            stride,
            padding,
            groups,
        } = opts;
        if stride == 0 {
            return Err(Error::contract("stride must be at least 1"));
        }
        if groups == 0 || cin % groups != 0 || ws.n() % groups != 0 {
            return Err(Error::dim(
                "channel",
                format!("{cin} input / {} output channels not divisible by groups {groups}", ws.n()),
            ));
        }
        if ws.c() != cin / groups {
            return Err(Error::dim(
                "channel",
                format!("weight expects {} input channels per group, input has {}", ws.c(), cin / groups),
            ));
        }
        if h + 2 * padding < k {
            return Err(Error::dim("height", format!("kernel {k} larger than padded height {h}")));
        }
        if w + 2 * padding < k {
            return Err(Error::dim("width", format!("kernel {k} larger than padded width {w}")));
        }
        let cout = ws.n();
        check_bias(bias, cout)?;
        let geom = Geometry {
            n,
            cin,
            h,
            w,
            cout,
            k,
            stride,
            pad: padding,
            groups,
            hout: (h + 2 * padding - k) / stride + 1,
            wout: (w + 2 * padding - k) / stride + 1,
        };
        self.count_macs(geom.macs());
        let mut out = geom.forward(input.data(), weight.data());
        let plane_out = geom.hout * geom.wout;
        if let Some(b) = bias {
            add_bias(&mut out, b.data(), n, cout, plane_out);
        }

        let xd = input.shared_data();
        let wd = weight.shared_data();
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.emit(
            &inputs,
            Shape::new(n, cout, geom.hout, geom.wout),
            out,
            move |g, needs| {
                let mut grads = vec![
                    needs[0].then(|| geom.backward_input(g, &wd)),
                    needs[1].then(|| geom.backward_weight(&xd, g)),
                ];
                if needs.len() == 3 {
                    grads.push(needs[2].then(|| bias_grad(g, n, cout, plane_out)));
                }
                grads
            },
        )
    }

    /// Transposed convolution: the adjoint of [`Graph::conv2d`] with the same
    /// weight layout read as `(C_in, C_out, k, k)`.
    ///
    /// Padding is `stride / 2`, so a kernel of `2 * stride` multiplies the
    /// spatial size by exactly `stride` (for even strides).
    pub fn conv_transpose2d(
        &self,
        input: &Tensor,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
    ) -> Result<Tensor> {
        if stride == 0 {
            return Err(Error::contract("stride must be at least 1"));
        }
        self.conv_transpose2d_padded(input, weight, bias, stride, stride / 2)
    }

    pub(crate) fn conv_transpose2d_padded(
        &self,
        input: &Tensor,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let [n, cin, h, w] = input.shape().0;
        let ws = weight.shape();
        let k = square_kernel(&ws)?;
        if ws.n() != cin {
            return Err(Error::dim(
                "channel",
                format!("weight expects {} input channels, input has {cin}", ws.n()),
            ));
        }
        let cout = ws.c();
        check_bias(bias, cout)?;
        let hout = ((h - 1) * stride + k)
            .checked_sub(2 * padding)
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::dim("height", "padding too large for transposed convolution"))?;
        let wout = ((w - 1) * stride + k)
            .checked_sub(2 * padding)
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::dim("width", "padding too large for transposed convolution"))?;
        // The equivalent forward convolution maps the output back onto the input.
        let geom = Geometry {
            n,
            cin: cout,
            h: hout,
            w: wout,
            cout: cin,
            k,
            stride,
            pad: padding,
            groups: 1,
            hout: h,
            wout: w,
        };
        self.count_macs(geom.macs());
        let mut out = geom.backward_input(input.data(), weight.data());
        let plane_out = hout * wout;
        if let Some(b) = bias {
            add_bias(&mut out, b.data(), n, cout, plane_out);
        }

        let xd = input.shared_data();
        let wd: Arc<Vec<f64>> = weight.shared_data();
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.emit(&inputs, Shape::new(n, cout, hout, wout), out, move |g, needs| {
            let mut grads = vec![
                needs[0].then(|| geom.forward(g, &wd)),
                needs[1].then(|| geom.backward_weight(g, &xd)),
            ];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| bias_grad(g, n, cout, plane_out)));
            }
            grads
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_reproduces_input() {
        let g = Graph::new();
        let x = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let w = Tensor::full(Shape::new(1, 1, 1, 1), 1.0);
        let y = g.conv2d(&x, &w, None, Conv2dOptions::default()).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn strided_output_shape() {
        let g = Graph::new();
        let x = Tensor::zeros(Shape::new(1, 1, 4, 4));
        let w = Tensor::zeros(Shape::new(1, 1, 3, 3));
        let opts = Conv2dOptions {
            stride: 2,
            padding: 1,
            groups: 1,
        };
        let y = g.conv2d(&x, &w, None, opts).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let g = Graph::new();
        let x = Tensor::zeros(Shape::new(1, 3, 4, 4));
        let w = Tensor::zeros(Shape::new(2, 2, 3, 3));
        let err = g.conv2d(&x, &w, None, Conv2dOptions::same(3)).unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: "channel", .. }));
    }

    #[test]
    fn bad_bias_is_rejected() {
        let g = Graph::new();
        let x = Tensor::zeros(Shape::new(1, 1, 4, 4));
        let w = Tensor::zeros(Shape::new(2, 1, 3, 3));
        let b = Tensor::zeros(Shape::new(1, 3, 1, 1));
        assert!(g.conv2d(&x, &w, Some(&b), Conv2dOptions::same(3)).is_err());
    }

    #[test]
    fn transpose_doubles_size() {
        let g = Graph::new();
        let x = Tensor::full(Shape::new(1, 1, 2, 2), 1.0);
        let w = Tensor::full(Shape::new(1, 3, 4, 4), 0.5);
        let y = g.conv_transpose2d(&x, &w, None, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 3, 4, 4));
    }

    #[test]
    fn transpose_of_zeros_is_bias() {
        let g = Graph::new();
        let x = Tensor::zeros(Shape::new(1, 2, 3, 3));
        let w = Tensor::full(Shape::new(2, 2, 4, 4), 0.7);
        let b = Tensor::new(Shape::new(1, 2, 1, 1), vec![0.25, -1.5]).unwrap();
        let y = g.conv_transpose2d(&x, &w, Some(&b), 2).unwrap();
        for c in 0..2 {
            for yy in 0..6 {
                for xx in 0..6 {
                    assert_eq!(y.at(0, c, yy, xx), b.data()[c]);
                }
            }
        }
    }

    #[test]
    fn counts_multiply_adds() {
        let g = Graph::new();
        let x = Tensor::zeros(Shape::new(2, 4, 8, 8));
        let w = Tensor::zeros(Shape::new(6, 2, 3, 3));
        let opts = Conv2dOptions {
            stride: 1,
            padding: 1,
            groups: 2,
        };
        g.conv2d(&x, &w, None, opts).unwrap();
        assert_eq!(g.macs(), 2 * 6 * 64 * 2 * 9);
    }
}
