use super::{Graph, Shape, Tensor};
use crate::error::{Error, Result};

/// Source taps for half-pixel-centred bilinear upsampling along one axis:
/// `(lower index, upper index, upper weight)` per output index.
fn upsample_taps(len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl Graph {
    /// Bilinear 2x reduction (half-pixel centres), which for an exact factor
    /// of two is the mean of each 2x2 block.
    pub fn downsample_bilinear(&self, x: &Tensor) -> Result<Tensor> {
        let [n, c, h, w] = x.shape().0;
        if h % 2 != 0 {
            return Err(Error::dim("height", format!("cannot halve odd height {h}")));
        }
        if w % 2 != 0 {
            return Err(Error::dim("width", format!("cannot halve odd width {w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let xd = x.data();
        let mut out = vec![0.0; n * c * ho * wo];
        for p in 0..n * c {
            let src = &xd[p * h * w..];
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for y in 0..ho {
                let r0 = &src[2 * y * w..];
                let r1 = &src[(2 * y + 1) * w..];
                for xo in 0..wo {
                    dst[y * wo + xo] =
                        0.25 * ((r0[2 * xo] + r0[2 * xo + 1]) + (r1[2 * xo] + r1[2 * xo + 1]));
                }
            }
        }
        self.emit(&[x], Shape::new(n, c, ho, wo), out, move |g, _| {
            let mut gx = vec![0.0; n * c * h * w];
            for p in 0..n * c {
                let src = &g[p * ho * wo..(p + 1) * ho * wo];
                let dst = &mut gx[p * h * w..(p + 1) * h * w];
                for y in 0..h {
                    for xi in 0..w {
                        dst[y * w + xi] = 0.25 * src[(y / 2) * wo + xi / 2];
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    /// Bilinear upsampling by an integer factor with half-pixel centres and
    /// edge clamping.
    pub fn upsample_bilinear(&self, x: &Tensor, factor: usize) -> Result<Tensor> {
        if factor == 0 {
            return Err(Error::contract("upsampling factor must be at least 1"));
        }
        let [n, c, h, w] = x.shape().0;
        let (ho, wo) = (h * factor, w * factor);
        let ty = upsample_taps(h, factor);
        let tx = upsample_taps(w, factor);
        let xd = x.data();
        let mut out = vec![0.0; n * c * ho * wo];
        for p in 0..n * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    dst[oy * wo + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        self.emit(&[x], Shape::new(n, c, ho, wo), out, move |g, _| {
            let mut gx = vec![0.0; n * c * h * w];
            for p in 0..n * c {
                let src = &g[p * ho * wo..(p + 1) * ho * wo];
                let dst = &mut gx[p * h * w..(p + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let v = src[oy * wo + ox];
                        dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                        dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                        dst[y1 * w + x0] += v * fy * (1.0 - fx);
                        dst[y1 * w + x1] += v * fy * fx;
                    }
                }
            }
            vec![Some(gx)]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_shape_and_constant() {
        let g = Graph::new();
        let x = Tensor::full(Shape::new(1, 3, 64, 64), 0.37);
        let y = g.downsample_bilinear(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 3, 32, 32));
        assert!(y.data().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn downsample_checkerboard_is_half() {
        let g = Graph::new();
        let x = Tensor::from_fn(Shape::new(1, 1, 8, 8), |_, _, y, x| ((x + y) % 2) as f64);
        let y = g.downsample_bilinear(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn downsample_rejects_odd() {
        let g = Graph::new();
        let err = g.downsample_bilinear(&Tensor::zeros(Shape::new(1, 1, 4, 5))).unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: "width", .. }));
    }

    #[test]
    fn upsample_preserves_constants() {
        let g = Graph::new();
        let x = Tensor::full(Shape::new(1, 2, 3, 5), -1.25);
        let y = g.upsample_bilinear(&x, 4).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 12, 20));
        assert!(y.data().iter().all(|&v| (v + 1.25).abs() < 1e-15));
    }

    #[test]
    fn upsample_interpolates_halfway() {
        let g = Graph::new();
        let x = Tensor::new(Shape::new(1, 1, 1, 2), vec![0.0, 1.0]).unwrap();
        let y = g.upsample_bilinear(&x, 2).unwrap();
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
    }
}
