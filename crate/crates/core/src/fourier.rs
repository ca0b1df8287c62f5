//! Radix-2 2-D FFT over full planes and over square patches of feature maps.
//!
//! Forward transforms are unnormalized; inverse transforms carry the
//! `1/(H·W)` factor. All sizes must be powers of two; callers pad.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Direction {
    Forward,
    Inverse,
}

/// `exp(∓2πi·j/len)` for `j < len/2`.
struct Twiddles {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Twiddles {
    fn new(len: usize, dir: Direction) -> Self {
        let sign = match dir {
            Direction::Forward => -1.0,
            Direction::Inverse => 1.0,
        };
        let (cos, sin) = (0..len / 2)
            .map(|j| {
                let angle = sign * 2.0 * PI * j as f64 / len as f64;
                (angle.cos(), angle.sin())
            })
            .unzip();
        Twiddles { cos, sin }
    }
}

/// In-place iterative Cooley–Tukey on one line. Returns the butterfly count.
fn fft_line(re: &mut [f64], im: &mut [f64], tw: &Twiddles) -> u64 {
    let n = re.len();
    if n <= 1 {
        return 0;
    }
    let mut j = 0usize;
    for i in 0..n - 1 {
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
        let mut bit = n >> 1;
        while bit <= j {
            j -= bit;
            bit >>= 1;
        }
        j += bit;
    }

    let mut butterflies = 0u64;
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let step = n / size;
        for start in (0..n).step_by(size) {
            for k in 0..half {
                let (wr, wi) = (tw.cos[k * step], tw.sin[k * step]);
                let (u, v) = (start + k, start + k + half);
                let tr = wr * re[v] - wi * im[v];
                let ti = wr * im[v] + wi * re[v];
                re[v] = re[u] - tr;
                im[v] = im[u] - ti;
                re[u] += tr;
                im[u] += ti;
            }
        }
        butterflies += (n / 2) as u64;
        size <<= 1;
    }
    butterflies
}

/// Transforms an `h x w` row-major grid in place; returns butterflies executed.
fn fft2_in_place(re: &mut [f64], im: &mut [f64], h: usize, w: usize, dir: Direction) -> u64 {
    let tw_row = Twiddles::new(w, dir);
    let tw_col = Twiddles::new(h, dir);
    let mut butterflies = 0;
    for (r, i) in re.chunks_exact_mut(w).zip(im.chunks_exact_mut(w)) {
        butterflies += fft_line(r, i, &tw_row);
    }
    let mut col_re = vec![0.0; h];
    let mut col_im = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col_re[y] = re[y * w + x];
            col_im[y] = im[y * w + x];
        }
        butterflies += fft_line(&mut col_re, &mut col_im, &tw_col);
        for y in 0..h {
            re[y * w + x] = col_re[y];
            im[y * w + x] = col_im[y];
        }
    }
    if dir == Direction::Inverse {
        let scale = 1.0 / (h * w) as f64;
        re.iter_mut().chain(im.iter_mut()).for_each(|v| *v *= scale);
    }
    butterflies
}

fn check_pow2(h: usize, w: usize) -> Result<()> {
    if !h.is_power_of_two() {
        return Err(Error::dim(
            "height",
            format!("height {h} is not a power of two; pad the input"),
        ));
    }
    if !w.is_power_of_two() {
        return Err(Error::dim(
            "width",
            format!("width {w} is not a power of two; pad the input"),
        ));
    }
    Ok(())
}

/// Multiply-adds charged per butterfly (one complex multiply).
pub const MACS_PER_BUTTERFLY: u64 = 4;

/// Butterflies in one `h x w` 2-D transform.
pub fn fft2_butterflies(h: usize, w: usize) -> u64 {
    let log = |n: usize| n.trailing_zeros() as u64;
    (h * (w / 2)) as u64 * log(w) + (w * (h / 2)) as u64 * log(h)
}

/// Complex-valued 2-D grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    pub height: usize,
    pub width: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexGrid {
    pub fn new(height: usize, width: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let n = height * width;
        if n == 0 || re.len() != n || im.len() != n {
            return Err(Error::dim(
                "data",
                format!("re/im lengths {}/{} do not fit {height}x{width}", re.len(), im.len()),
            ));
        }
        Ok(ComplexGrid {
            height,
            width,
            re,
            im,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        ComplexGrid {
            height,
            width,
            re: vec![0.0; height * width],
            im: vec![0.0; height * width],
        }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }
}

/// Unnormalized forward DFT of a real `height x width` grid.
pub fn fft2(height: usize, width: usize, data: &[f64]) -> Result<ComplexGrid> {
    check_pow2(height, width)?;
    let mut grid = ComplexGrid::new(height, width, data.to_vec(), vec![0.0; data.len()])?;
    fft2_in_place(&mut grid.re, &mut grid.im, height, width, Direction::Forward);
    Ok(grid)
}

/// Forward DFT of a complex grid.
pub fn fft2_complex(input: &ComplexGrid) -> Result<ComplexGrid> {
    check_pow2(input.height, input.width)?;
    let mut grid = input.clone();
    fft2_in_place(&mut grid.re, &mut grid.im, grid.height, grid.width, Direction::Forward);
    Ok(grid)
}

/// Inverse DFT, normalized by `1/(H·W)`, keeping the complex result.
pub fn ifft2_complex(input: &ComplexGrid) -> Result<ComplexGrid> {
    check_pow2(input.height, input.width)?;
    let mut grid = input.clone();
    fft2_in_place(&mut grid.re, &mut grid.im, grid.height, grid.width, Direction::Inverse);
    Ok(grid)
}

/// Inverse DFT of a conjugate-symmetric spectrum, returning the real grid.
///
/// Debug builds assert the discarded imaginary residue is at most 1e-10
/// relative to the largest real magnitude.
pub fn ifft2(input: &ComplexGrid) -> Result<Vec<f64>> {
    let grid = ifft2_complex(input)?;
    #[cfg(debug_assertions)]
    {
        let scale = grid.re.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let residue = grid.im.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(
            residue <= 1e-10 * scale,
            "ifft2 imaginary residue {residue:e} exceeds tolerance; spectrum is not conjugate-symmetric"
        );
    }
    Ok(grid.re)
}

/// Complex Hadamard product `a ⊙ b` or, with `conjugate_b`, `a ⊙ conj(b)`.
///
/// With `conjugate_b` the inverse transform of the product is the circular
/// cross-correlation of the two signals instead of their convolution.
pub fn freq_elementwise_product(a: &ComplexGrid, b: &ComplexGrid, conjugate_b: bool) -> Result<ComplexGrid> {
    if a.height != b.height {
        return Err(Error::dim("height", format!("{} vs {}", a.height, b.height)));
    }
    if a.width != b.width {
        return Err(Error::dim("width", format!("{} vs {}", a.width, b.width)));
    }
    let sign = if conjugate_b { -1.0 } else { 1.0 };
    let mut out = ComplexGrid::zeros(a.height, a.width);
    for i in 0..a.len() {
        let (ar, ai) = (a.re[i], a.im[i]);
        let (br, bi) = (b.re[i], sign * b.im[i]);
        out.re[i] = ar * br - ai * bi;
        out.im[i] = ar * bi + ai * br;
    }
    Ok(out)
}

/// A complex feature map stored as separate real and imaginary tensors.
#[derive(Clone, Debug)]
pub struct ComplexTensor {
    pub re: Tensor,
    pub im: Tensor,
}

fn check_patch(shape: Shape, patch: usize) -> Result<()> {
    if patch == 0 || !patch.is_power_of_two() {
        return Err(Error::dim("patch", format!("patch {patch} must be a power of two")));
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
    Ok(())
}

/// Applies an independent 2-D transform to every `ph x pw` block of every
/// `(batch, channel)` plane.
fn transform_blocks(
    re: &[f64],
    im: Option<&[f64]>,
    shape: Shape,
    (ph, pw): (usize, usize),
    dir: Direction,
    scale: f64,
) -> (Vec<f64>, Vec<f64>, u64) {
    let [n, c, h, w] = shape.0;
    let mut out_re = vec![0.0; re.len()];
    let mut out_im = vec![0.0; re.len()];
    let mut buf_re = vec![0.0; ph * pw];
    let mut buf_im = vec![0.0; ph * pw];
    let mut butterflies = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for py in (0..h).step_by(ph) {
            for px in (0..w).step_by(pw) {
                for dy in 0..ph {
                    let off = base + (py + dy) * w + px;
                    buf_re[dy * pw..(dy + 1) * pw].copy_from_slice(&re[off..off + pw]);
                    match im {
                        Some(im) => buf_im[dy * pw..(dy + 1) * pw].copy_from_slice(&im[off..off + pw]),
                        None => buf_im[dy * pw..(dy + 1) * pw].fill(0.0),
                    }
                }
                butterflies += fft2_in_place(&mut buf_re, &mut buf_im, ph, pw, dir);
                for dy in 0..ph {
                    let off = base + (py + dy) * w + px;
                    for dx in 0..pw {
                        out_re[off + dx] = scale * buf_re[dy * pw + dx];
                        out_im[off + dx] = scale * buf_im[dy * pw + dx];
                    }
                }
            }
        }
    }
    (out_re, out_im, butterflies)
}

impl Graph {
    fn patch_transform(
        &self,
        re: &Tensor,
        im: Option<&Tensor>,
        patch: usize,
        dir: Direction,
    ) -> Result<ComplexTensor> {
        check_patch(re.shape(), patch)?;
        self.block_transform(re, im, (patch, patch), dir)
    }

    fn block_transform(
        &self,
        re: &Tensor,
        im: Option<&Tensor>,
        block: (usize, usize),
        dir: Direction,
    ) -> Result<ComplexTensor> {
        let shape = re.shape();
        let area = (block.0 * block.1) as f64;
        if let Some(im) = im {
            shape.expect_eq(&im.shape())?;
        }
        let (out_re, out_im, butterflies) =
            transform_blocks(re.data(), im.map(Tensor::data), shape, block, dir, 1.0);
        self.count_macs(butterflies * MACS_PER_BUTTERFLY);

        // y = A x with A the (un)normalized DFT; the adjoint is Aᴴ, which is
        // the opposite-direction transform rescaled.
        let (adjoint, adjoint_scale) = match dir {
            Direction::Forward => (Direction::Inverse, area),
            Direction::Inverse => (Direction::Forward, 1.0 / area),
        };
        let mut inputs = vec![re];
        inputs.extend(im);
        let outs = self.emit_multi(
            &inputs,
            vec![(shape, out_re), (shape, out_im)],
            move |g, needs| {
                let (gr, gi, _) =
                    transform_blocks(&g[0], Some(&g[1]), shape, block, adjoint, adjoint_scale);
                let mut grads = vec![Some(gr)];
                if needs.len() == 2 {
                    grads.push(needs[1].then_some(gi));
                }
                grads
            },
        )?;
        let [re, im]: [Tensor; 2] = outs.try_into().expect("two outputs");
        Ok(ComplexTensor { re, im })
    }

    /// Forward FFT of every `patch x patch` block of a real feature map.
    pub fn fft2_batched(&self, x: &Tensor, patch: usize) -> Result<ComplexTensor> {
        self.patch_transform(x, None, patch, Direction::Forward)
    }

    /// Forward FFT of each whole `H x W` plane of a real feature map.
    pub fn fft2_plane(&self, x: &Tensor) -> Result<ComplexTensor> {
        let s = x.shape();
        check_pow2(s.h(), s.w())?;
        self.block_transform(x, None, (s.h(), s.w()), Direction::Forward)
    }

    /// Forward FFT of every block of a complex feature map.
    pub fn fft2_batched_complex(&self, x: &ComplexTensor, patch: usize) -> Result<ComplexTensor> {
        self.patch_transform(&x.re, Some(&x.im), patch, Direction::Forward)
    }

    /// Normalized inverse FFT of every block.
    pub fn ifft2_batched(&self, x: &ComplexTensor, patch: usize) -> Result<ComplexTensor> {
        self.patch_transform(&x.re, Some(&x.im), patch, Direction::Inverse)
    }

    /// Elementwise complex product, optionally conjugating `b`.
    pub fn complex_mul(&self, a: &ComplexTensor, b: &ComplexTensor, conjugate_b: bool) -> Result<ComplexTensor> {
        let rr = self.mul(&a.re, &b.re)?;
        let ii = self.mul(&a.im, &b.im)?;
        let ri = self.mul(&a.re, &b.im)?;
        let ir = self.mul(&a.im, &b.re)?;
        if conjugate_b {
            Ok(ComplexTensor {
                re: self.add(&rr, &ii)?,
                im: self.sub(&ir, &ri)?,
            })
        } else {
            Ok(ComplexTensor {
                re: self.sub(&rr, &ii)?,
                im: self.add(&ri, &ir)?,
            })
        }
    }
}
