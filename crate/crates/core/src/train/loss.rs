use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor};

pub const DEFAULT_FREQ_WEIGHT: f64 = 0.1;

fn mean_abs_diff(g: &Graph, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    g.mean(&g.abs(&g.sub(a, b)?)?)
}

/// `Σ_k [L1(out_k, sharp_k) + λ·L1(|fft2(out_k)|, |fft2(sharp_k)|)] / 3`.
///
/// L1 is the mean absolute difference over all elements; the spectra are
/// whole-plane transforms, so every scale needs power-of-two sides when
/// `λ ≠ 0`.
pub fn multiscale_loss(g: &Graph, outputs: &[Tensor; 3], targets: &[Tensor; 3], lambda: f64) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (k, (out, target)) in outputs.iter().zip(targets).enumerate() {
        if out.shape() != target.shape() {
            return Err(Error::dim(
                "scale",
                format!("scale {k}: output {} vs target {}", out.shape(), target.shape()),
            ));
        }
        let mut term = mean_abs_diff(g, out, target)?;
        if lambda != 0.0 {
            let fo = g.fft2_plane(out)?;
            let ft = g.fft2_plane(target)?;
            let mag_o = g.complex_abs(&fo.re, &fo.im)?;
            let mag_t = g.complex_abs(&ft.re, &ft.im)?;
            let freq = mean_abs_diff(g, &mag_o, &mag_t)?;
            term = g.add(&term, &g.scalar_mul(&freq, lambda)?)?;
        }
        total = Some(match total {
            None => term,
            Some(t) => g.add(&t, &term)?,
        });
    }
    let total = total.expect("three scales");
    g.scalar_mul(&total, 1.0 / 3.0)
}
