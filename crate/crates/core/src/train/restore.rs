use super::metrics::{luma, psnr, ssim};
use crate::blocks::ParamStore;
use crate::data::{ImageBuffer, PairDataset};
use crate::error::Result;
use crate::network::AmsaUnet;
use crate::tensor::Graph;

/// Mirror index into `0..n` without repeating the edge sample, folding as
/// often as needed for pads longer than the image.
pub fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Pads on the right and bottom by reflection up to multiples of `multiple`.
pub fn pad_reflect(img: &ImageBuffer, multiple: usize) -> Result<ImageBuffer> {
    let up = |v: usize| v.div_ceil(multiple) * multiple;
    let (w, h) = (img.width(), img.height());
    if up(w) == w && up(h) == h {
        return Ok(img.clone());
    }
    ImageBuffer::from_fn(up(w), up(h), img.channels(), |x, y, c| {
        img.get(reflect_index(x, w), reflect_index(y, h), c)
    })
}

fn crop(img: &ImageBuffer, w: usize, h: usize) -> Result<ImageBuffer> {
    ImageBuffer::from_fn(w, h, img.channels(), |x, y, c| img.get(x, y, c))
}

/// Full-scale restoration of one image of any size. Grayscale input comes
/// back as grayscale (the luma of the restored RGB image).
pub fn deblur(model: &AmsaUnet, params: &ParamStore, img: &ImageBuffer) -> Result<ImageBuffer> {
    let rgb = img.to_rgb();
    let padded = pad_reflect(&rgb, model.config().size_multiple())?;
    let g = Graph::new();
    let out = model.forward(&g, params, &padded.to_tensor())?;
    let restored = ImageBuffer::from_tensor(&out.restored[0], 0)?;
    let restored = crop(&restored, img.width(), img.height())?;
    if img.channels() == 1 {
        let y = luma(&restored);
        return ImageBuffer::new(img.width(), img.height(), 1, y.iter().map(|v| v.round() as u8).collect());
    }
    Ok(restored)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Restores every blurry image and scores it against its sharp target.
pub fn evaluate(model: &AmsaUnet, params: &ParamStore, data: &PairDataset) -> Result<Vec<PairScore>> {
    (0..data.len())
        .map(|i| {
            let (name, blur, sharp) = data.pair(i);
            let out = deblur(model, params, blur)?;
            Ok(PairScore {
                name: name.to_string(),
                psnr: psnr(&out, sharp)?,
                ssim: ssim(&out, sharp)?,
            })
        })
        .collect()
}

/// Mean PSNR of restored against sharp; `NaN` for an empty set.
pub fn mean_psnr(model: &AmsaUnet, params: &ParamStore, data: &PairDataset) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.len() {
        let (_, blur, sharp) = data.pair(i);
        total += psnr(&deblur(model, params, blur)?, sharp)?;
    }
    Ok(total / data.len() as f64)
}

/// Mean PSNR of the blurry inputs themselves.
pub fn mean_input_psnr(data: &PairDataset) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.len() {
        let (_, blur, sharp) = data.pair(i);
        total += psnr(blur, sharp)?;
    }
    Ok(total / data.len() as f64)
}
