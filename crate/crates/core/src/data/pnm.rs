//! Binary PGM (P5) and PPM (P6) images with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// 8-bit raster, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::contract(format!("empty image {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::contract(format!("unsupported channel count {channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::contract(format!(
                "{} pixel bytes for a {width}x{height}x{channels} image",
                pixels.len()
            )));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> u8) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Three-channel copy; grayscale is replicated into every channel.
    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let pixels = self.pixels.iter().flat_map(|&v| [v, v, v]).collect();
        ImageBuffer {
            pixels,
            channels: 3,
            ..*self
        }
    }

    /// `1 x C x H x W` tensor with values `pixel / 255`.
    pub fn to_tensor(&self) -> Tensor {
        let shape = Shape::new(1, self.channels, self.height, self.width);
        Tensor::from_fn(shape, |_, c, y, x| f64::from(self.get(x, y, c)) / 255.0)
    }

    /// Crop of the `size`-pixel window at `(x0, y0)` as a tensor.
    pub fn crop_tensor(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Tensor> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::contract(format!(
                "crop {w}x{h} at ({x0},{y0}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let shape = Shape::new(1, self.channels, h, w);
        Ok(Tensor::from_fn(shape, |_, c, y, x| f64::from(self.get(x0 + x, y0 + y, c)) / 255.0))
    }

    /// Image `index` of a batch tensor, scaled by 255, clamped and rounded.
    pub fn from_tensor(t: &Tensor, index: usize) -> Result<ImageBuffer> {
        let [n, c, h, w] = t.shape().0;
        if index >= n {
            return Err(Error::dim("batch", format!("index {index} out of {n}")));
        }
        Self::from_fn(w, h, c, |x, y, ch| (t.at(index, ch, y, x) * 255.0).clamp(0.0, 255.0).round() as u8)
    }

    /// Canonical file bytes: `P5`/`P6` header `"<w> <h>\n255\n"` then raw pixels.
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<ImageBuffer> {
        let mut r = HeaderReader {
            bytes,
            pos: 0,
            token_start: 0,
        };
        let channels = match bytes.get(..2) {
            Some(b"P5") => 1,
            Some(b"P6") => 3,
            _ => return Err(r.error("expected magic P5 or P6")),
        };
        r.pos = 2;
        let width = r.number("width")?;
        let height = r.number("height")?;
        let maxval = r.number("maxval")?;
        let maxval_at = r.token_start;
        if maxval != 255 {
            return Err(Error::Parse {
                offset: maxval_at,
                message: format!("unsupported maxval {maxval}, only 255 is supported"),
            });
        }
        // exactly one whitespace byte separates the header from the raster
        match bytes.get(r.pos) {
            Some(b) if b.is_ascii_whitespace() => r.pos += 1,
            _ => return Err(r.error("expected whitespace after maxval")),
        }
        if width == 0 || height == 0 {
            return Err(r.error("zero image dimension"));
        }
        let len = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| r.error("image dimensions overflow"))?;
        let payload = &bytes[r.pos..];
        if payload.len() < len {
            return Err(Error::Parse {
                offset: bytes.len(),
                message: format!("truncated raster: expected {len} bytes, found {}", payload.len()),
            });
        }
        if payload.len() > len {
            return Err(Error::Parse {
                offset: r.pos + len,
                message: format!("{} unexpected bytes after the raster", payload.len() - len),
            });
        }
        ImageBuffer::new(width, height, channels, payload.to_vec())
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    token_start: usize,
}

impl HeaderReader<'_> {
    fn error(&self, message: &str) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let before = self.pos;
        self.skip_space_and_comments();
        if self.pos == before {
            return Err(self.error(&format!("expected whitespace before {what}")));
        }
        let start = self.pos;
        self.token_start = start;
        let mut value: usize = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add(usize::from(b - b'0')))
                .ok_or_else(|| self.error(&format!("{what} too large")))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.error(&format!("expected {what}")));
        }
        Ok(value)
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ImageBuffer::decode(&bytes)
}

pub fn write_image(image: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, image.encode()).map_err(|e| Error::io(path, e))
}
