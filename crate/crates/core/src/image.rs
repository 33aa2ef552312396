//! Binary PPM (P6) decoding and bilinear resizing to the network input.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::net::INPUT_SIZE;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("not a binary PPM: expected magic \"P6\", found {0:?}")]
    NotP6(String),
    #[error("bad PPM header at byte {offset}: {reason}")]
    BadHeader { offset: usize, reason: &'static str },
    #[error("short pixel data: expected {expected} bytes, found {actual}")]
    ShortPixelData { expected: usize, actual: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// 8-bit interleaved RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width * height * 3, "pixel buffer size");
        Self { width, height, pixels }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &'static str) -> Result<usize, ImageError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::BadHeader { offset: start, reason: what });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(ImageError::BadHeader {
                offset: start,
                reason: "number out of range",
            })
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, ImageError> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(ImageError::NotP6(found));
    }
    let mut r = HeaderReader { bytes, pos: 2 };
    if !r.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(ImageError::BadHeader {
            offset: 2,
            reason: "expected whitespace after magic",
        });
    }
    let width = r.number("expected width")?;
    let height = r.number("expected height")?;
    let maxval_at = r.pos;
    let maxval = r.number("expected maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageError::BadHeader {
            offset: maxval_at,
            reason: "zero image dimension",
        });
    }
    if !(1..=255).contains(&maxval) {
        return Err(ImageError::BadHeader {
            offset: maxval_at,
            reason: "maxval must be in 1..=255 (8-bit samples)",
        });
    }
    if !r.bytes.get(r.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(ImageError::BadHeader {
            offset: r.pos,
            reason: "expected single whitespace before pixel data",
        });
    }
    let data_start = r.pos + 1;
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or(ImageError::BadHeader {
            offset: 3,
            reason: "image dimensions overflow",
        })?;
    let actual = bytes.len() - data_start;
    if actual < expected {
        return Err(ImageError::ShortPixelData { expected, actual });
    }
    let mut pixels = bytes[data_start..data_start + expected].to_vec();
    if maxval != 255 {
        for p in &mut pixels {
            *p = ((*p as usize).min(maxval) * 255 / maxval) as u8;
        }
    }
    Ok(RgbImage { width, height, pixels })
}

/// Bilinear resample with half-pixel centers; source coordinates are
/// clamped to the image. Returns interleaved RGB samples in the `0..=255`
/// range.
pub fn resize_bilinear(img: &RgbImage, out_w: usize, out_h: usize) -> Vec<f32> {
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f32 / out as f32;
        (0..out)
            .map(|o| {
                let src = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f32);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, src - i0 as f32)
            })
            .collect()
    };
    let xs = axis(out_w, img.width);
    let ys = axis(out_h, img.height);
    let mut out = Vec::with_capacity(out_w * out_h * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p00 = img.pixel(x0, y0);
            let p01 = img.pixel(x1, y0);
            let p10 = img.pixel(x0, y1);
            let p11 = img.pixel(x1, y1);
            for c in 0..3 {
                let top = p00[c] as f32 * (1.0 - fx) + p01[c] as f32 * fx;
                let bottom = p10[c] as f32 * (1.0 - fx) + p11[c] as f32 * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

/// Resizes to the network input and maps samples to `[-1, 1]`.
pub fn image_to_tensor(img: &RgbImage) -> Tensor {
    let data = resize_bilinear(img, INPUT_SIZE, INPUT_SIZE)
        .into_iter()
        .map(|v| v / 127.5 - 1.0)
        .collect();
    Tensor::from_parts(Shape::image(INPUT_SIZE, INPUT_SIZE, 3), data)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage, ImageError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_ppm(&bytes)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor, ImageError> {
    Ok(image_to_tensor(&read_ppm(path)?))
}
