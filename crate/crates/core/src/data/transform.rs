use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::pnm::ImageBuffer;

/// Per-channel means subtracted after scaling to `[0, 1]`.
pub const IMAGENET_MEANS: [f64; 3] = [0.485, 0.456, 0.406];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    /// Half-pixel centres, edges clamped.
    Bilinear,
    Nearest,
}

/// `1×3×H×W` tensor of `byte / 255 − mean[c]`. Gray images are replicated to three channels.
pub fn normalize(img: &ImageBuffer, means: [f64; 3]) -> Tensor {
    Tensor::from_fn([1, 3, img.height, img.width], |_, c, y, x| {
        let ch = if img.channels == 3 { c } else { 0 };
        (img.get(x, y, ch) as f64 / 255.0 - means[c]) as f32
    })
}

/// Inverse of [`normalize`] up to byte quantization.
pub fn denormalize(t: &Tensor, means: [f64; 3]) -> Result<ImageBuffer> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::dim("nc", format!("expected 1x3xHxW, got {s}")));
    }
    let mut data = Vec::with_capacity(s.len());
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                data.push(quantize(t.get(0, c, y, x) as f64 + means[c]));
            }
        }
    }
    ImageBuffer::new(s.w, s.h, 3, data)
}

/// `round(v · 255)` with halves rounded up, clamped to `[0, 255]`.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Image `n` of an `N×1×H×W` map as a gray buffer.
pub fn saliency_to_image(map: &Tensor, n: usize) -> Result<ImageBuffer> {
    let s = map.shape();
    if s.c != 1 || n >= s.n {
        return Err(Error::dim("c", format!("expected a one-channel map with index {n}, got {s}")));
    }
    let data = map.plane(n, 0).iter().map(|&v| quantize(v as f64)).collect();
    ImageBuffer::new(s.w, s.h, 1, data)
}

/// `1×1×H×W` tensor of `byte / 255`; colour masks use the channel mean.
/// With `binarize`, values above one half become 1 and the rest 0.
pub fn mask_tensor(img: &ImageBuffer, binarize: bool) -> Tensor {
    Tensor::from_fn([1, 1, img.height, img.width], |_, _, y, x| {
        let sum: u32 = (0..img.channels).map(|c| img.get(x, y, c) as u32).sum();
        let v = sum as f64 / (255.0 * img.channels as f64);
        if binarize {
            if v > 0.5 {
                1.0
            } else {
                0.0
            }
        } else {
            v as f32
        }
    })
}

/// Resamples to `height × width`. Bilinear for images, nearest for masks.
pub fn resize(img: &ImageBuffer, height: usize, width: usize, kind: Interpolation) -> Result<ImageBuffer> {
    if height == 0 || width == 0 {
        return Err(Error::dim("hw", format!("resize target {width}x{height}")));
    }
    if (height, width) == (img.height, img.width) {
        return Ok(img.clone());
    }
    let sy = img.height as f64 / height as f64;
    let sx = img.width as f64 / width as f64;
    let mut data = Vec::with_capacity(width * height * img.channels);
    match kind {
        Interpolation::Nearest => {
            for y in 0..height {
                let iy = (((y as f64 + 0.5) * sy) as usize).min(img.height - 1);
                for x in 0..width {
                    let ix = (((x as f64 + 0.5) * sx) as usize).min(img.width - 1);
                    for c in 0..img.channels {
                        data.push(img.get(ix, iy, c));
                    }
                }
            }
        }
        Interpolation::Bilinear => {
            let coord = |d: usize, scale: f64, len: usize| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let i0 = s.floor() as usize;
                (i0, (i0 + 1).min(len - 1), s - i0 as f64)
            };
            for y in 0..height {
                let (y0, y1, fy) = coord(y, sy, img.height);
                for x in 0..width {
                    let (x0, x1, fx) = coord(x, sx, img.width);
                    for c in 0..img.channels {
                        let top = img.get(x0, y0, c) as f64 * (1.0 - fx) + img.get(x1, y0, c) as f64 * fx;
                        let bot = img.get(x0, y1, c) as f64 * (1.0 - fx) + img.get(x1, y1, c) as f64 * fx;
                        data.push(quantize((top * (1.0 - fy) + bot * fy) / 255.0));
                    }
                }
            }
        }
    }
    ImageBuffer::new(width, height, img.channels, data)
}
