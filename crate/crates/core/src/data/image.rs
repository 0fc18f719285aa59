//! 8-bit images and the resampling/augmentation transforms applied to them.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Row-major, channel-fastest 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

#[inline]
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 || data.len() != width * height * channels {
            return Err(Error::Input(format!(
                "{width}×{height}×{channels} image cannot hold {} bytes",
                data.len()
            )));
        }
        Ok(Image { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Image { width, height, channels, data: vec![value; width * height * channels] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Replicates a single channel to RGB; RGB images are returned as is.
    pub fn to_rgb(&self) -> Result<Image> {
        match self.channels {
            3 => Ok(self.clone()),
            1 => Ok(Image {
                width: self.width,
                height: self.height,
                channels: 3,
                data: self.data.iter().flat_map(|&v| [v, v, v]).collect(),
            }),
            c => Err(Error::Input(format!("cannot convert {c}-channel image to RGB"))),
        }
    }

    /// Bilinear sample at continuous pixel coordinates, replicating edges.
    fn sample(&self, x: f64, y: f64, c: usize) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let p = |xx, yy| self.get(xx, yy, c) as f64;
        let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
        let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Bilinear resize with pixel centres at `(i + 0.5) / N` (corners not aligned).
pub fn resize_bilinear(img: &Image, width: usize, height: usize) -> Result<Image> {
    if width == 0 || height == 0 {
        return Err(Error::Config(format!("resize target {width}×{height} must be positive")));
    }
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let mut data = Vec::with_capacity(width * height * img.channels);
    for y in 0..height {
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..width {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            for c in 0..img.channels {
                data.push(to_u8(img.sample(src_x, src_y, c)));
            }
        }
    }
    Ok(Image { width, height, channels: img.channels, data })
}

/// Rotates counter-clockwise (as displayed) by `angle_deg` about the image
/// centre; bilinear resampling, out-of-frame samples replicate the border.
pub fn rotate(img: &Image, angle_deg: f64) -> Image {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(img.data.len());
    for y in 0..img.height {
        let dy = y as f64 - cy;
        for x in 0..img.width {
            let dx = x as f64 - cx;
            let src_x = cx + dx * c - dy * s;
            let src_y = cy + dx * s + dy * c;
            for ch in 0..img.channels {
                data.push(to_u8(img.sample(src_x, src_y, ch)));
            }
        }
    }
    Image { data, ..img.clone() }
}

/// Per channel, stretches `[min, max]` linearly onto `[0, 255]`. Constant
/// channels are left unchanged.
pub fn autocontrast(img: &Image) -> Image {
    let mut out = img.clone();
    for c in 0..img.channels {
        let values = img.data.iter().skip(c).step_by(img.channels);
        let (lo, hi) = values.fold((u8::MAX, u8::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if hi <= lo {
            continue;
        }
        let range = (hi - lo) as f64;
        for v in out.data.iter_mut().skip(c).step_by(img.channels) {
            *v = to_u8((*v - lo) as f64 * 255.0 / range);
        }
    }
    out
}

/// Maps pixels to `(p/255 − 0.5) / 0.5 ∈ [−1, 1]` as an `[H, W, C]` tensor.
pub fn normalize<T: Real>(img: &Image) -> Tensor<T> {
    Tensor::new(
        &[img.height, img.width, img.channels],
        img.data.iter().map(|&p| T::lit((p as f64 / 255.0 - 0.5) / 0.5)).collect(),
    )
    .expect("image dims are consistent")
}

/// Inverse of [`normalize`], returning `p / 255`.
pub fn denormalize<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.to_f64_lossless() * 0.5 + 0.5).collect()
}
