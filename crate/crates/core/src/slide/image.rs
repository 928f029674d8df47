//! Owned 8-bit RGB raster and the pixel operations used by tiling and view
//! augmentation.

use serde::{Deserialize, Serialize};

use super::SlideError;

/// Interleaved RGB8 image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, SlideError> {
        if width == 0 || height == 0 {
            return Err(SlideError::EmptyImage);
        }
        let want = width as usize * height as usize * 3;
        if data.len() != want {
            return Err(SlideError::PixelBufferLength { want, got: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, SlideError> {
        let data = rgb.repeat(width as usize * height as usize);
        Self::new(width, height, data)
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> [u8; 3]) -> Result<Self, SlideError> {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Copy of the `w x h` region at `(x, y)`; the region must lie inside.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<Self, SlideError> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(SlideError::RegionOutOfBounds { x, y, w, h });
        }
        let mut data = Vec::with_capacity(w as usize * h as usize * 3);
        for row in y..y + h {
            let start = (row as usize * self.width as usize + x as usize) * 3;
            data.extend_from_slice(&self.data[start..start + w as usize * 3]);
        }
        Self::new(w, h, data)
    }

    pub fn hflip(&self) -> Self {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut data = vec![0u8; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let (s, d) = ((y * w + x) * 3, (y * w + (w - 1 - x)) * 3);
                data[d..d + 3].copy_from_slice(&self.data[s..s + 3]);
            }
        }
        Self { width: self.width, height: self.height, data }
    }

    /// Bilinear resize with half-pixel centers and edge clamping.
    pub fn resize_bilinear(&self, out_w: u32, out_h: u32) -> Result<Self, SlideError> {
        if out_w == 0 || out_h == 0 {
            return Err(SlideError::EmptyImage);
        }
        if out_w == self.width && out_h == self.height {
            return Ok(self.clone());
        }
        let (sw, sh) = (self.width as usize, self.height as usize);
        let taps = |out: u32, src: usize| -> Vec<(usize, usize, f64)> {
            let scale = src as f64 / out as f64;
            (0..out)
                .map(|o| {
                    let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                    let i0 = s.floor() as usize;
                    let i1 = (i0 + 1).min(src - 1);
                    (i0, i1, s - i0 as f64)
                })
                .collect()
        };
        let xs = taps(out_w, sw);
        let ys = taps(out_h, sh);
        let mut data = Vec::with_capacity(out_w as usize * out_h as usize * 3);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                for c in 0..3 {
                    let p = |x: usize, y: usize| self.data[(y * sw + x) * 3 + c] as f64;
                    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                    let bot = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                    data.push(to_u8(top * (1.0 - fy) + bot * fy));
                }
            }
        }
        Self::new(out_w, out_h, data)
    }

    /// Separable Gaussian blur, kernel radius `ceil(3 sigma)`, edges clamped.
    pub fn gaussian_blur(&self, sigma: f64) -> Self {
        let radius = (3.0 * sigma).ceil().max(1.0) as i64;
        let kernel: Vec<f64> = {
            let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
            let s: f64 = k.iter().sum();
            k.into_iter().map(|v| v / s).collect()
        };
        let (w, h) = (self.width as i64, self.height as i64);
        let src: Vec<f64> = self.data.iter().map(|&v| v as f64).collect();
        let mut tmp = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for (k, wgt) in kernel.iter().enumerate() {
                        let sx = (x + k as i64 - radius).clamp(0, w - 1);
                        acc += wgt * src[((y * w + sx) * 3 + c) as usize];
                    }
                    tmp[((y * w + x) * 3 + c) as usize] = acc;
                }
            }
        }
        let mut data = vec![0u8; src.len()];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for (k, wgt) in kernel.iter().enumerate() {
                        let sy = (y + k as i64 - radius).clamp(0, h - 1);
                        acc += wgt * tmp[((sy * w + x) * 3 + c) as usize];
                    }
                    data[((y * w + x) * 3 + c) as usize] = to_u8(acc);
                }
            }
        }
        Self { width: self.width, height: self.height, data }
    }

    /// Luma (0.299, 0.587, 0.114) replicated into all three channels.
    pub fn grayscale(&self) -> Self {
        let mut data = self.data.clone();
        for px in data.chunks_exact_mut(3) {
            let l = to_u8(luma(px[0], px[1], px[2]));
            px.fill(l);
        }
        Self { width: self.width, height: self.height, data }
    }

    /// Brightness, contrast and saturation factors applied in that order.
    pub fn color_jitter(&self, brightness: f64, contrast: f64, saturation: f64) -> Self {
        let mut px: Vec<f64> = self.data.iter().map(|&v| v as f64 * brightness).collect();
        px.iter_mut().for_each(|v| *v = v.clamp(0.0, 255.0));
        let mean_luma =
            px.chunks_exact(3).map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).sum::<f64>() / (px.len() / 3) as f64;
        px.iter_mut().for_each(|v| *v = (mean_luma + contrast * (*v - mean_luma)).clamp(0.0, 255.0));
        for p in px.chunks_exact_mut(3) {
            let l = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
            for v in p.iter_mut() {
                *v = (l + saturation * (*v - l)).clamp(0.0, 255.0);
            }
        }
        let data = px.into_iter().map(to_u8).collect();
        Self { width: self.width, height: self.height, data }
    }

    /// 2x2 box mean per channel, rounded half up. Both dimensions must be even.
    pub fn downsample_2x(&self) -> Result<Self, SlideError> {
        if !self.width.is_multiple_of(2) || !self.height.is_multiple_of(2) {
            return Err(SlideError::OddDimensions { width: self.width, height: self.height });
        }
        let (w, ow, oh) = (self.width as usize, self.width / 2, self.height / 2);
        let mut data = Vec::with_capacity(ow as usize * oh as usize * 3);
        for y in 0..oh as usize {
            for x in 0..ow as usize {
                for c in 0..3 {
                    let p = |xx: usize, yy: usize| self.data[(yy * w + xx) * 3 + c] as u32;
                    let s = p(2 * x, 2 * y) + p(2 * x + 1, 2 * y) + p(2 * x, 2 * y + 1) + p(2 * x + 1, 2 * y + 1);
                    data.push(((s + 2) / 4) as u8);
                }
            }
        }
        Self::new(ow, oh, data)
    }
}

pub(crate) fn luma(r: u8, g: u8, b: u8) -> f64 {
    0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| [(x * 7 % 256) as u8, (y * 13 % 256) as u8, ((x + y) % 256) as u8]).unwrap()
    }

    #[test]
    fn checkerboard_downsamples_to_128() {
        let img = RgbImage::from_fn(4, 4, |x, y| if (x + y) % 2 == 0 { [0; 3] } else { [255; 3] }).unwrap();
        let d = img.downsample_2x().unwrap();
        assert_eq!((d.width(), d.height()), (2, 2));
        assert!(d.data().iter().all(|&v| v == 128));
    }

    #[test]
    fn downsample_rejects_odd_dimensions() {
        assert!(matches!(gradient(5, 4).downsample_2x(), Err(SlideError::OddDimensions { .. })));
    }

    #[test]
    fn identity_resize_is_exact_copy() {
        let img = gradient(17, 9);
        assert_eq!(img.resize_bilinear(17, 9).unwrap(), img);
    }

    #[test]
    fn resize_preserves_constant_images() {
        let img = RgbImage::filled(40, 30, [12, 200, 77]).unwrap();
        let r = img.resize_bilinear(13, 55).unwrap();
        assert!(r.data().chunks(3).all(|p| p == [12, 200, 77]));
    }

    #[test]
    fn integer_upsample_uses_half_pixel_centers() {
        // 2 -> 4 along x: sample positions -0.25, 0.25, 0.75, 1.25 clamp to 0, .25, .75, 1.
        let img = RgbImage::new(2, 1, vec![0, 0, 0, 200, 200, 200]).unwrap();
        let r = img.resize_bilinear(4, 1).unwrap();
        let row: Vec<u8> = r.data().chunks(3).map(|p| p[0]).collect();
        assert_eq!(row, vec![0, 50, 150, 200]);
    }

    #[test]
    fn grayscale_equalizes_channels() {
        let g = gradient(8, 8).grayscale();
        assert!(g.data().chunks(3).all(|p| p[0] == p[1] && p[1] == p[2]));
    }

    #[test]
    fn neutral_jitter_is_identity() {
        let img = gradient(9, 7);
        assert_eq!(img.color_jitter(1.0, 1.0, 1.0), img);
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = RgbImage::filled(10, 10, [90, 10, 250]).unwrap();
        assert_eq!(img.gaussian_blur(1.3), img);
    }

    #[test]
    fn crop_outside_is_rejected() {
        assert!(gradient(10, 10).crop(5, 5, 6, 2).is_err());
        assert_eq!(gradient(10, 10).crop(2, 3, 4, 5).unwrap().pixel(0, 0), gradient(10, 10).pixel(2, 3));
    }

    proptest! {
        #[test]
        fn hflip_is_an_involution(w in 1u32..20, h in 1u32..20, seed in any::<u64>()) {
            let img = RgbImage::from_fn(w, h, |x, y| {
                let v = seed.wrapping_mul(x as u64 * 31 + y as u64 * 17 + 1);
                [(v >> 8) as u8, (v >> 16) as u8, (v >> 24) as u8]
            }).unwrap();
            prop_assert_eq!(img.hflip().hflip(), img);
        }
    }
}
