//! Planar float images and the resampling primitives used to build network
//! inputs.
//!
//! Intensities are normalized to `[0, 1]` when decoded from 8-bit files.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Channel-major (`C×H×W`) float image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "image buffer of length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let (w, h) = (w as usize, h as usize);
        let mut out = Image::zeros(3, h, w);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out.data[(c * h + y as usize) * w + x as usize] = f32::from(px[c]) / 255.0;
            }
        }
        out
    }

    /// Quantizes to 8-bit RGB. Requires exactly three channels.
    pub fn to_rgb8(&self) -> Result<image::RgbImage> {
        if self.channels != 3 {
            return Err(Error::Shape(format!(
                "expected a 3-channel image, got {}",
                self.channels
            )));
        }
        let mut out = image::RgbImage::new(self.width as u32, self.height as u32);
        for (x, y, px) in out.enumerate_pixels_mut() {
            for c in 0..3 {
                let v = self.get(c, y as usize, x as usize).clamp(0.0, 1.0);
                px[c] = (v * 255.0).round() as u8;
            }
        }
        Ok(out)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()?.save(path)?;
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Integer crop of `[x0, x1) × [y0, y1)`; pixels outside the source are 0.
    pub fn crop_padded(&self, x0: i64, y0: i64, x1: i64, y1: i64) -> Result<Image> {
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::InvalidInput(format!(
                "empty crop [{x0}, {y0}, {x1}, {y1}]"
            )));
        }
        let (w, h) = ((x1 - x0) as usize, (y1 - y0) as usize);
        let mut out = Image::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for oy in 0..h {
                let sy = y0 + oy as i64;
                if sy < 0 || sy >= self.height as i64 {
                    continue;
                }
                for ox in 0..w {
                    let sx = x0 + ox as i64;
                    if sx < 0 || sx >= self.width as i64 {
                        continue;
                    }
                    out.set(c, oy, ox, self.get(c, sy as usize, sx as usize));
                }
            }
        }
        Ok(out)
    }

    /// Crop of a float box, snapped to the nearest pixel grid lines.
    pub fn crop_box(&self, b: &BoundingBox) -> Result<Image> {
        let x0 = b.x_min().round() as i64;
        let y0 = b.y_min().round() as i64;
        let x1 = (b.x_max().round() as i64).max(x0 + 1);
        let y1 = (b.y_max().round() as i64).max(y0 + 1);
        self.crop_padded(x0, y0, x1, y1)
    }

    /// Bilinear resize with half-pixel-centered sampling (edge-clamped).
    pub fn resize(&self, out_h: usize, out_w: usize) -> Result<Image> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidInput("resize to an empty image".into()));
        }
        if out_h == self.height && out_w == self.width {
            return Ok(self.clone());
        }
        let xs = axis_weights(self.width, out_w);
        let ys = axis_weights(self.height, out_h);
        let mut out = Image::zeros(self.channels, out_h, out_w);
        for c in 0..self.channels {
            let src = self.plane(c);
            for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                    let top = src[y0 * self.width + x0] * (1.0 - wx) + src[y0 * self.width + x1] * wx;
                    let bot = src[y1 * self.width + x0] * (1.0 - wx) + src[y1 * self.width + x1] * wx;
                    out.set(c, oy, ox, top * (1.0 - wy) + bot * wy);
                }
            }
        }
        Ok(out)
    }
}

fn axis_weights(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (pos - lo as f64) as f32)
        })
        .collect()
}

/// Single-channel class-index map (one `u8` class per pixel).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width || labels.is_empty() {
            return Err(Error::Shape(format!(
                "label buffer of length {} does not match {height}x{width}",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        Self::new(h as usize, w as usize, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.labels.clone())
            .ok_or_else(|| Error::Shape("label map buffer size".into()))?;
        img.save(path)?;
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Image {
        let data = (0..c * h * w).map(|i| i as f32).collect();
        Image::from_vec(c, h, w, data).unwrap()
    }

    #[test]
    fn halving_is_a_box_average() {
        let img = ramp(1, 4, 4);
        let small = img.resize(2, 2).unwrap();
        let expect = |y: usize, x: usize| {
            (img.get(0, 2 * y, 2 * x)
                + img.get(0, 2 * y, 2 * x + 1)
                + img.get(0, 2 * y + 1, 2 * x)
                + img.get(0, 2 * y + 1, 2 * x + 1))
                / 4.0
        };
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(small.get(0, y, x), expect(y, x));
            }
        }
    }

    #[test]
    fn crop_outside_is_zero() {
        let img = ramp(2, 3, 3);
        let crop = img.crop_padded(-1, -1, 2, 2).unwrap();
        assert_eq!(crop.get(0, 0, 0), 0.0);
        assert_eq!(crop.get(1, 0, 2), 0.0);
        assert_eq!(crop.get(1, 1, 1), img.get(1, 0, 0));
        assert_eq!(crop.get(0, 2, 2), img.get(0, 1, 1));
    }

    #[test]
    fn rgb_round_trip_is_exact_on_8bit_values() {
        let mut rgb = image::RgbImage::new(3, 2);
        for (i, px) in rgb.pixels_mut().enumerate() {
            *px = image::Rgb([i as u8 * 40, 255 - i as u8, 7]);
        }
        let back = Image::from_rgb8(&rgb).to_rgb8().unwrap();
        assert_eq!(back, rgb);
    }
}
