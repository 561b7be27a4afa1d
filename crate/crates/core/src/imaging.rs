//! Plain image buffers and PNG I/O.
//!
//! Pixel values are `f32` in `[0, 1]`. Color images are stored planar
//! (R plane, then G, then B) so they map directly onto `C×H×W` tensors.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{GrayImage as PngGray, ImageBuffer, Luma, Rgb, Rgb32FImage, RgbImage as PngRgb};

use crate::error::{Error, Result};
use crate::tagspace::Region;

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "gray buffer of {} values for {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn to_png(&self) -> PngGray {
        ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([to_u8(self.get(x as usize, y as usize))])
        })
    }

    pub fn from_png(img: &PngGray) -> Self {
        let (w, h) = img.dimensions();
        Self {
            width: w as usize,
            height: h as usize,
            data: img.pixels().map(|p| p.0[0] as f32 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_png().save(path)?;
        Ok(())
    }

    /// Load any PNG, converting color inputs to luminance.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        Ok(Self::from_dynamic(&img))
    }

    /// Bilinear resize.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone()).expect("buffer size");
        let out = imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle);
        Self {
            width,
            height,
            data: out.into_raw(),
        }
    }

    /// Center on a square canvas of `fill`, side = the longer edge.
    pub fn letterboxed(&self, fill: f32) -> Self {
        let side = self.width.max(self.height);
        let (ox, oy) = ((side - self.width) / 2, (side - self.height) / 2);
        let mut out = Self::filled(side, side, fill);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(x + ox, y + oy, self.get(x, y));
            }
        }
        out
    }

    /// Letterbox onto white, then resize to `size`×`size`.
    pub fn fit_square(&self, size: usize) -> Self {
        self.letterboxed(1.0).resized(size, size)
    }

    /// Decode PNG (or any format `image` recognizes) from memory.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(Self::from_dynamic(&image::load_from_memory(bytes)?))
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Self {
        match img {
            image::DynamicImage::ImageLuma8(g) => Self::from_png(g),
            other => crate::lineart::grayscale(&ColorImage::from_png(&other.to_rgb8())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    /// Planar RGB, length `3 * width * height`.
    pub data: Vec<f32>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::shape(format!(
                "color buffer of {} values for {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let plane = width * height;
        let mut data = Vec::with_capacity(3 * plane);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, plane));
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = y * self.width + x;
        let p = self.plane_len();
        [self.data[i], self.data[p + i], self.data[2 * p + i]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = y * self.width + x;
        let p = self.plane_len();
        self.data[i] = rgb[0];
        self.data[p + i] = rgb[1];
        self.data[2 * p + i] = rgb[2];
    }

    pub fn to_png(&self) -> PngRgb {
        ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            let [r, g, b] = self.get(x as usize, y as usize);
            Rgb([to_u8(r), to_u8(g), to_u8(b)])
        })
    }

    pub fn from_png(img: &PngRgb) -> Self {
        let (w, h) = img.dimensions();
        let mut out = Self::filled(w as usize, h as usize, [0.0; 3]);
        for (x, y, p) in img.enumerate_pixels() {
            let [r, g, b] = p.0;
            out.set(
                x as usize,
                y as usize,
                [r as f32 / 255.0, g as f32 / 255.0, b as f32 / 255.0],
            );
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_png().save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        Ok(Self::from_png(&image::open(path)?.to_rgb8()))
    }

    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_png().write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    /// Bilinear resize.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let buf: Rgb32FImage = ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            Rgb(self.get(x as usize, y as usize))
        });
        let out = imageops::resize(&buf, width as u32, height as u32, FilterType::Triangle);
        let mut img = Self::filled(width, height, [0.0; 3]);
        for (x, y, p) in out.enumerate_pixels() {
            img.set(x as usize, y as usize, p.0);
        }
        img
    }

    /// Build from values in `[-1, 1]` (generator output convention).
    pub fn from_signed(width: usize, height: usize, data: &[f32]) -> Result<Self> {
        Self::new(
            width,
            height,
            data.iter().map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0)).collect(),
        )
    }
}

/// Per-pixel region labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Region>,
}

impl MaskImage {
    pub fn filled(width: usize, height: usize, region: Region) -> Self {
        Self {
            width,
            height,
            labels: vec![region; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Region {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, r: Region) {
        self.labels[y * self.width + x] = r;
    }

    pub fn count(&self, region: Region) -> usize {
        self.labels.iter().filter(|&&r| r == region).count()
    }

    /// Single-channel PNG whose pixel value is the region label.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img: PngGray = ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([self.get(x as usize, y as usize).label()])
        });
        img.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        let gray = img
            .as_luma8()
            .ok_or_else(|| Error::Other(format!("{}: mask must be 8-bit single channel", path.display())))?;
        let (w, h) = gray.dimensions();
        let labels = gray
            .pixels()
            .map(|p| {
                Region::from_label(p.0[0]).ok_or_else(|| {
                    Error::Other(format!("{}: invalid region label {}", path.display(), p.0[0]))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            width: w as usize,
            height: h as usize,
            labels,
        })
    }
}

#[inline]
fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn letterbox_centers_on_white() {
        let img = GrayImage::filled(4, 2, 0.0);
        let sq = img.letterboxed(1.0);
        assert_eq!((sq.width, sq.height), (4, 4));
        assert_eq!(sq.get(0, 0), 1.0);
        assert_eq!(sq.get(0, 1), 0.0);
        assert_eq!(sq.get(3, 2), 0.0);
        assert_eq!(sq.get(3, 3), 1.0);
        let fit = GrayImage::filled(10, 30, 0.0).fit_square(8);
        assert_eq!((fit.width, fit.height), (8, 8));
        assert!(fit.get(0, 4) > 0.9 && fit.get(4, 4) < 0.1);
    }

    #[test]
    fn resize_keeps_constants() {
        let c = ColorImage::filled(6, 6, [0.2, 0.4, 0.6]).resized(3, 5);
        assert_eq!((c.width, c.height), (3, 5));
        for v in c.get(1, 2).iter().zip([0.2, 0.4, 0.6]) {
            assert!((v.0 - v.1).abs() < 1e-6);
        }
        let g = GrayImage::filled(5, 5, 0.3).resized(9, 9);
        assert!(g.data.iter().all(|v| (v - 0.3).abs() < 1e-6));
    }
}
