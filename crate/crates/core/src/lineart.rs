//! Line-art extraction with the extended difference-of-Gaussians operator,
//! plus the brightness augmentation used to mimic faint hand-drawn sketches.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ColorImage, GrayImage};

/// Rec. 601 luma weights.
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

pub fn grayscale(img: &ColorImage) -> GrayImage {
    let p = img.plane_len();
    let data = (0..p)
        .map(|i| {
            let v = LUMA[0] * img.data[i] + LUMA[1] * img.data[p + i] + LUMA[2] * img.data[2 * p + i];
            v.clamp(0.0, 1.0)
        })
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        data,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XdogParams {
    /// Blur radius of the narrow Gaussian, in pixels.
    pub sigma: f32,
    /// Ratio of the wide to the narrow Gaussian.
    pub k: f32,
    /// Weight of the wide Gaussian.
    pub tau: f32,
    /// Threshold on the DoG response.
    pub eps: f32,
    /// Sharpness of the soft threshold.
    pub phi: f32,
}

impl XdogParams {
    /// Smallest narrow-blur radius used by the size-scaled preset. Below
    /// roughly 0.5 px the discrete kernel collapses to a delta and the
    /// operator stops responding to edges.
    pub const MIN_SPRITE_SIGMA: f32 = 0.8;

    /// The `sprite-default` preset for a given image size.
    pub fn sprite_default(size: usize) -> Self {
        Self {
            sigma: (0.8 * size as f32 / 256.0).max(Self::MIN_SPRITE_SIGMA),
            k: 1.6,
            tau: 0.98,
            eps: 0.01,
            phi: 150.0,
        }
    }

    pub fn preset(name: &str, size: usize) -> Result<Self> {
        match name {
            "sprite-default" => Ok(Self::sprite_default(size)),
            other => Err(Error::InvalidParam(format!("unknown XDoG preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.sigma, self.k, self.tau, self.eps, self.phi]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.sigma <= 0.0 || self.k <= 1.0 || self.phi <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "XDoG parameters need sigma>0, k>1, phi>0: {self:?}"
            )));
        }
        Ok(())
    }

    /// Per-sample style jitter: sigma scaled by U(0.9, 1.1) and the DoG
    /// residual weight `1 - tau` scaled by U(0.9, 1.1).
    pub fn jittered<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        let s = rng.random_range(0.9f32..1.1);
        let t = rng.random_range(0.9f32..1.1);
        Self {
            sigma: self.sigma * s,
            tau: 1.0 - (1.0 - self.tau) * t,
            ..*self
        }
    }
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Mirror an out-of-range index back into `0..n` without repeating the edge
/// sample (`-1 -> 1`, `n -> n-2`).
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Separable Gaussian blur with reflect padding; accumulates in f64.
pub fn gaussian_blur(img: &GrayImage, sigma: f32) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma as f64);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (img.width, img.height);
    let mut tmp = vec![0f64; w * h];
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * row[reflect_index(x as isize + j as isize - r, w)] as f64)
                .sum();
        }
    }
    let mut out = vec![0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[reflect_index(y as isize + j as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

pub fn xdog(gray: &GrayImage, params: &XdogParams) -> Result<GrayImage> {
    params.validate()?;
    let narrow = gaussian_blur(gray, params.sigma);
    let wide = gaussian_blur(gray, params.sigma * params.k);
    let (tau, eps, phi) = (params.tau as f64, params.eps as f64, params.phi as f64);
    let data = narrow
        .iter()
        .zip(&wide)
        .map(|(&a, &b)| xdog_response(a - tau * b, eps, phi) as f32)
        .collect();
    Ok(GrayImage {
        width: gray.width,
        height: gray.height,
        data,
    })
}

#[inline]
pub(crate) fn xdog_response(d: f64, eps: f64, phi: f64) -> f64 {
    let v = if d >= eps {
        1.0
    } else {
        1.0 + (phi * (d - eps)).tanh()
    };
    v.clamp(0.0, 1.0)
}

/// Grayscale then XDoG.
pub fn extract(img: &ColorImage, params: &XdogParams) -> Result<GrayImage> {
    xdog(&grayscale(img), params)
}

/// Lighten a line art: `v -> min(1, v * factor)`.
pub fn brightness_scale(line_art: &GrayImage, factor: f32) -> Result<GrayImage> {
    if !(factor >= 1.0) || !factor.is_finite() {
        return Err(Error::InvalidParam(format!(
            "brightness factor must be >= 1, got {factor}"
        )));
    }
    Ok(GrayImage {
        width: line_art.width,
        height: line_art.height,
        data: line_art.data.iter().map(|v| (v * factor).min(1.0)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct 2-D convolution with the outer-product kernel, reflect padding.
    fn blur_oracle(img: &GrayImage, sigma: f64) -> Vec<f64> {
        let r = (3.0 * sigma).ceil().max(1.0) as isize;
        let mut weights = vec![];
        let mut total = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let w = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                weights.push((dx, dy, w));
                total += w;
            }
        }
        let mut out = vec![0.0; img.width * img.height];
        for y in 0..img.height {
            for x in 0..img.width {
                let mut acc = 0.0;
                for &(dx, dy, w) in &weights {
                    let sx = reflect_index(x as isize + dx, img.width);
                    let sy = reflect_index(y as isize + dy, img.height);
                    acc += w * img.get(sx, sy) as f64;
                }
                out[y * img.width + x] = acc / total;
            }
        }
        out
    }

    fn random_gray(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::new(w, h, (0..w * h).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn grayscale_weights() {
        assert_eq!(grayscale(&ColorImage::filled(1, 1, [1.0; 3])).data[0], 1.0);
        assert!((grayscale(&ColorImage::filled(1, 1, [1.0, 0.0, 0.0])).data[0] - 0.299).abs() < 1e-7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = ColorImage::new(5, 4, (0..60).map(|_| rng.random::<f32>()).collect()).unwrap();
        let g = grayscale(&img);
        for y in 0..4 {
            for x in 0..5 {
                let [r, gg, b] = img.get(x, y);
                let expect = 0.299 * r as f64 + 0.587 * gg as f64 + 0.114 * b as f64;
                assert!((g.get(x, y) as f64 - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-4..9).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1, 2]);
        assert_eq!(reflect_index(-7, 1), 0);
    }

    #[test]
    fn blur_matches_direct_convolution() {
        for (seed, sigma) in [(1u64, 0.8f32), (2, 1.7), (3, 3.1)] {
            let img = random_gray(16, 16, seed);
            let fast = gaussian_blur(&img, sigma);
            let slow = blur_oracle(&img, sigma as f64);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-6, "sigma {sigma}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn xdog_step_edge_matches_oracle() {
        let mut img = GrayImage::filled(8, 8, 1.0);
        for y in 0..8 {
            for x in 0..4 {
                img.set(x, y, 0.2);
            }
        }
        let p = XdogParams::sprite_default(256);
        let out = xdog(&img, &p).unwrap();
        let a = blur_oracle(&img, p.sigma as f64);
        let b = blur_oracle(&img, (p.sigma * p.k) as f64);
        for i in 0..64 {
            let d = a[i] - p.tau as f64 * b[i];
            let expect = xdog_response(d, p.eps as f64, p.phi as f64);
            assert!((out.data[i] as f64 - expect).abs() < 1e-6);
        }
        // the dark side of the edge is traced
        assert!(out.get(3, 4) < 0.5);
        assert_eq!(out.get(7, 4), 1.0);
    }

    #[test]
    fn xdog_constant_images() {
        let white = GrayImage::filled(10, 10, 1.0);
        let p = XdogParams {
            tau: 0.99,
            eps: 0.005,
            ..XdogParams::sprite_default(64)
        };
        assert!(xdog(&white, &p).unwrap().data.iter().all(|&v| v == 1.0));

        let gray = GrayImage::filled(10, 10, 0.37);
        let p = XdogParams {
            tau: 1.0,
            ..XdogParams::sprite_default(64)
        };
        let expect = 1.0 + (-(p.phi * p.eps) as f64).tanh();
        for v in xdog(&gray, &p).unwrap().data {
            assert!((v as f64 - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn xdog_rejects_bad_params() {
        let img = GrayImage::filled(4, 4, 1.0);
        for p in [
            XdogParams { sigma: 0.0, ..XdogParams::sprite_default(64) },
            XdogParams { k: 1.0, ..XdogParams::sprite_default(64) },
            XdogParams { phi: -1.0, ..XdogParams::sprite_default(64) },
        ] {
            assert!(xdog(&img, &p).is_err());
        }
    }

    #[test]
    fn xdog_translation_equivariant_in_interior() {
        let mut img = GrayImage::filled(32, 32, 1.0);
        for y in 10..16 {
            for x in 9..14 {
                img.set(x, y, 0.3);
            }
        }
        let s = 3;
        let mut shifted = GrayImage::filled(32, 32, 1.0);
        for y in 0..32 - s {
            for x in 0..32 - s {
                shifted.set(x + s, y + s, img.get(x, y));
            }
        }
        let p = XdogParams::sprite_default(256);
        let a = xdog(&img, &p).unwrap();
        let b = xdog(&shifted, &p).unwrap();
        for y in 6..24 {
            for x in 6..24 {
                assert!((a.get(x, y) - b.get(x + s, y + s)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn brightness_examples() {
        let img = GrayImage::new(2, 1, vec![0.2, 1.0]).unwrap();
        let out = brightness_scale(&img, 3.0).unwrap();
        assert!((out.data[0] - 0.6).abs() < 1e-6);
        assert_eq!(out.data[1], 1.0);
        assert_eq!(brightness_scale(&img, 1.0).unwrap(), img);
        assert!(brightness_scale(&img, 0.5).is_err());
        assert!(brightness_scale(&img, f32::NAN).is_err());
    }

    #[test]
    fn jitter_keeps_white_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let base = XdogParams::sprite_default(64);
        for _ in 0..100 {
            let p = base.jittered(&mut rng);
            p.validate().unwrap();
            assert!((1.0 - p.tau) >= p.eps, "flat white must stay white: {p:?}");
        }
    }

    proptest! {
        #[test]
        fn xdog_output_in_unit_interval(
            seed in 0u64..1000,
            sigma in 0.3f32..3.0,
            k in 1.05f32..3.0,
            tau in 0.5f32..1.2,
            eps in -0.1f32..0.1,
            phi in 1.0f32..500.0,
        ) {
            let img = random_gray(9, 7, seed);
            let out = xdog(&img, &XdogParams { sigma, k, tau, eps, phi }).unwrap();
            prop_assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn brightness_monotone(seed in 0u64..1000, factor in 1.0f32..7.0) {
            let img = random_gray(6, 6, seed);
            let out = brightness_scale(&img, factor).unwrap();
            for (a, b) in img.data.iter().zip(&out.data) {
                prop_assert!(b >= a);
                prop_assert!(*b <= 1.0);
            }
        }
    }
}
