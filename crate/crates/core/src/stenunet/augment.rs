use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelError;
use crate::specio::{BinaryMask, ImageGray};

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub p_scale: f64,
    pub p_rotate: f64,
    pub scale_range: (f64, f64),
    /// Degrees.
    pub rotation_range: (f64, f64),
    pub p_noise: f64,
    pub noise_variance_range: (f64, f64),
    pub p_blur: f64,
    pub blur_sigma_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_scale: 0.5,
            p_rotate: 0.5,
            scale_range: (0.7, 1.4),
            rotation_range: (-180.0, 180.0),
            p_noise: 0.15,
            noise_variance_range: (0.0, 0.1),
            p_blur: 0.15,
            blur_sigma_range: (0.5, 1.0),
        }
    }
}

/// Blur kernel side length.
pub const BLUR_KERNEL: usize = 3;

impl AugmentConfig {
    /// Every coin forced to tails.
    pub fn disabled() -> Self {
        Self {
            p_scale: 0.0,
            p_rotate: 0.0,
            p_noise: 0.0,
            p_blur: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, p) in [
            ("p_scale", self.p_scale),
            ("p_rotate", self.p_rotate),
            ("p_noise", self.p_noise),
            ("p_blur", self.p_blur),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ModelError::Config(format!("augment.{name} must be in [0, 1], got {p}")));
            }
        }
        for (name, (lo, hi)) in [
            ("scale_range", self.scale_range),
            ("rotation_range", self.rotation_range),
            ("noise_variance_range", self.noise_variance_range),
            ("blur_sigma_range", self.blur_sigma_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(ModelError::Config(format!("augment.{name} ({lo}, {hi}) is not well ordered")));
            }
        }
        if self.scale_range.0 <= 0.0 || self.noise_variance_range.0 < 0.0 || self.blur_sigma_range.0 <= 0.0 {
            return Err(ModelError::Config("augment scale, variance and sigma must be positive".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Random scale, rotation, noise and blur.
///
/// Eight values are drawn up front in a fixed order (scale coin, scale
/// factor, rotate coin, angle, noise coin, variance, blur coin, sigma), all of
/// them regardless of how the coins land, so the stream position after a
/// call does not depend on the outcome. Per-pixel noise draws follow.
///
/// Scale and rotation are combined into one affine map about the image
/// center. The image is resampled bilinearly and the mask by nearest
/// neighbour, both with edge replication. The image is clamped to `[0, 1]`.
pub fn augment(
    image: &ImageGray,
    mask: &BinaryMask,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<(ImageGray, BinaryMask), ModelError> {
    let (h, w) = (image.height(), image.width());
    if mask.height() != h || mask.width() != w {
        return Err(ModelError::Config(format!(
            "augment: image {h}x{w} vs mask {}x{}",
            mask.height(),
            mask.width()
        )));
    }
    let scale_on = rng.random::<f64>() < cfg.p_scale;
    let scale = uniform(rng, cfg.scale_range);
    let rotate_on = rng.random::<f64>() < cfg.p_rotate;
    let angle = uniform(rng, cfg.rotation_range);
    let noise_on = rng.random::<f64>() < cfg.p_noise;
    let variance = uniform(rng, cfg.noise_variance_range);
    let blur_on = rng.random::<f64>() < cfg.p_blur;
    let sigma = uniform(rng, cfg.blur_sigma_range);

    let (mut img, out_mask) = if scale_on || rotate_on {
        let s = if scale_on { scale } else { 1.0 };
        let theta = if rotate_on { angle.to_radians() } else { 0.0 };
        warp(image, mask, s, theta)
    } else {
        (image.data().to_vec(), mask.clone())
    };
    if noise_on && variance > 0.0 {
        let normal = Normal::new(0.0, variance.sqrt()).expect("finite positive std");
        for v in img.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    if blur_on {
        img = gaussian_blur3(&img, h, w, sigma);
    }
    let image = ImageGray::from_clamped(h, w, img).map_err(|e| ModelError::Config(e.to_string()))?;
    Ok((image, out_mask))
}

/// Inverse-maps every output pixel: `src = R(-theta) (dst - c) / s + c`.
fn warp(image: &ImageGray, mask: &BinaryMask, s: f64, theta: f64) -> (Vec<f64>, BinaryMask) {
    let (h, w) = (image.height(), image.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = theta.sin_cos();
    let src = image.data();
    let mut out = vec![0.0; h * w];
    let mut m = BinaryMask::zeros(h, w).expect("image dims already validated");
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for r in 0..h {
        for c in 0..w {
            let (dy, dx) = (r as f64 - cy, c as f64 - cx);
            let sx = (cos * dx + sin * dy) / s + cx;
            let sy = (-sin * dx + cos * dy) / s + cy;

            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let at = |y: isize, x: isize| src[clamp(y, h) * w + clamp(x, w)];
            out[r * w + c] = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));

            let (ny, nx) = (clamp(sy.round() as isize, h), clamp(sx.round() as isize, w));
            m.set(r, c, mask.get(ny, nx));
        }
    }
    (out, m)
}

fn gaussian_blur3(img: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k1 = (-1.0 / (2.0 * sigma * sigma)).exp();
    let norm = 1.0 + 2.0 * k1;
    let taps = [k1 / norm, 1.0 / norm, k1 / norm];
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    // separable: rows, then columns
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = (0..3)
                .map(|k| taps[k] * img[r * w + clamp(c as isize + k as isize - 1, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = (0..3)
                .map(|k| taps[k] * tmp[clamp(r as isize + k as isize - 1, h) * w + c])
                .sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn asym() -> (ImageGray, BinaryMask) {
        (
            ImageGray::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            BinaryMask::new(2, 2, vec![1, 0, 0, 0]).unwrap(),
        )
    }

    #[test]
    fn disabled_is_identity() {
        let (img, m) = asym();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let (i2, m2) = augment(&img, &m, &AugmentConfig::disabled(), &mut rng).unwrap();
            assert_eq!(i2, img);
            assert_eq!(m2, m);
        }
    }

    #[test]
    fn half_turn_flips_both_axes() {
        let (img, m) = asym();
        let cfg = AugmentConfig {
            p_rotate: 1.0,
            rotation_range: (180.0, 180.0),
            ..AugmentConfig::disabled()
        };
        let (i2, m2) = augment(&img, &m, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (a, b) in i2.data().iter().zip([0.4, 0.3, 0.2, 0.1]) {
            assert!((a - b).abs() < 1e-12, "{:?}", i2.data());
        }
        assert_eq!(m2.data(), &[0, 0, 0, 1]);
    }

    #[test]
    fn unit_scale_is_identity() {
        let (img, m) = asym();
        let cfg = AugmentConfig {
            p_scale: 1.0,
            scale_range: (1.0, 1.0),
            ..AugmentConfig::disabled()
        };
        let (i2, m2) = augment(&img, &m, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(i2, img);
        assert_eq!(m2, m);
    }

    #[test]
    fn blur_preserves_constant() {
        let out = gaussian_blur3(&[0.3; 12], 3, 4, 0.7);
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn rejects_bad_ranges() {
        let cfg = AugmentConfig {
            scale_range: (1.4, 0.7),
            ..AugmentConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(AugmentConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn mask_stays_binary(seed in any::<u64>(), bits in proptest::collection::vec(0u8..2, 64)) {
            let img = ImageGray::new(8, 8, bits.iter().map(|&b| b as f64 * 0.8).collect()).unwrap();
            let m = BinaryMask::new(8, 8, bits).unwrap();
            let cfg = AugmentConfig { p_scale: 1.0, p_rotate: 1.0, p_noise: 1.0, p_blur: 1.0, ..AugmentConfig::default() };
            let (i2, m2) = augment(&img, &m, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert!(m2.data().iter().all(|&v| v <= 1));
            prop_assert!(i2.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
