use super::{butterworth_response, dft2, idft2_real, ButterworthParams, PrefilterError};
use crate::specio::ImageGray;

/// Intensities are clamped to `[EPS_LOG, 1]` before the log transform.
pub const EPS_LOG: f64 = 1e-4;

/// Multiplies the spectrum of `field` by a centered `gain` and returns the
/// real part of the inverse transform.
pub fn apply_gain(
    field: &[f64],
    height: usize,
    width: usize,
    gain: &[f64],
) -> Result<Vec<f64>, PrefilterError> {
    if gain.len() != height * width {
        return Err(PrefilterError::FieldSize {
            len: gain.len(),
            height,
            width,
        });
    }
    let mut spectrum = dft2(field, height, width)?;
    for (c, g) in spectrum.data.iter_mut().zip(gain) {
        *c *= *g;
    }
    Ok(idft2_real(&spectrum))
}

fn filtered_log(image: &ImageGray, params: &ButterworthParams) -> Result<Vec<f64>, PrefilterError> {
    let (h, w) = (image.height(), image.width());
    let gain = butterworth_response(params, h, w)?;
    let log: Vec<f64> = image.data().iter().map(|&v| v.clamp(EPS_LOG, 1.0).ln()).collect();
    apply_gain(&log, h, w, &gain)
}

/// Butterworth filtering of `ln I`, exponentiated and rescaled to `[0, 1]`.
pub fn homomorphic_enhance(image: &ImageGray, params: &ButterworthParams) -> Result<ImageGray, PrefilterError> {
    let mut field = filtered_log(image, params)?;
    field.iter_mut().for_each(|v| *v = v.exp());
    Ok(rescale_min_max(image.height(), image.width(), field))
}

/// Same as [`homomorphic_enhance`] but rescales the log-domain result directly.
pub fn homomorphic_log_domain(image: &ImageGray, params: &ButterworthParams) -> Result<ImageGray, PrefilterError> {
    let field = filtered_log(image, params)?;
    Ok(rescale_min_max(image.height(), image.width(), field))
}

/// Affine map of `field` onto `[0, 1]`; a constant field maps to 0.5.
pub fn rescale_min_max(height: usize, width: usize, field: Vec<f64>) -> ImageGray {
    let (lo, hi) = field
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    // relative guard: FFT round-off on a constant field is ~1e-16 of its level
    let data = if span.is_nan() || span <= 1e-12 * lo.abs().max(hi.abs()).max(1e-300) {
        vec![0.5; field.len()]
    } else {
        field.into_iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
    };
    ImageGray::new(height, width, data).expect("rescaled field lies in [0, 1]")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prefilter::FilterMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_image(h: usize, w: usize, seed: u64, lo: f64) -> ImageGray {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGray::new(h, w, (0..h * w).map(|_| rng.random_range(lo..1.0)).collect()).unwrap()
    }

    #[test]
    fn near_unit_gain_reproduces_rescaled_input() {
        let img = random_image(16, 12, 7, 0.01);
        let params = ButterworthParams {
            d0: 1e6,
            order: 2,
            mode: FilterMode::Lowpass,
        };
        let out = homomorphic_enhance(&img, &params).unwrap();
        let expected = rescale_min_max(16, 12, img.data().to_vec());
        let err = out
            .data()
            .iter()
            .zip(expected.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn constant_input_gives_half() {
        let img = ImageGray::filled(8, 8, 0.4).unwrap();
        for mode in [FilterMode::Lowpass, FilterMode::Highpass] {
            let params = ButterworthParams { d0: 2.0, order: 1, mode };
            assert!(homomorphic_enhance(&img, &params).unwrap().data().iter().all(|&v| v == 0.5));
        }
    }

    /// Convolution theorem: spectral multiplication equals circular
    /// convolution with the inverse-transformed gain, both evaluated with
    /// direct double sums.
    #[test]
    fn spectral_product_matches_circular_convolution() {
        let (h, w) = (8usize, 8usize);
        let img = random_image(h, w, 11, 0.05);
        let params = ButterworthParams {
            d0: 2.5,
            order: 2,
            mode: FilterMode::Highpass,
        };
        let log: Vec<f64> = img.data().iter().map(|v| v.clamp(EPS_LOG, 1.0).ln()).collect();
        let produced = filtered_log(&img, &params).unwrap();

        // spatial kernel from the gain via a direct inverse DFT (unshifted indices)
        let gain = butterworth_response(&params, h, w).unwrap();
        let gain_at = |u: usize, v: usize| {
            let r = (u + h / 2) % h;
            let c = (v + w / 2) % w;
            gain[r * w + c]
        };
        let mut kernel = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for u in 0..h {
                    for v in 0..w {
                        let phase = 2.0 * PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                        acc += gain_at(u, v) * phase.cos();
                    }
                }
                kernel[y * w + x] = acc / (h * w) as f64;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for yy in 0..h {
                    for xx in 0..w {
                        acc += log[yy * w + xx] * kernel[((y + h - yy) % h) * w + (x + w - xx) % w];
                    }
                }
                assert!((acc - produced[y * w + x]).abs() < 1e-5);
            }
        }
    }
}
