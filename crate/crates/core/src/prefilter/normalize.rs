use crate::specio::ImageGray;

/// Target statistics on the `[0, 1]` intensity scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationParams {
    pub m0: f64,
    pub var0: f64,
    pub var_floor: f64,
}

impl Default for NormalizationParams {
    fn default() -> Self {
        Self {
            m0: 0.5,
            var0: 0.04,
            var_floor: 1e-10,
        }
    }
}

/// Mean/variance normalisation without the final clamp.
///
/// Pixels above the image mean map to `m0 + sqrt(var0 (I - M)^2 / VAR)`, the
/// rest to `m0 - sqrt(...)`. Images with variance below `var_floor` map to `m0`.
pub fn normalize_field(data: &[f64], params: &NormalizationParams) -> Vec<f64> {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var.is_nan() || var < params.var_floor {
        return vec![params.m0; data.len()];
    }
    data.iter()
        .map(|&v| {
            let dev = (params.var0 * (v - mean) * (v - mean) / var).sqrt();
            if v > mean {
                params.m0 + dev
            } else {
                params.m0 - dev
            }
        })
        .collect()
}

pub fn normalize(image: &ImageGray, params: &NormalizationParams) -> ImageGray {
    let field = normalize_field(image.data(), params);
    ImageGray::from_clamped(image.height(), image.width(), field).expect("dimensions already validated")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_at_mean_maps_to_m0() {
        let img = ImageGray::new(1, 3, vec![0.2, 0.5, 0.8]).unwrap();
        let out = normalize(&img, &NormalizationParams::default());
        assert!((out.data()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn direct_substitution() {
        // M = 0.5, VAR = 0.04
        let img = ImageGray::new(1, 2, vec![0.3, 0.7]).unwrap();
        let p = NormalizationParams {
            m0: 0.5,
            var0: 0.01,
            var_floor: 1e-10,
        };
        let out = normalize(&img, &p);
        assert!((out.data()[1] - 0.6).abs() < 1e-12);
        assert!((out.data()[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn constant_image_hits_floor() {
        let img = ImageGray::filled(3, 3, 0.9).unwrap();
        let out = normalize(&img, &NormalizationParams::default());
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn output_is_clamped() {
        let mut data = vec![0.0; 99];
        data.push(1.0);
        let img = ImageGray::new(10, 10, data).unwrap();
        let out = normalize(&img, &NormalizationParams::default());
        assert_eq!(out.data()[99], 1.0);
    }
}
