//! Homomorphic Butterworth enhancement and mean/variance normalisation.
//!
//! The enhancement works in the log-intensity domain: the image is clamped
//! away from zero, log-transformed, shaped in the Fourier domain by a
//! Butterworth gain, transformed back, exponentiated and min/max rescaled.
//! Normalisation then maps the per-image mean and variance onto the desired
//! `m0` / `var0`.

mod butterworth;
mod homomorphic;
mod normalize;
mod spectrum;

use thiserror::Error;

pub use butterworth::{butterworth_response, ButterworthParams, FilterMode};
pub use homomorphic::{apply_gain, homomorphic_enhance, homomorphic_log_domain, rescale_min_max, EPS_LOG};
pub use normalize::{normalize, normalize_field, NormalizationParams};
pub use spectrum::{dft2, idft2, idft2_real, Spectrum};

use crate::specio::ImageGray;

#[derive(Debug, Error, PartialEq)]
pub enum PrefilterError {
    #[error("Butterworth cutoff d0 must be positive, got {0}")]
    Cutoff(f64),
    #[error("Butterworth order must be at least 1, got {0}")]
    Order(u32),
    #[error("field of {len} values does not match {height}x{width}")]
    FieldSize { len: usize, height: usize, width: usize },
}

/// Full preprocessing configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct PreConfig {
    pub enabled: bool,
    pub filter: ButterworthParams,
    pub normalization: NormalizationParams,
    /// Exponentiate after the inverse transform; when false the log-domain
    /// result is rescaled directly.
    pub exponentiate: bool,
}

impl Default for PreConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            filter: ButterworthParams::default(),
            normalization: NormalizationParams::default(),
            exponentiate: true,
        }
    }
}

impl PreConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

/// Enhancement followed by normalisation; the identity when disabled.
pub fn preprocess(image: &ImageGray, config: &PreConfig) -> Result<ImageGray, PrefilterError> {
    if !config.enabled {
        return Ok(image.clone());
    }
    let enhanced = if config.exponentiate {
        homomorphic_enhance(image, &config.filter)?
    } else {
        homomorphic_log_domain(image, &config.filter)?
    };
    Ok(normalize(&enhanced, &config.normalization))
}
