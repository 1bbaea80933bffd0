//! Thresholding, connected-component labeling and small-segment removal.

mod components;

use thiserror::Error;

pub use components::{label_components, BoundingBox, Component, Connectivity, Instance, InstanceSet, Labeling};

use crate::specio::{BinaryMask, ImageGray};

/// Side length at which `min_area` is specified.
pub const REFERENCE_SIDE: usize = 512;

#[derive(Debug, Error, PartialEq)]
pub enum PostError {
    #[error("post.threshold must be in (0, 1), got {0}")]
    Threshold(f64),
    #[error("post.min_area must be finite and non-negative, got {0}")]
    MinArea(f64),
    #[error("post.connectivity must be 4 or 8, got {0}")]
    Connectivity(u32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PostConfig {
    /// When false only thresholding and labeling run.
    pub enabled: bool,
    pub threshold: f64,
    pub connectivity: Connectivity,
    /// Minimum component area in pixels for a 512x512 image.
    pub min_area: f64,
}

impl Default for PostConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            threshold: 0.5,
            connectivity: Connectivity::Eight,
            min_area: 100.0,
        }
    }
}

impl PostConfig {
    pub fn validate(&self) -> Result<(), PostError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(PostError::Threshold(self.threshold));
        }
        if !(self.min_area.is_finite() && self.min_area >= 0.0) {
            return Err(PostError::MinArea(self.min_area));
        }
        Ok(())
    }

    /// `min_area` rescaled by `(h * w) / 512^2`.
    pub fn effective_min_area(&self, height: usize, width: usize) -> f64 {
        self.min_area * (height * width) as f64 / (REFERENCE_SIDE * REFERENCE_SIDE) as f64
    }
}

/// 1 where `prob >= threshold`.
pub fn binarize(prob: &ImageGray, threshold: f64) -> BinaryMask {
    let data = prob.data().iter().map(|&p| (p >= threshold) as u8).collect();
    BinaryMask::new(prob.height(), prob.width(), data).expect("dims come from a valid image")
}

/// Keeps components whose area is at least `min_area`.
pub fn remove_small(labeling: &Labeling, min_area: f64) -> BinaryMask {
    let keep: Vec<bool> = std::iter::once(false)
        .chain(labeling.components().iter().map(|c| c.area as f64 >= min_area))
        .collect();
    let data = labeling.labels().iter().map(|&l| keep[l as usize] as u8).collect();
    BinaryMask::new(labeling.height(), labeling.width(), data).expect("dims come from a valid labeling")
}

/// Threshold, label, drop small components (when enabled), relabel the
/// survivors.
pub fn postprocess(prob: &ImageGray, cfg: &PostConfig) -> Result<(BinaryMask, InstanceSet), PostError> {
    cfg.validate()?;
    let mut mask = binarize(prob, cfg.threshold);
    let mut labeling = label_components(&mask, cfg.connectivity);
    if cfg.enabled {
        mask = remove_small(&labeling, cfg.effective_min_area(prob.height(), prob.width()));
        labeling = label_components(&mask, cfg.connectivity);
    }
    let instances = InstanceSet::from_labeling(&labeling);
    Ok((mask, instances))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(h: usize, w: usize, v: Vec<f64>) -> ImageGray {
        ImageGray::new(h, w, v).unwrap()
    }

    #[test]
    fn binarize_boundary() {
        assert!(binarize(&ImageGray::filled(3, 3, 0.5).unwrap(), 0.5).data().iter().all(|&v| v == 1));
        assert!(binarize(&ImageGray::filled(3, 3, 0.49).unwrap(), 0.5).data().iter().all(|&v| v == 0));
    }

    #[test]
    fn remove_small_boundary_and_idempotence() {
        // 3-pixel and 4-pixel components
        let m = BinaryMask::new(2, 6, vec![1, 1, 1, 0, 1, 1, 0, 0, 0, 0, 1, 1]).unwrap();
        let lab = label_components(&m, Connectivity::Eight);
        let out = remove_small(&lab, 4.0);
        assert_eq!(out.data(), &[0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1]);
        let again = remove_small(&label_components(&out, Connectivity::Eight), 4.0);
        assert_eq!(again, out);
        assert_eq!(remove_small(&lab, 3.0), m);
    }

    #[test]
    fn postprocess_keeps_large_blob_only() {
        let (h, w) = (512, 512);
        let mut v = vec![0.0; h * w];
        for r in 100..120 {
            for c in 100..120 {
                v[r * w + c] = 0.9;
            }
        }
        for c in 300..303 {
            v[400 * w + c] = 0.9;
        }
        let (mask, inst) = postprocess(&img(h, w, v), &PostConfig::default()).unwrap();
        assert_eq!(mask.count_ones(), 400);
        assert_eq!(inst.len(), 1);
        assert_eq!(inst.instances()[0].area, 400);
    }

    #[test]
    fn below_threshold_is_empty() {
        let (mask, inst) = postprocess(&ImageGray::filled(8, 8, 0.2).unwrap(), &PostConfig::default()).unwrap();
        assert_eq!(mask.count_ones(), 0);
        assert!(inst.is_empty());
    }

    #[test]
    fn min_area_scales_with_resolution() {
        let cfg = PostConfig::default();
        assert_eq!(cfg.effective_min_area(512, 512), 100.0);
        assert_eq!(cfg.effective_min_area(256, 256), 25.0);
    }

    proptest! {
        #[test]
        fn postprocess_properties(bits in proptest::collection::vec(0u8..=9, 24 * 24), min_area in 0.0f64..3000.0) {
            let prob = img(24, 24, bits.iter().map(|&b| b as f64 / 9.0).collect());
            let cfg = PostConfig { min_area, ..PostConfig::default() };
            let raw = binarize(&prob, cfg.threshold);
            let (mask, inst) = postprocess(&prob, &cfg).unwrap();
            // removal only removes
            prop_assert!(mask.data().iter().zip(raw.data()).all(|(&m, &r)| m <= r));
            // recount: instance areas sum to surviving foreground
            let total: usize = inst.instances().iter().map(|i| i.area).sum();
            prop_assert_eq!(total, mask.count_ones());
            let eff = cfg.effective_min_area(24, 24);
            prop_assert!(inst.instances().iter().all(|i| i.area as f64 >= eff));
            // idempotent on the thresholded output
            let again = remove_small(&label_components(&mask, cfg.connectivity), eff);
            prop_assert_eq!(again, mask);
        }

        #[test]
        fn raising_threshold_never_adds(vals in proptest::collection::vec(0.0f64..=1.0, 64), t1 in 0.01f64..0.99, dt in 0.0f64..0.5) {
            let prob = img(8, 8, vals);
            let lo = binarize(&prob, t1);
            let hi = binarize(&prob, (t1 + dt).min(0.999));
            prop_assert!(hi.data().iter().zip(lo.data()).all(|(&h, &l)| h <= l));
        }
    }
}
