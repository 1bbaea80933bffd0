use serde::Serialize;

use crate::prefilter::PreConfig;
use crate::specio::ImageGray;
use crate::stenunet::{infer, Model, ModelError};
use crate::tensorkit::Scalar;

pub const DEFAULT_BUDGET_SECONDS: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingReport {
    pub seconds: Vec<f64>,
    pub mean_seconds: f64,
    pub max_seconds: f64,
    pub budget_seconds: f64,
    pub within_budget: bool,
}

/// Times [`infer`] on each image in turn. Images are run one after another so
/// measurements do not compete for cores.
pub fn time_inference<T: Scalar>(
    model: &Model<T>,
    images: &[ImageGray],
    pre: &PreConfig,
    budget_seconds: f64,
) -> Result<TimingReport, ModelError> {
    let mut seconds = Vec::with_capacity(images.len());
    for img in images {
        seconds.push(infer(model, img, pre)?.seconds);
    }
    let max = seconds.iter().copied().fold(0.0, f64::max);
    Ok(TimingReport {
        mean_seconds: super::mean(seconds.iter().copied()),
        max_seconds: max,
        budget_seconds,
        within_budget: !seconds.is_empty() && max < budget_seconds,
        seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stenunet::ArchConfig;

    #[test]
    fn tiny_model_fast_and_zero_budget_fails() {
        let m = Model::<f32>::build(&ArchConfig::tiny(&[4, 8]), 0).unwrap();
        let imgs = vec![ImageGray::filled(64, 64, 0.3).unwrap(); 2];
        let r = time_inference(&m, &imgs, &PreConfig::default(), DEFAULT_BUDGET_SECONDS).unwrap();
        assert!(r.within_budget);
        assert_eq!(r.seconds.len(), 2);
        let r0 = time_inference(&m, &imgs, &PreConfig::default(), 0.0).unwrap();
        assert!(!r0.within_budget);
    }
}
