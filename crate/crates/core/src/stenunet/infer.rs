use std::time::Instant;

use super::{Model, ModelError};
use crate::prefilter::{preprocess, PreConfig};
use crate::specio::ImageGray;
use crate::tensorkit::{Scalar, Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    /// Per-pixel foreground probability.
    pub prob: ImageGray,
    /// Wall-clock seconds for preprocessing plus the forward pass.
    pub seconds: f64,
}

/// Preprocesses (when enabled) and runs a single-sample forward pass.
pub fn infer<T: Scalar>(model: &Model<T>, image: &ImageGray, pre: &PreConfig) -> Result<Inference, ModelError> {
    let start = Instant::now();
    let input = preprocess(image, pre)?;
    let (h, w) = (input.height(), input.width());
    let x = Tensor::from_vec(
        Shape::new(1, 1, h, w),
        input.data().iter().map(|&v| T::cast(v)).collect(),
    )?;
    let y = model.forward(&x)?;
    let prob = ImageGray::from_clamped(h, w, y.data().iter().map(|v| v.as_f64()).collect())
        .map_err(|e| ModelError::Config(e.to_string()))?;
    Ok(Inference {
        prob,
        seconds: start.elapsed().as_secs_f64(),
    })
}
