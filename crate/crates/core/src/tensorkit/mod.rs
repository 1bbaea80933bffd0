//! Dense NCHW tensors and the differentiable primitives used by the network.
//!
//! Every forward op has a matching hand-written backward pass. Reductions use
//! fixed loop nests and work partitions that do not depend on the number of
//! worker threads, so results are bit-reproducible run to run.

mod activation;
mod conv;
mod gemm;
pub mod gradcheck;
mod norm;
mod optim;
mod pool;
mod scalar;
mod tensor;
mod upconv;

use thiserror::Error;

pub use activation::{leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward};
pub use conv::{conv2d, conv2d_backward, conv2d_naive, conv_output_dim, ConvGrads};
pub use norm::{instance_norm, instance_norm_backward, NormCache, NormGrads, NORM_EPS};
pub use optim::{sgd_step, ParamTensor, SgdOptions};
pub use pool::{maxpool2, maxpool2_backward, PoolIndices};
pub use scalar::Scalar;
pub use tensor::{concat_channels, split_channels, Shape, Tensor};
pub use upconv::{upconv2, upconv2_backward, UpconvGrads};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: spatial dims {h}x{w} must be even")]
    OddSpatial { op: &'static str, h: usize, w: usize },
    #[error("{op}: output size ({size} + 2*{pad} - {kernel}) / {stride} + 1 is not integral")]
    NonIntegral {
        op: &'static str,
        size: usize,
        pad: usize,
        kernel: usize,
        stride: usize,
    },
    #[error("data length {len} does not match shape {shape}")]
    Length { len: usize, shape: Shape },
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Shape {
        op,
        detail: detail.into(),
    }
}
