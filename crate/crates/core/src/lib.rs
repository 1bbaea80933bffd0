//! Stenosis detection pipeline for single-frame X-ray coronary angiograms.
//!
//! The crate is organised the way data flows through it:
//!
//! * [`specio`] loads images and COCO polygon annotations, rasterizes masks and
//!   persists masks and checkpoints.
//! * [`prefilter`] performs homomorphic Butterworth enhancement and
//!   mean/variance normalisation.
//! * [`tensorkit`] provides NCHW tensors and the differentiable primitives the
//!   network is built from, each with an analytic backward pass.
//! * [`stenunet`] wires those primitives into the encoder/decoder network and
//!   provides the loss, learning-rate schedule, augmentation and the
//!   training/inference drivers.
//! * [`postseg`] thresholds probability maps and drops small components.
//! * [`evalkit`] scores predictions with per-image F1 and times inference.
//! * [`synth`] generates the synthetic vessel fixtures used by the tests and
//!   the ablation harness.

pub mod evalkit;
pub mod postseg;
pub mod prefilter;
pub mod specio;
pub mod stenunet;
pub mod synth;
pub mod tensorkit;

mod error;

pub use error::{Error, Result};
