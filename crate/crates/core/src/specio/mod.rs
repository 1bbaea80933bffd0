//! Image, annotation, mask and checkpoint I/O.

mod checkpoint;
mod coco;
mod image;
mod mask;
mod raster;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, ArchDescriptor, Checkpoint, CHECKPOINT_MAGIC};
pub use coco::{load_coco, parse_coco, AnnotationSet, ImageEntry, PolygonAnn};
pub use image::{load_image, save_image_png16, ImageGray};
pub use mask::{load_mask, save_mask, BinaryMask};
pub use raster::{point_in_polygon, rasterize};

#[derive(Debug, Error)]
pub enum SpecioError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("invalid annotation document: {0}")]
    Annotation(String),
    #[error("invalid dimensions {height}x{width}")]
    Dimensions { height: usize, width: usize },
    #[error("invalid image data: {0}")]
    Data(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
}

impl SpecioError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        SpecioError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, reason: impl Into<String>) -> Self {
        SpecioError::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }
}
