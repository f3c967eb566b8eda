//! Image IO, fold manifests and the synthetic dataset generator.

mod manifest;
pub mod pnm;
mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

pub use manifest::{
    load_fold, load_manifest, parse_manifest, render_manifest, FoldManifest, Label, Sample, Split,
    MANIFEST_HEADER,
};
pub use pnm::{read_image, read_mask, write_gray, Raster};
pub use synthetic::{
    generate_synthetic, ClassCounts, SplitCounts, SyntheticImage, SyntheticSpec, TextureParams,
    MIN_EXTENT,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("manifest line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("fold {fold}: patient `{patient_id}` appears in {splits}")]
    PatientLeak {
        fold: usize,
        patient_id: String,
        splits: String,
    },
    #[error("image not found: {}", .0.display())]
    MissingImage(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image header: {0}")]
    CorruptHeader(String),
    #[error("fold {0} is not in the manifest")]
    FoldNotFound(usize),
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("io: {0}")]
    IoFailure(String),
}
