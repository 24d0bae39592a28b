//! Feature manifests, EF class binning and cardiac frame-index arithmetic.

mod bounds;
mod frames;
mod manifest;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub use bounds::{ClassBounds, ClassInterval, EF_MAX, EF_MIN};
pub use frames::{derive_frame_indices, derive_frame_indices_with, FrameIndices, Rounding};
pub use manifest::{
    load_csv_manifest, load_manifest, save_csv_manifest, save_manifest, save_manifest_referencing,
    DatasetManifest, FeatureRecord, FeatureSource, Split, DEFAULT_DIM,
};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("frame order error: need 0 <= i0 < i2, got i0={i0}, i2={i2}")]
    FrameOrder { i0: i64, i2: i64 },
    #[error("manifest has no records")]
    Empty,
    #[error("record {video_id:?}: feature length {got}, expected dimension {expected}")]
    Dimension { video_id: String, got: usize, expected: usize },
    #[error("duplicate video_id {0:?}")]
    DuplicateId(String),
    #[error("record {video_id:?}: {msg}")]
    Record { video_id: String, msg: String },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: u64, msg: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl StoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        StoreError::Io { path: path.into(), source }
    }
}
