//! Dataset tooling: side-by-side splitting, manifests, frame ingest,
//! synthetic stereo scenes with exact ground truth, and anaglyph output.

mod ingest;
mod manifest;
mod sbs;
pub mod synth;
pub mod tensorfile;

pub use ingest::{ingest_frames, load_frame_dir, write_frame_dir};
pub use manifest::{read_manifest, write_manifest, Layout, ManifestEntry};
pub use sbs::{hconcat, make_anaglyph, make_sbs, split_sbs_frame, split_sbs_sequence};
pub use synth::{generate_synthetic_stereo, PlaneSpec, SyntheticScene, SyntheticSceneSpec};

use thiserror::Error;

/// Side-by-side sources carry a non-stereo intro; frame extraction must skip
/// at least this many frames.
pub const SBS_INTRO_SKIP: usize = 600;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("odd frame width {0}: cannot split side-by-side layout")]
    OddWidth(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("missing frame {0}")]
    MissingFrame(usize),
    #[error("manifest entry '{id}' invalid: {reason}")]
    BadEntry { id: String, reason: String },
    #[error("scene spec invalid: {0}")]
    BadSceneSpec(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image decode error at {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Frame(#[from] crate::frame::FrameError),
}

impl DataError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
