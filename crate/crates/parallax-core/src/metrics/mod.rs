//! Stereo-consistency analysis and image-quality evaluation.

mod consistency;
mod quality;

pub use consistency::{
    flow_consistency, occlusion_breakdown, occlusion_fraction, BucketBreakdown, ConsistencyMap,
    FlowDirection, FlowField, DEFAULT_EPSILON, OCCLUSION_BUCKET_EDGES,
};
pub use quality::{evaluate_arrays, evaluate_pair, QualityReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("value range mismatch: {0}")]
    RangeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("{0}")]
    Invalid(String),
}
