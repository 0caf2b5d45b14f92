//! Single-view-to-stereo video conversion at desk scale.
//!
//! The pipeline turns a left-view video sequence into a stereo pair by
//! predicting per-pixel disparity implicitly (a probability distribution over
//! candidate horizontal shifts), refining it into a stack of layered
//! disparity maps, warping the input through every layer, and compositing the
//! layers occlusion-aware. A context-fusion stage enriches the composited
//! right view with semantic detail.
//!
//! Crate layout:
//! - [`frame`]: the `FrameSequence` video currency and value-range bookkeeping
//! - [`datakit`]: side-by-side splitting, manifests, synthetic stereo scenes
//!   with exact ground truth, anaglyph output
//! - [`metrics`]: flow-consistency analysis and L1/SSIM/PSNR evaluation
//! - [`warp`]: differentiable warp kernels and layered composition
//! - [`autodiff`]: a small reverse-mode tape the model runs on
//! - [`attention`]: soft split/composition and windowed spatial-temporal
//!   attention
//! - [`model`]: the six-stage conversion network
//! - [`training`]: losses, AdamW, the training loop, checkpoints, sliding
//!   window inference and evaluation

pub mod attention;
pub mod autodiff;
pub mod datakit;
pub mod fdcheck;
pub mod frame;
pub mod metrics;
pub mod model;
pub mod parallelism;
pub mod rng;
pub mod training;
pub mod warp;

pub use frame::{FrameSequence, ValueRange};
