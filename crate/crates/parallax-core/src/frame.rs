//! Video frame sequences and value-range bookkeeping.

use ndarray::{Array4, ArrayView3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Declared numeric range of pixel values in a sequence.
///
/// Two ranges appear in the pipeline: `[0, 255]` for storage/IO and
/// `[-127.5, 127.5]` for loss computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f32,
    pub hi: f32,
}

impl ValueRange {
    pub const UNIT8: ValueRange = ValueRange { lo: 0.0, hi: 255.0 };
    pub const CENTERED: ValueRange = ValueRange {
        lo: -127.5,
        hi: 127.5,
    };

    pub fn width(&self) -> f32 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f32) -> bool {
        v >= self.lo && v <= self.hi
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame dimensions too small: T={t}, H={h}, W={w} (need T>=1, H>=8, W>=8)")]
    TooSmall { t: usize, h: usize, w: usize },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    BadChannels(usize),
    #[error("value {value} outside declared range [{lo}, {hi}]")]
    OutOfRange { value: f32, lo: f32, hi: f32 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("value range mismatch: {0:?} vs {1:?}")]
    RangeMismatch(ValueRange, ValueRange),
}

/// A clip of `T` frames, `H x W`, `C` channels, stored `[T, H, W, C]`.
///
/// The universal video currency of the pipeline. Color frames carry C = 3,
/// masks C = 1. All values lie within the declared [`ValueRange`].
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    data: Array4<f32>,
    value_range: ValueRange,
    frame_rate: f32,
}

impl FrameSequence {
    /// Wrap a `[T, H, W, C]` array, validating the type invariants.
    pub fn new(data: Array4<f32>, value_range: ValueRange) -> Result<Self, FrameError> {
        let (t, h, w, c) = data.dim();
        if t < 1 || h < 8 || w < 8 {
            return Err(FrameError::TooSmall { t, h, w });
        }
        if c != 1 && c != 3 {
            return Err(FrameError::BadChannels(c));
        }
        if let Some(&v) = data.iter().find(|v| !value_range.contains(**v)) {
            return Err(FrameError::OutOfRange {
                value: v,
                lo: value_range.lo,
                hi: value_range.hi,
            });
        }
        Ok(Self {
            data,
            value_range,
            frame_rate: 24.0,
        })
    }

    /// Like [`FrameSequence::new`] but clamps values into range instead of
    /// erroring. Used where upstream arithmetic may overshoot by rounding.
    pub fn new_clamped(mut data: Array4<f32>, value_range: ValueRange) -> Result<Self, FrameError> {
        data.mapv_inplace(|v| v.clamp(value_range.lo, value_range.hi));
        Self::new(data, value_range)
    }

    pub fn with_frame_rate(mut self, fps: f32) -> Self {
        self.frame_rate = fps;
        self
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f32> {
        self.data
    }

    pub fn value_range(&self) -> ValueRange {
        self.value_range
    }

    pub fn frame_rate(&self) -> f32 {
        self.frame_rate
    }

    pub fn len(&self) -> usize {
        self.data.dim().0
    }

    pub fn is_empty(&self) -> bool {
        false // T >= 1 by construction
    }

    /// (T, H, W, C)
    pub fn dim(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    pub fn frame(&self, t: usize) -> ArrayView3<'_, f32> {
        self.data.index_axis(ndarray::Axis(0), t)
    }

    /// Slice frames `[start, end)` into a new sequence.
    pub fn slice_frames(&self, start: usize, end: usize) -> FrameSequence {
        assert!(start < end && end <= self.len());
        FrameSequence {
            data: self
                .data
                .slice(ndarray::s![start..end, .., .., ..])
                .to_owned(),
            value_range: self.value_range,
            frame_rate: self.frame_rate,
        }
    }

    pub fn same_shape(&self, other: &FrameSequence) -> bool {
        self.dim() == other.dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn rejects_out_of_range() {
        let mut a = Array4::zeros((1, 8, 8, 3));
        a[[0, 0, 0, 0]] = 300.0;
        assert!(matches!(
            FrameSequence::new(a, ValueRange::UNIT8),
            Err(FrameError::OutOfRange { .. })
        ));
    }

    #[test]
    fn rejects_small_frames() {
        let a = Array4::zeros((1, 4, 8, 3));
        assert!(matches!(
            FrameSequence::new(a, ValueRange::UNIT8),
            Err(FrameError::TooSmall { .. })
        ));
    }

    #[test]
    fn rejects_bad_channels() {
        let a = Array4::zeros((1, 8, 8, 2));
        assert!(matches!(
            FrameSequence::new(a, ValueRange::UNIT8),
            Err(FrameError::BadChannels(2))
        ));
    }

    #[test]
    fn accepts_masks() {
        let a = Array4::zeros((2, 8, 8, 1));
        assert!(FrameSequence::new(a, ValueRange::UNIT8).is_ok());
    }
}
