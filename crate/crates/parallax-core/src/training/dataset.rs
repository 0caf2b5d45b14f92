//! Clip sources for training and evaluation.

use crate::datakit::synth::{generate_synthetic_stereo, SyntheticScene, SyntheticSceneSpec};
use crate::frame::FrameSequence;

/// Anything that yields aligned stereo clips.
pub trait ClipSource {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// `(left, right)` for the clip at `idx`.
    fn clip(&self, idx: usize) -> (FrameSequence, FrameSequence);
}

/// Pre-generated synthetic scenes with full ground truth.
pub struct SyntheticDataset {
    pub scenes: Vec<SyntheticScene>,
}

impl SyntheticDataset {
    pub fn from_scenes(scenes: Vec<SyntheticScene>) -> Self {
        Self { scenes }
    }

    /// Generate `count` random scenes of the given geometry.
    pub fn generate(
        seed: u64,
        count: usize,
        canvas: (usize, usize),
        length: usize,
        planes: usize,
    ) -> Self {
        let scenes = (0..count)
            .map(|k| {
                let spec =
                    SyntheticSceneSpec::random(seed.wrapping_add(k as u64), canvas, length, planes);
                generate_synthetic_stereo(&spec, seed.wrapping_add(1000 + k as u64))
                    .expect("random specs satisfy the invariants")
            })
            .collect();
        Self { scenes }
    }

    pub fn scene(&self, idx: usize) -> &SyntheticScene {
        &self.scenes[idx]
    }
}

impl ClipSource for SyntheticDataset {
    fn len(&self) -> usize {
        self.scenes.len()
    }

    fn clip(&self, idx: usize) -> (FrameSequence, FrameSequence) {
        let s = &self.scenes[idx];
        (s.left.clone(), s.right.clone())
    }
}
