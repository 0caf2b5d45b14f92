//! Differentiable warping: shifted-copy stacks, implicit-disparity blending,
//! horizontal bilinear warping, layered composition, and median blur.

pub mod kernels;

pub use kernels::{Scalar, WarpError};

use crate::frame::FrameSequence;
use ndarray::{Array3, Array4, Array5};

/// Per-pixel probability distribution over candidate integer shifts,
/// `[T, H, W, D]` with the candidate shift of each channel alongside.
#[derive(Debug, Clone)]
pub struct DisparityProbVolume {
    pub probs: Array4<f32>,
    pub shifts: Vec<i32>,
}

impl DisparityProbVolume {
    pub const SUM_TOL: f64 = 1e-5;

    pub fn new(probs: Array4<f32>, shifts: Vec<i32>) -> Result<Self, WarpError> {
        if probs.dim().3 != shifts.len() {
            return Err(WarpError::ShapeMismatch(format!(
                "{} prob channels vs {} shifts",
                probs.dim().3,
                shifts.len()
            )));
        }
        if shifts.is_empty() || shifts.windows(2).any(|p| p[0] >= p[1]) {
            return Err(WarpError::BadShifts);
        }
        kernels::validate_probs(probs.view(), Self::SUM_TOL)?;
        Ok(Self { probs, shifts })
    }

    /// Per-pixel most likely shift, `[T, H, W]`.
    pub fn argmax_shift(&self) -> Array3<i32> {
        let (t, h, w, d) = self.probs.dim();
        Array3::from_shape_fn((t, h, w), |(ti, i, j)| {
            let mut best = 0;
            for di in 1..d {
                if self.probs[[ti, i, j, di]] > self.probs[[ti, i, j, best]] {
                    best = di;
                }
            }
            self.shifts[best]
        })
    }
}

/// Horizontally shifted copies of a sequence, `[T, D, H, W, C]`.
#[derive(Debug, Clone)]
pub struct ShiftStack {
    pub images: Array5<f32>,
    pub shifts: Vec<i32>,
}

/// A stack of real-valued signed disparity maps per frame, `[T, D, H, W]`.
#[derive(Debug, Clone)]
pub struct LayeredDisparity {
    pub disparities: Array4<f32>,
}

impl LayeredDisparity {
    pub fn new(disparities: Array4<f32>) -> Result<Self, WarpError> {
        let w = disparities.dim().3 as f32;
        if disparities.iter().any(|v| !v.is_finite()) {
            return Err(WarpError::NonFiniteDisparity);
        }
        if disparities.iter().any(|v| v.abs() > w) {
            return Err(WarpError::Invalid(
                "layered disparity exceeds frame width".into(),
            ));
        }
        Ok(Self { disparities })
    }

    pub fn num_layers(&self) -> usize {
        self.disparities.dim().1
    }
}

/// Per-layer warped images `[D, T, H, W, C]` and validity masks
/// `[D, T, H, W]` in `{0, 1}` (1 where the warped sample fell inside the
/// source image).
#[derive(Debug, Clone)]
pub struct WarpStack {
    pub images: Array5<f32>,
    pub masks: Array4<f32>,
}

impl WarpStack {
    pub fn new(images: Array5<f32>, masks: Array4<f32>) -> Result<Self, WarpError> {
        let (d, t, h, w, _c) = images.dim();
        if masks.dim() != (d, t, h, w) {
            return Err(WarpError::ShapeMismatch(format!(
                "images {:?} vs masks {:?}",
                images.dim(),
                masks.dim()
            )));
        }
        if masks.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(WarpError::BadMask);
        }
        Ok(Self { images, masks })
    }

    pub fn num_layers(&self) -> usize {
        self.images.dim().0
    }

    /// Warp one sequence by every layer of a disparity stack.
    pub fn from_layered_warp(
        seq: &FrameSequence,
        layered: &LayeredDisparity,
    ) -> Result<Self, WarpError> {
        let (t, h, w, c) = seq.dim();
        let (td, d, hd, wd) = layered.disparities.dim();
        if (td, hd, wd) != (t, h, w) {
            return Err(WarpError::ShapeMismatch(format!(
                "sequence {:?} vs layered disparity {:?}",
                seq.dim(),
                layered.disparities.dim()
            )));
        }
        let mut images = Array5::zeros((d, t, h, w, c));
        let mut masks = Array4::zeros((d, t, h, w));
        for di in 0..d {
            let disp = layered
                .disparities
                .slice(ndarray::s![.., di, .., ..])
                .to_owned();
            let (warped, valid) = kernels::warp_horizontal_forward(seq.data().view(), disp.view())?;
            images.slice_mut(ndarray::s![di, .., .., .., ..]).assign(&warped);
            masks.slice_mut(ndarray::s![di, .., .., ..]).assign(&valid);
        }
        Ok(Self { images, masks })
    }
}

/// Build the shifted-copy stack for a sequence.
pub fn build_shift_stack(seq: &FrameSequence, shifts: &[i32]) -> Result<ShiftStack, WarpError> {
    let images = kernels::shift_stack_forward(seq.data().view(), shifts)?;
    Ok(ShiftStack {
        images,
        shifts: shifts.to_vec(),
    })
}

/// Blend a shift stack by a probability volume (must share the shift list).
pub fn implicit_blend(
    stack: &ShiftStack,
    probs: &DisparityProbVolume,
) -> Result<FrameSequence, WarpError> {
    if stack.shifts != probs.shifts {
        return Err(WarpError::ShapeMismatch(format!(
            "stack shifts {:?} vs prob shifts {:?}",
            stack.shifts, probs.shifts
        )));
    }
    kernels::validate_probs(probs.probs.view(), DisparityProbVolume::SUM_TOL)?;
    let out = kernels::implicit_blend_forward(stack.images.view(), probs.probs.view())?;
    FrameSequence::new_clamped(out, crate::frame::ValueRange::UNIT8)
        .map_err(|e| WarpError::Invalid(e.to_string()))
}

/// Warp a sequence horizontally by a per-pixel disparity map. Returns the
/// warped sequence and the validity mask.
pub fn warp_horizontal(
    seq: &FrameSequence,
    disparity: &Array3<f32>,
) -> Result<(Array4<f32>, Array3<f32>), WarpError> {
    kernels::warp_horizontal_forward(seq.data().view(), disparity.view())
}

/// Occlusion-aware composition: selector masks are derived from the warped
/// masks (layer 0 as-is, later layers restricted to not-yet-covered pixels the
/// previous layer could reach) and applied to the warped images. Returns the
/// composed frames and the selectors.
pub fn compose_layers_with_selectors(
    ws: &WarpStack,
) -> Result<(Array4<f32>, Array4<f32>), WarpError> {
    let selectors = kernels::compose_selectors(ws.masks.view())?;
    let out = kernels::apply_selectors(ws.images.view(), selectors.view());
    Ok((out, selectors))
}

/// [`compose_layers_with_selectors`] without the selectors.
pub fn compose_layers(ws: &WarpStack) -> Result<Array4<f32>, WarpError> {
    Ok(compose_layers_with_selectors(ws)?.0)
}

/// Alternative composition with signed selector masks in `{-1, 0, 1}`,
/// allowing layers to cancel earlier contributions.
pub fn compose_layers_alt(ws: &WarpStack) -> Result<Array4<f32>, WarpError> {
    let selectors = kernels::compose_selectors_signed(ws.masks.view())?;
    Ok(kernels::apply_selectors(ws.images.view(), selectors.view()))
}

/// Per-channel 3x3 median filter with border replication.
pub fn median_blur3(seq: &FrameSequence) -> Result<FrameSequence, WarpError> {
    let (out, _) = kernels::median_blur3_forward(seq.data().view())?;
    FrameSequence::new(out, seq.value_range()).map_err(|e| WarpError::Invalid(e.to_string()))
}
