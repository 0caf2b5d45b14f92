//! Clip augmentation: resize then one shared random crop.
//!
//! Both views get the identical spatial transform; sharing the column offset
//! in particular is what preserves the disparity geometry between them.

use super::{TrainConfig, TrainError};
use crate::frame::FrameSequence;
use crate::rng::derive_rng;
use ndarray::{s, Array4};
use rand::Rng;

/// The transform applied by [`augment_clip`], for carrying ground-truth maps
/// through the same geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentRecord {
    /// horizontal scale factor applied by the resize
    pub scale_x: f64,
    /// vertical scale factor
    pub scale_y: f64,
    pub crop_y: usize,
    pub crop_x: usize,
    pub crop_size: usize,
}

/// Bilinear resize of every frame (half-pixel alignment).
pub fn resize_bilinear(seq: &FrameSequence, out_h: usize, out_w: usize) -> FrameSequence {
    let (t, h, w, c) = seq.dim();
    if (h, w) == (out_h, out_w) {
        return seq.clone();
    }
    let src = seq.data();
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let taps = |o: usize, scale: f64, size: usize| -> (usize, usize, f64) {
        let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (size - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(size - 1);
        (i0, i1, pos - i0 as f64)
    };
    let mut out = Array4::zeros((t, out_h, out_w, c));
    for ti in 0..t {
        for oy in 0..out_h {
            let (y0, y1, fy) = taps(oy, sy, h);
            for ox in 0..out_w {
                let (x0, x1, fx) = taps(ox, sx, w);
                for ci in 0..c {
                    let v00 = f64::from(src[[ti, y0, x0, ci]]);
                    let v01 = f64::from(src[[ti, y0, x1, ci]]);
                    let v10 = f64::from(src[[ti, y1, x0, ci]]);
                    let v11 = f64::from(src[[ti, y1, x1, ci]]);
                    let v = v00 * (1.0 - fy) * (1.0 - fx)
                        + v01 * (1.0 - fy) * fx
                        + v10 * fy * (1.0 - fx)
                        + v11 * fy * fx;
                    out[[ti, oy, ox, ci]] = v as f32;
                }
            }
        }
    }
    FrameSequence::new_clamped(out, seq.value_range())
        .expect("resize keeps values in range")
        .with_frame_rate(seq.frame_rate())
}

fn crop(seq: &FrameSequence, y: usize, x: usize, size: usize) -> FrameSequence {
    let data = seq
        .data()
        .slice(s![.., y..y + size, x..x + size, ..])
        .to_owned();
    FrameSequence::new(data, seq.value_range())
        .expect("crop keeps invariants")
        .with_frame_rate(seq.frame_rate())
}

/// Resize both views to `resize_to`, then crop both at one shared random
/// origin to `crop_to`. Deterministic per `(config.seed, step)`.
pub fn augment_clip(
    left: &FrameSequence,
    right: &FrameSequence,
    cfg: &TrainConfig,
    step: u64,
) -> Result<(FrameSequence, FrameSequence, AugmentRecord), TrainError> {
    if left.dim() != right.dim() {
        return Err(TrainError::BadConfig(format!(
            "left {:?} vs right {:?}",
            left.dim(),
            right.dim()
        )));
    }
    if cfg.crop_to > cfg.resize_to {
        return Err(TrainError::BadConfig(format!(
            "crop {} larger than resized frame {}",
            cfg.crop_to, cfg.resize_to
        )));
    }
    let (_, h, w, _) = left.dim();
    let l = resize_bilinear(left, cfg.resize_to, cfg.resize_to);
    let r = resize_bilinear(right, cfg.resize_to, cfg.resize_to);
    let span = cfg.resize_to - cfg.crop_to;
    let mut rng = derive_rng(cfg.seed, "augment_crop", step);
    let (cy, cx) = if span == 0 {
        (0, 0)
    } else {
        (rng.gen_range(0..=span), rng.gen_range(0..=span))
    };
    let record = AugmentRecord {
        scale_x: cfg.resize_to as f64 / w as f64,
        scale_y: cfg.resize_to as f64 / h as f64,
        crop_y: cy,
        crop_x: cx,
        crop_size: cfg.crop_to,
    };
    Ok((
        crop(&l, cy, cx, cfg.crop_to),
        crop(&r, cy, cx, cfg.crop_to),
        record,
    ))
}

impl AugmentRecord {
    /// Carry a per-pixel map (e.g. ground-truth disparity) through the same
    /// transform. Only valid for identity resizes; disparity values would
    /// need rescaling otherwise.
    pub fn crop_map(&self, map: &ndarray::Array3<f32>) -> ndarray::Array3<f32> {
        assert_eq!(self.scale_x, 1.0, "crop_map requires an identity resize");
        assert_eq!(self.scale_y, 1.0, "crop_map requires an identity resize");
        map.slice(s![
            ..,
            self.crop_y..self.crop_y + self.crop_size,
            self.crop_x..self.crop_x + self.crop_size
        ])
        .to_owned()
    }

    pub fn crop_mask(&self, map: &ndarray::Array3<bool>) -> ndarray::Array3<bool> {
        map.slice(s![
            ..,
            self.crop_y..self.crop_y + self.crop_size,
            self.crop_x..self.crop_x + self.crop_size
        ])
        .to_owned()
    }
}
