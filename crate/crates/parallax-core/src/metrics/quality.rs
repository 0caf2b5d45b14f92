//! L1 / SSIM / PSNR evaluation.

use super::MetricError;
use crate::frame::FrameSequence;
use ndarray::{Array2, Array4};
use serde::Serialize;

const K1: f64 = 0.01;
const K2: f64 = 0.03;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// Aggregate quality of a predicted sequence against ground truth.
///
/// `l1` is the mean absolute error on a `[0, 1]` scale, `ssim` the mean
/// structural similarity in `[-1, 1]`, `psnr` in decibels (infinite for
/// identical inputs).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct QualityReport {
    pub l1: f64,
    pub ssim: f64,
    pub psnr: f64,
}

impl QualityReport {
    pub fn is_valid(&self) -> bool {
        self.l1 >= 0.0 && self.l1.is_finite() && (-1.0..=1.0).contains(&self.ssim)
    }
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable valid-mode Gaussian filter; output shrinks by `SSIM_WINDOW - 1`
/// in each dimension.
fn gaussian_valid(img: &Array2<f64>, k: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, w) = img.dim();
    let wo = w - (SSIM_WINDOW - 1);
    let ho = h - (SSIM_WINDOW - 1);
    let mut rows = Array2::zeros((h, wo));
    for i in 0..h {
        for j in 0..wo {
            let mut s = 0.0;
            for (d, kv) in k.iter().enumerate() {
                s += kv * img[[i, j + d]];
            }
            rows[[i, j]] = s;
        }
    }
    let mut out = Array2::zeros((ho, wo));
    for i in 0..ho {
        for j in 0..wo {
            let mut s = 0.0;
            for (d, kv) in k.iter().enumerate() {
                s += kv * rows[[i + d, j]];
            }
            out[[i, j]] = s;
        }
    }
    out
}

/// Mean SSIM of one channel plane pair, Gaussian-weighted 11x11 windows over
/// the valid region.
fn ssim_plane(x: &Array2<f64>, y: &Array2<f64>, dynamic_range: f64) -> f64 {
    let k = gaussian_kernel();
    let c1 = (K1 * dynamic_range).powi(2);
    let c2 = (K2 * dynamic_range).powi(2);
    let mu_x = gaussian_valid(x, &k);
    let mu_y = gaussian_valid(y, &k);
    let xx = gaussian_valid(&(x * x), &k);
    let yy = gaussian_valid(&(y * y), &k);
    let xy = gaussian_valid(&(x * y), &k);
    let mut total = 0.0;
    let n = mu_x.len();
    for idx in 0..mu_x.dim().0 {
        for jdx in 0..mu_x.dim().1 {
            let mx = mu_x[[idx, jdx]];
            let my = mu_y[[idx, jdx]];
            let sx = xx[[idx, jdx]] - mx * mx;
            let sy = yy[[idx, jdx]] - my * my;
            let sxy = xy[[idx, jdx]] - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
                / ((mx * mx + my * my + c1) * (sx + sy + c2));
        }
    }
    total / n as f64
}

/// Evaluate raw `[T, H, W, C]` arrays whose values span `dynamic_range`.
pub fn evaluate_arrays(
    pred: &Array4<f32>,
    gt: &Array4<f32>,
    dynamic_range: f64,
) -> Result<QualityReport, MetricError> {
    if pred.dim() != gt.dim() {
        return Err(MetricError::ShapeMismatch(format!(
            "pred {:?} vs gt {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let (t, h, w, c) = pred.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricError::Invalid(format!(
            "frames must be at least {0}x{0} for SSIM, got {1}x{2}",
            SSIM_WINDOW, h, w
        )));
    }

    let mut abs_sum = 0.0f64;
    let mut sq_sum = 0.0f64;
    for (p, g) in pred.iter().zip(gt.iter()) {
        let d = f64::from(*p) - f64::from(*g);
        abs_sum += d.abs();
        sq_sum += d * d;
    }
    let n = pred.len() as f64;
    let l1 = abs_sum / n / dynamic_range;
    let mse = sq_sum / n;
    let psnr = if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (dynamic_range * dynamic_range / mse).log10()
    };

    let mut ssim_sum = 0.0;
    for ti in 0..t {
        for ci in 0..c {
            let xp = Array2::from_shape_fn((h, w), |(i, j)| f64::from(pred[[ti, i, j, ci]]));
            let yp = Array2::from_shape_fn((h, w), |(i, j)| f64::from(gt[[ti, i, j, ci]]));
            ssim_sum += ssim_plane(&xp, &yp, dynamic_range);
        }
    }
    let ssim = ssim_sum / (t * c) as f64;

    Ok(QualityReport { l1, ssim, psnr })
}

/// Evaluate a predicted sequence against ground truth sharing its shape and
/// value range.
pub fn evaluate_pair(
    pred: &FrameSequence,
    gt: &FrameSequence,
) -> Result<QualityReport, MetricError> {
    if pred.dim() != gt.dim() {
        return Err(MetricError::ShapeMismatch(format!(
            "pred {:?} vs gt {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    if pred.value_range() != gt.value_range() {
        return Err(MetricError::RangeMismatch(format!(
            "pred {:?} vs gt {:?}",
            pred.value_range(),
            gt.value_range()
        )));
    }
    evaluate_arrays(
        pred.data(),
        gt.data(),
        f64::from(pred.value_range().width()),
    )
}
