//! Scalar-generic warp kernels with hand-derived adjoints.
//!
//! Every kernel here is a pure function plus an explicit backward pass. They
//! are generic over the float type: the model tape runs them in `f32`, the
//! finite-difference oracles instantiate the identical code in `f64`.
//!
//! Conventions:
//! - images are `[T, H, W, C]`, disparity maps `[T, H, W]`
//! - shift stacks are `[T, D, H, W, C]` with `stack[t, d, i, j] = src[t, i, j - shift_d]`
//!   (border-replicated), so a positive shift moves content to the right
//! - warping samples to the right for positive disparity:
//!   `out[t, i, j] = src[t, i, j + disp[t, i, j]]` via bilinear weights, with a
//!   validity mask marking sample columns inside `[0, W-1]`
//! - at exactly integer sample positions the bilinear weights are `(1, 0)` and
//!   the disparity sub-gradient uses the right-neighbor difference

use ndarray::{Array3, Array4, Array5, ArrayView3, ArrayView4, ArrayView5};
use num_traits::Float;

/// Float scalar the kernels are generic over.
pub trait Scalar: Float + std::fmt::Debug + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn from_usize(v: usize) -> Self;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn from_usize(v: usize) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn from_usize(v: usize) -> Self {
        v as f64
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WarpError {
    #[error("shift list must be non-empty and strictly increasing")]
    BadShifts,
    #[error("|shift| = {shift} must be smaller than width {width}")]
    ShiftTooLarge { shift: i32, width: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("probability volume invalid: {0}")]
    BadProbs(String),
    #[error("disparity contains non-finite values")]
    NonFiniteDisparity,
    #[error("mask values must be exactly 0 or 1")]
    BadMask,
    #[error("{0}")]
    Invalid(String),
}

pub fn validate_shifts(shifts: &[i32], width: usize) -> Result<(), WarpError> {
    if shifts.is_empty() || shifts.windows(2).any(|p| p[0] >= p[1]) {
        return Err(WarpError::BadShifts);
    }
    for &s in shifts {
        if s.unsigned_abs() as usize >= width {
            return Err(WarpError::ShiftTooLarge {
                shift: s,
                width,
            });
        }
    }
    Ok(())
}

/// Horizontally shifted copies of the input with border replication:
/// `out[t, d, i, j, c] = src[t, i, clamp(j - shift_d), c]`.
pub fn shift_stack_forward<S: Scalar>(
    src: ArrayView4<'_, S>,
    shifts: &[i32],
) -> Result<Array5<S>, WarpError> {
    let (t, h, w, c) = src.dim();
    validate_shifts(shifts, w)?;
    let d = shifts.len();
    let mut out = Array5::zeros((t, d, h, w, c));
    for ti in 0..t {
        for (di, &s) in shifts.iter().enumerate() {
            for i in 0..h {
                for j in 0..w {
                    let sj = (j as i64 - s as i64).clamp(0, w as i64 - 1) as usize;
                    for ci in 0..c {
                        out[[ti, di, i, j, ci]] = src[[ti, i, sj, ci]];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`shift_stack_forward`] with respect to the source.
pub fn shift_stack_backward<S: Scalar>(
    grad_out: ArrayView5<'_, S>,
    shifts: &[i32],
) -> Array4<S> {
    let (t, d, h, w, c) = grad_out.dim();
    let mut grad_src = Array4::zeros((t, h, w, c));
    for ti in 0..t {
        for di in 0..d {
            let s = shifts[di];
            for i in 0..h {
                for j in 0..w {
                    let sj = (j as i64 - s as i64).clamp(0, w as i64 - 1) as usize;
                    for ci in 0..c {
                        let g = grad_out[[ti, di, i, j, ci]];
                        grad_src[[ti, i, sj, ci]] = grad_src[[ti, i, sj, ci]] + g;
                    }
                }
            }
        }
    }
    grad_src
}

/// Check a probability volume `[T, H, W, D]`: non-negative, per-pixel sum
/// within `tol` of one.
pub fn validate_probs<S: Scalar>(probs: ArrayView4<'_, S>, tol: f64) -> Result<(), WarpError> {
    let (t, h, w, _d) = probs.dim();
    for ti in 0..t {
        for i in 0..h {
            for j in 0..w {
                let mut sum = S::zero();
                for d in 0..probs.dim().3 {
                    let p = probs[[ti, i, j, d]];
                    if p < S::zero() {
                        return Err(WarpError::BadProbs(format!(
                            "negative probability at [{}, {}, {}, {}]",
                            ti, i, j, d
                        )));
                    }
                    sum = sum + p;
                }
                if (sum - S::one()).abs() > S::from_f64(tol) {
                    return Err(WarpError::BadProbs(format!(
                        "per-pixel sum {:?} at [{}, {}, {}] not within {} of 1",
                        sum, ti, i, j, tol
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Convex per-pixel combination of shifted copies:
/// `out[t, i, j, c] = sum_d stack[t, d, i, j, c] * probs[t, i, j, d]`.
pub fn implicit_blend_forward<S: Scalar>(
    stack: ArrayView5<'_, S>,
    probs: ArrayView4<'_, S>,
) -> Result<Array4<S>, WarpError> {
    let (t, d, h, w, c) = stack.dim();
    if probs.dim() != (t, h, w, d) {
        return Err(WarpError::ShapeMismatch(format!(
            "stack {:?} vs probs {:?}",
            stack.dim(),
            probs.dim()
        )));
    }
    let mut out = Array4::zeros((t, h, w, c));
    for ti in 0..t {
        for i in 0..h {
            for j in 0..w {
                for ci in 0..c {
                    let mut acc = S::zero();
                    for di in 0..d {
                        acc = acc + stack[[ti, di, i, j, ci]] * probs[[ti, i, j, di]];
                    }
                    out[[ti, i, j, ci]] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`implicit_blend_forward`] with respect to stack and probs.
pub fn implicit_blend_backward<S: Scalar>(
    grad_out: ArrayView4<'_, S>,
    stack: ArrayView5<'_, S>,
    probs: ArrayView4<'_, S>,
) -> (Array5<S>, Array4<S>) {
    let (t, d, h, w, c) = stack.dim();
    let mut grad_stack = Array5::zeros((t, d, h, w, c));
    let mut grad_probs = Array4::zeros((t, h, w, d));
    for ti in 0..t {
        for i in 0..h {
            for j in 0..w {
                for di in 0..d {
                    let p = probs[[ti, i, j, di]];
                    let mut gp = S::zero();
                    for ci in 0..c {
                        let g = grad_out[[ti, i, j, ci]];
                        gp = gp + g * stack[[ti, di, i, j, ci]];
                        grad_stack[[ti, di, i, j, ci]] = g * p;
                    }
                    grad_probs[[ti, i, j, di]] = gp;
                }
            }
        }
    }
    (grad_stack, grad_probs)
}

/// Bilinear horizontal warp. `out[t, i, j] = src[t, i, j + disp[t, i, j]]`,
/// `valid = 1` iff the sample column lies in `[0, W-1]`. Out-of-range samples
/// clamp to the border (their value is still produced; the mask is how
/// downstream composition treats them).
pub fn warp_horizontal_forward<S: Scalar>(
    src: ArrayView4<'_, S>,
    disp: ArrayView3<'_, S>,
) -> Result<(Array4<S>, Array3<S>), WarpError> {
    let (t, h, w, c) = src.dim();
    if disp.dim() != (t, h, w) {
        return Err(WarpError::ShapeMismatch(format!(
            "src {:?} vs disparity {:?}",
            src.dim(),
            disp.dim()
        )));
    }
    if disp.iter().any(|v| !v.is_finite()) {
        return Err(WarpError::NonFiniteDisparity);
    }
    let mut out = Array4::zeros((t, h, w, c));
    let mut valid = Array3::zeros((t, h, w));
    let wm1 = S::from_usize(w - 1);
    for ti in 0..t {
        for i in 0..h {
            for j in 0..w {
                let xf = S::from_usize(j) + disp[[ti, i, j]];
                let inside = xf >= S::zero() && xf <= wm1;
                if inside {
                    valid[[ti, i, j]] = S::one();
                }
                let xc = xf.max(S::zero()).min(wm1);
                let x0 = xc.floor();
                let fx = xc - x0;
                let x0i = num_traits::cast::<S, i64>(x0).unwrap() as usize;
                let x1i = (x0i + 1).min(w - 1);
                for ci in 0..c {
                    let v0 = src[[ti, i, x0i, ci]];
                    let v1 = src[[ti, i, x1i, ci]];
                    out[[ti, i, j, ci]] = v0 * (S::one() - fx) + v1 * fx;
                }
            }
        }
    }
    Ok((out, valid))
}

/// Gradients of [`warp_horizontal_forward`] with respect to source pixels and
/// disparity, via the bilinear sub-gradient. At integer sample positions the
/// disparity gradient is the right-neighbor difference; outside the image it
/// is zero (the clamp is flat).
pub fn warp_horizontal_backward<S: Scalar>(
    grad_out: ArrayView4<'_, S>,
    src: ArrayView4<'_, S>,
    disp: ArrayView3<'_, S>,
) -> (Array4<S>, Array3<S>) {
    let (t, h, w, c) = src.dim();
    let mut grad_src = Array4::zeros((t, h, w, c));
    let mut grad_disp = Array3::zeros((t, h, w));
    let wm1 = S::from_usize(w - 1);
    for ti in 0..t {
        for i in 0..h {
            for j in 0..w {
                let xf = S::from_usize(j) + disp[[ti, i, j]];
                let inside = xf >= S::zero() && xf <= wm1;
                let xc = xf.max(S::zero()).min(wm1);
                let x0 = xc.floor();
                let fx = xc - x0;
                let x0i = num_traits::cast::<S, i64>(x0).unwrap() as usize;
                let x1i = (x0i + 1).min(w - 1);
                let mut gd = S::zero();
                for ci in 0..c {
                    let g = grad_out[[ti, i, j, ci]];
                    grad_src[[ti, i, x0i, ci]] =
                        grad_src[[ti, i, x0i, ci]] + g * (S::one() - fx);
                    grad_src[[ti, i, x1i, ci]] = grad_src[[ti, i, x1i, ci]] + g * fx;
                    if inside {
                        gd = gd + g * (src[[ti, i, x1i, ci]] - src[[ti, i, x0i, ci]]);
                    }
                }
                grad_disp[[ti, i, j]] = gd;
            }
        }
    }
    (grad_src, grad_disp)
}

fn mask_bit<S: Scalar>(v: S) -> Result<bool, WarpError> {
    if v == S::zero() {
        Ok(false)
    } else if v == S::one() {
        Ok(true)
    } else {
        Err(WarpError::BadMask)
    }
}

/// Selector masks for occlusion-aware composition.
///
/// Layer 0 keeps its warped mask. Each later layer claims only pixels not yet
/// covered (accumulated OR of warped masks and selectors so far) that the
/// previous layer's warp could reach. Selectors are pairwise disjoint by
/// construction.
pub fn compose_selectors<S: Scalar>(masks: ArrayView4<'_, S>) -> Result<Array4<S>, WarpError> {
    let (d, t, h, w) = masks.dim();
    let mut selectors = Array4::zeros((d, t, h, w));
    for ti in 0..t {
        for i in 0..h {
            for j in 0..w {
                let mut total = mask_bit(masks[[0, ti, i, j]])?;
                selectors[[0, ti, i, j]] = masks[[0, ti, i, j]];
                let mut prev_selector = total;
                for di in 1..d {
                    let wm = mask_bit(masks[[di, ti, i, j]])?;
                    let wm_prev = mask_bit(masks[[di - 1, ti, i, j]])?;
                    total = total || wm || prev_selector;
                    let lm = !total && wm_prev;
                    if lm {
                        selectors[[di, ti, i, j]] = S::one();
                    }
                    prev_selector = lm;
                }
            }
        }
    }
    Ok(selectors)
}

/// Signed selector masks for the alternative composition: layer 0 keeps its
/// mask; later layers take `or(mask_i, selector_{i-1}) - mask_{i-1}`, so
/// values fall in `{-1, 0, 1}` and layers may cancel each other.
pub fn compose_selectors_signed<S: Scalar>(
    masks: ArrayView4<'_, S>,
) -> Result<Array4<S>, WarpError> {
    let (d, t, h, w) = masks.dim();
    let mut selectors = Array4::zeros((d, t, h, w));
    for ti in 0..t {
        for i in 0..h {
            for j in 0..w {
                selectors[[0, ti, i, j]] = masks[[0, ti, i, j]];
                mask_bit(masks[[0, ti, i, j]])?;
                let mut prev: i32 = if masks[[0, ti, i, j]] == S::one() { 1 } else { 0 };
                for di in 1..d {
                    let wm = mask_bit(masks[[di, ti, i, j]])? as i32;
                    let wm_prev = mask_bit(masks[[di - 1, ti, i, j]])? as i32;
                    let total = ((wm != 0) || (prev != 0)) as i32;
                    let lm = total - wm_prev;
                    selectors[[di, ti, i, j]] = S::from_f64(f64::from(lm));
                    prev = lm;
                }
            }
        }
    }
    Ok(selectors)
}

/// `out[t, i, j, c] = sum_d selectors[d, t, i, j] * images[d, t, i, j, c]`.
pub fn apply_selectors<S: Scalar>(
    images: ArrayView5<'_, S>,
    selectors: ArrayView4<'_, S>,
) -> Array4<S> {
    let (d, t, h, w, c) = images.dim();
    let mut out = Array4::zeros((t, h, w, c));
    for di in 0..d {
        for ti in 0..t {
            for i in 0..h {
                for j in 0..w {
                    let s = selectors[[di, ti, i, j]];
                    if s != S::zero() {
                        for ci in 0..c {
                            out[[ti, i, j, ci]] =
                                out[[ti, i, j, ci]] + s * images[[di, ti, i, j, ci]];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of [`apply_selectors`] with respect to the images (selectors are
/// step functions of the masks and carry no gradient).
pub fn apply_selectors_backward<S: Scalar>(
    grad_out: ArrayView4<'_, S>,
    selectors: ArrayView4<'_, S>,
    c: usize,
) -> Array5<S> {
    let (d, t, h, w) = selectors.dim();
    let mut grad_images = Array5::zeros((d, t, h, w, c));
    for di in 0..d {
        for ti in 0..t {
            for i in 0..h {
                for j in 0..w {
                    let s = selectors[[di, ti, i, j]];
                    if s != S::zero() {
                        for ci in 0..c {
                            grad_images[[di, ti, i, j, ci]] = s * grad_out[[ti, i, j, ci]];
                        }
                    }
                }
            }
        }
    }
    grad_images
}

/// 3x3 median filter with border replication. Returns the filtered image and
/// the flat source coordinates `(si * W + sj)` of each chosen median, which
/// the backward pass routes gradients to.
pub fn median_blur3_forward<S: Scalar>(
    src: ArrayView4<'_, S>,
) -> Result<(Array4<S>, Array4<usize>), WarpError> {
    let (t, h, w, c) = src.dim();
    if h < 3 || w < 3 {
        return Err(WarpError::Invalid(format!(
            "median blur needs H, W >= 3, got {}x{}",
            h, w
        )));
    }
    let mut out = Array4::zeros((t, h, w, c));
    let mut argsrc = Array4::zeros((t, h, w, c));
    let mut window: [(S, usize); 9] = [(S::zero(), 0); 9];
    for ti in 0..t {
        for i in 0..h {
            for j in 0..w {
                for ci in 0..c {
                    let mut k = 0;
                    for di in -1i64..=1 {
                        for dj in -1i64..=1 {
                            let si = (i as i64 + di).clamp(0, h as i64 - 1) as usize;
                            let sj = (j as i64 + dj).clamp(0, w as i64 - 1) as usize;
                            window[k] = (src[[ti, si, sj, ci]], si * w + sj);
                            k += 1;
                        }
                    }
                    window.sort_by(|a, b| {
                        a.0.partial_cmp(&b.0)
                            .unwrap()
                            .then_with(|| a.1.cmp(&b.1))
                    });
                    out[[ti, i, j, ci]] = window[4].0;
                    argsrc[[ti, i, j, ci]] = window[4].1;
                }
            }
        }
    }
    Ok((out, argsrc))
}

/// Route output gradients to the source pixels selected as medians.
pub fn median_blur3_backward<S: Scalar>(
    grad_out: ArrayView4<'_, S>,
    argsrc: &Array4<usize>,
) -> Array4<S> {
    let (t, h, w, c) = grad_out.dim();
    let mut grad_src = Array4::zeros((t, h, w, c));
    for ti in 0..t {
        for i in 0..h {
            for j in 0..w {
                for ci in 0..c {
                    let flat = argsrc[[ti, i, j, ci]];
                    let (si, sj) = (flat / w, flat % w);
                    grad_src[[ti, si, sj, ci]] =
                        grad_src[[ti, si, sj, ci]] + grad_out[[ti, i, j, ci]];
                }
            }
        }
    }
    grad_src
}
