//! Side-by-side frame splitting and stereo composites.

use super::DataError;
use crate::frame::FrameSequence;
use ndarray::{s, Array3, Array4, ArrayView3};

/// Split a side-by-side frame `[H, 2W, C]` into its left and right halves.
///
/// Left takes columns `[0, W)`, right takes `[W, 2W)`; pixels are copied
/// without resampling, so re-concatenating reproduces the input bit-exactly.
pub fn split_sbs_frame(frame: ArrayView3<'_, f32>) -> Result<(Array3<f32>, Array3<f32>), DataError> {
    let (_, w2, _) = frame.dim();
    if w2 % 2 != 0 {
        return Err(DataError::OddWidth(w2));
    }
    let w = w2 / 2;
    let left = frame.slice(s![.., ..w, ..]).to_owned();
    let right = frame.slice(s![.., w.., ..]).to_owned();
    Ok((left, right))
}

/// Split every frame of a side-by-side sequence.
pub fn split_sbs_sequence(seq: &FrameSequence) -> Result<(FrameSequence, FrameSequence), DataError> {
    let (t, h, w2, c) = seq.dim();
    if w2 % 2 != 0 {
        return Err(DataError::OddWidth(w2));
    }
    let w = w2 / 2;
    let mut left = Array4::zeros((t, h, w, c));
    let mut right = Array4::zeros((t, h, w, c));
    for ti in 0..t {
        let (l, r) = split_sbs_frame(seq.frame(ti))?;
        left.slice_mut(s![ti, .., .., ..]).assign(&l);
        right.slice_mut(s![ti, .., .., ..]).assign(&r);
    }
    let vr = seq.value_range();
    Ok((
        FrameSequence::new(left, vr)?.with_frame_rate(seq.frame_rate()),
        FrameSequence::new(right, vr)?.with_frame_rate(seq.frame_rate()),
    ))
}

/// Concatenate two frames horizontally (the inverse of [`split_sbs_frame`]).
pub fn hconcat(left: ArrayView3<'_, f32>, right: ArrayView3<'_, f32>) -> Result<Array3<f32>, DataError> {
    let (hl, wl, cl) = left.dim();
    let (hr, wr, cr) = right.dim();
    if hl != hr || cl != cr {
        return Err(DataError::DimensionMismatch(format!(
            "hconcat: left {}x{}x{} vs right {}x{}x{}",
            hl, wl, cl, hr, wr, cr
        )));
    }
    let mut out = Array3::zeros((hl, wl + wr, cl));
    out.slice_mut(s![.., ..wl, ..]).assign(&left);
    out.slice_mut(s![.., wl.., ..]).assign(&right);
    Ok(out)
}

/// Compose a red-cyan anaglyph: red from the left view, green and blue from
/// the right view.
pub fn make_anaglyph(left: ArrayView3<'_, f32>, right: ArrayView3<'_, f32>) -> Result<Array3<f32>, DataError> {
    if left.dim() != right.dim() {
        return Err(DataError::DimensionMismatch(format!(
            "anaglyph: {:?} vs {:?}",
            left.dim(),
            right.dim()
        )));
    }
    let (h, w, c) = left.dim();
    if c != 3 {
        return Err(DataError::DimensionMismatch(format!(
            "anaglyph needs 3 channels, got {}",
            c
        )));
    }
    let mut out = Array3::zeros((h, w, 3));
    out.slice_mut(s![.., .., 0]).assign(&left.slice(s![.., .., 0]));
    out.slice_mut(s![.., .., 1]).assign(&right.slice(s![.., .., 1]));
    out.slice_mut(s![.., .., 2]).assign(&right.slice(s![.., .., 2]));
    Ok(out)
}

/// Compose a side-by-side frame from a stereo pair.
pub fn make_sbs(left: ArrayView3<'_, f32>, right: ArrayView3<'_, f32>) -> Result<Array3<f32>, DataError> {
    hconcat(left, right)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn ramp(h: usize, w: usize, c: usize) -> Array3<f32> {
        Array3::from_shape_fn((h, w, c), |(i, j, k)| (i * w * c + j * c + k) as f32)
    }

    #[test]
    fn splits_block_constant_halves() {
        let mut f = Array3::zeros((4, 8, 3));
        f.slice_mut(s![.., ..4, ..]).fill(10.0);
        f.slice_mut(s![.., 4.., ..]).fill(20.0);
        let (l, r) = split_sbs_frame(f.view()).unwrap();
        assert!(l.iter().all(|&v| v == 10.0));
        assert!(r.iter().all(|&v| v == 20.0));
        assert_eq!(l.dim(), (4, 4, 3));
    }

    #[test]
    fn splits_1080p_sbs_dimensions() {
        let f = Array3::<f32>::zeros((8, 3840 / 16, 3)); // scaled-down aspect, even width
        let (l, r) = split_sbs_frame(f.view()).unwrap();
        assert_eq!(l.dim(), (8, 120, 3));
        assert_eq!(r.dim(), (8, 120, 3));
    }

    #[test]
    fn splits_columns_by_index() {
        let f = Array3::from_shape_fn((2, 6, 1), |(_, j, _)| j as f32);
        let (l, r) = split_sbs_frame(f.view()).unwrap();
        assert_eq!(l.slice(s![0, .., 0]).to_vec(), vec![0.0, 1.0, 2.0]);
        assert_eq!(r.slice(s![0, .., 0]).to_vec(), vec![3.0, 4.0, 5.0]);
    }

    #[test]
    fn rejects_odd_width() {
        let f = Array3::<f32>::zeros((4, 7, 3));
        assert!(matches!(split_sbs_frame(f.view()), Err(DataError::OddWidth(7))));
    }

    #[test]
    fn split_concat_roundtrip_is_bit_exact() {
        let f = ramp(6, 10, 3);
        let (l, r) = split_sbs_frame(f.view()).unwrap();
        let back = hconcat(l.view(), r.view()).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn anaglyph_identity_pair() {
        let f = ramp(4, 8, 3);
        let a = make_anaglyph(f.view(), f.view()).unwrap();
        assert_eq!(a, f);
    }

    #[test]
    fn anaglyph_routes_channels() {
        let mut l = Array3::zeros((4, 8, 3));
        l.slice_mut(s![.., .., 0]).fill(255.0);
        let mut r = Array3::zeros((4, 8, 3));
        r.slice_mut(s![.., .., 2]).fill(255.0);
        let a = make_anaglyph(l.view(), r.view()).unwrap();
        assert!(a.slice(s![.., .., 0]).iter().all(|&v| v == 255.0));
        assert!(a.slice(s![.., .., 1]).iter().all(|&v| v == 0.0));
        assert!(a.slice(s![.., .., 2]).iter().all(|&v| v == 255.0));
    }

    #[test]
    fn anaglyph_shifted_grayscale_offsets_red_from_cyan() {
        // grayscale pair, right shifted 2 px: red channel should equal the
        // unshifted gray while green/blue carry the shifted one.
        let w = 12;
        let gray = Array3::from_shape_fn((2, w, 3), |(_, j, _)| (j * 10) as f32);
        let shifted = Array3::from_shape_fn((2, w, 3), |(_, j, _)| {
            let js = j.saturating_sub(2);
            (js * 10) as f32
        });
        let a = make_anaglyph(gray.view(), shifted.view()).unwrap();
        for j in 2..w {
            assert_eq!(a[[0, j, 0]], (j * 10) as f32);
            assert_eq!(a[[0, j, 1]], ((j - 2) * 10) as f32);
            assert_eq!(a[[0, j, 2]], ((j - 2) * 10) as f32);
        }
    }

    #[test]
    fn anaglyph_rejects_mismatch() {
        let l = Array3::<f32>::zeros((4, 8, 3));
        let r = Array3::<f32>::zeros((4, 9, 3));
        assert!(make_anaglyph(l.view(), r.view()).is_err());
    }
}
