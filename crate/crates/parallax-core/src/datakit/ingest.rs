//! Frame-directory ingest: `frame_%06d.png` files in and out.

use super::{split_sbs_sequence, DataError, Layout, ManifestEntry};
use crate::frame::{FrameSequence, ValueRange};
use ndarray::{s, Array3, Array4};
use std::path::Path;

/// Format a frame filename for index `i`.
pub fn frame_name(i: usize) -> String {
    format!("frame_{:06}.png", i)
}

fn load_png(path: &Path) -> Result<Array3<f32>, DataError> {
    let img = image::open(path)
        .map_err(|e| DataError::Image {
            path: path.display().to_string(),
            source: e,
        })?
        .into_rgb8();
    let (w, h) = img.dimensions();
    let mut arr = Array3::zeros((h as usize, w as usize, 3));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            arr[[y as usize, x as usize, c]] = f32::from(px.0[c]);
        }
    }
    Ok(arr)
}

fn save_png(path: &Path, frame: ndarray::ArrayView3<'_, f32>) -> Result<(), DataError> {
    let (h, w, c) = frame.dim();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            let px = if c == 1 {
                let v = frame[[i, j, 0]].round().clamp(0.0, 255.0) as u8;
                [v, v, v]
            } else {
                [
                    frame[[i, j, 0]].round().clamp(0.0, 255.0) as u8,
                    frame[[i, j, 1]].round().clamp(0.0, 255.0) as u8,
                    frame[[i, j, 2]].round().clamp(0.0, 255.0) as u8,
                ]
            };
            img.put_pixel(j as u32, i as u32, image::Rgb(px));
        }
    }
    img.save(path).map_err(|e| DataError::Image {
        path: path.display().to_string(),
        source: e,
    })
}

/// Load frames `[start, end)` from a directory of `frame_%06d.png` files.
///
/// Fails naming the first missing index, and on any dimension change across
/// frames.
pub fn load_frame_dir(
    dir: impl AsRef<Path>,
    start: usize,
    end: usize,
) -> Result<FrameSequence, DataError> {
    let dir = dir.as_ref();
    assert!(end > start, "empty frame span");
    let mut frames: Option<Array4<f32>> = None;
    for (k, i) in (start..end).enumerate() {
        let path = dir.join(frame_name(i));
        if !path.exists() {
            return Err(DataError::MissingFrame(i));
        }
        let frame = load_png(&path)?;
        let (h, w, c) = frame.dim();
        let store = frames.get_or_insert_with(|| Array4::zeros((end - start, h, w, c)));
        if store.dim().1 != h || store.dim().2 != w {
            return Err(DataError::DimensionMismatch(format!(
                "frame {} is {}x{}, expected {}x{}",
                i,
                h,
                w,
                store.dim().1,
                store.dim().2
            )));
        }
        store.slice_mut(s![k, .., .., ..]).assign(&frame);
    }
    Ok(FrameSequence::new(frames.unwrap(), ValueRange::UNIT8)?)
}

/// Write a sequence as `frame_%06d.png` files starting at index `start`.
pub fn write_frame_dir(
    dir: impl AsRef<Path>,
    seq: &FrameSequence,
    start: usize,
) -> Result<(), DataError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    for t in 0..seq.len() {
        save_png(&dir.join(frame_name(start + t)), seq.frame(t))?;
    }
    Ok(())
}

/// Ingest a manifest entry from a directory of extracted frames, returning
/// the split left/right sequences.
///
/// For `side-by-side` sources the frames on disk are full-width composites
/// and the entry must honor the intro skip; for `separate` sources the left
/// and right frames live in `left/` and `right/` subdirectories.
pub fn ingest_frames(
    entry: &ManifestEntry,
    frame_dir: impl AsRef<Path>,
) -> Result<(FrameSequence, FrameSequence), DataError> {
    entry.validate()?;
    let dir = frame_dir.as_ref();
    match entry.layout {
        Layout::SideBySide => {
            let seq = load_frame_dir(dir, entry.start_frame, entry.end_frame)?;
            split_sbs_sequence(&seq)
        }
        Layout::Separate => {
            let left = load_frame_dir(dir.join("left"), entry.start_frame, entry.end_frame)?;
            let right = load_frame_dir(dir.join("right"), entry.start_frame, entry.end_frame)?;
            if left.dim() != right.dim() {
                return Err(DataError::DimensionMismatch(format!(
                    "left {:?} vs right {:?}",
                    left.dim(),
                    right.dim()
                )));
            }
            Ok((left, right))
        }
    }
}
