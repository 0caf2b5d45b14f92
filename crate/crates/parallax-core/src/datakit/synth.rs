//! Synthetic stereo scenes with exact ground truth.
//!
//! Scenes are stacks of fronto-parallel textured planes, nearest first, over
//! a full-canvas background plane. The right view is constructed by shifting
//! each plane horizontally by its integer disparity and compositing with a
//! z-buffer, so the per-pixel warp map and occlusion mask are exact by
//! construction rather than estimated.
//!
//! Textures are band-limited procedural noise: smooth and non-constant, so
//! bilinear warping and finite-difference gradient checks stay
//! well-conditioned (hard edges sit exactly on the piecewise-linear kinks of
//! the sampler).

use super::DataError;
use crate::frame::{FrameSequence, ValueRange};
use crate::rng::derive_rng;
use ndarray::{Array3, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One fronto-parallel plane. `rect` is `[y, x, h, w]` in continuous canvas
/// coordinates at t = 0; `None` means full canvas (required for the farthest
/// plane so every pixel has a defined surface).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub disparity: i32,
    /// (horizontal, vertical) velocity in pixels/frame.
    #[serde(default)]
    pub velocity: (f64, f64),
    pub texture_seed: u64,
    #[serde(default)]
    pub rect: Option<[f64; 4]>,
}

/// A layered-plane scene. Planes are ordered nearest first; nearer planes
/// occlude farther ones and must have strictly larger disparity magnitude.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    /// (H, W)
    pub canvas: (usize, usize),
    /// T
    pub length: usize,
    pub planes: Vec<PlaneSpec>,
}

impl SyntheticSceneSpec {
    pub fn num_layers(&self) -> usize {
        self.planes.len()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let (h, w) = self.canvas;
        if h < 8 || w < 8 {
            return Err(DataError::BadSceneSpec(format!(
                "canvas {}x{} too small (need >= 8x8)",
                h, w
            )));
        }
        if self.length < 1 {
            return Err(DataError::BadSceneSpec("length must be >= 1".into()));
        }
        if self.planes.is_empty() {
            return Err(DataError::BadSceneSpec("need at least one plane".into()));
        }
        let max_disp = (w / 8) as i32;
        for (i, p) in self.planes.iter().enumerate() {
            if p.disparity.abs() > max_disp {
                return Err(DataError::BadSceneSpec(format!(
                    "plane {} disparity {} exceeds W/8 = {}",
                    i, p.disparity, max_disp
                )));
            }
        }
        for pair in self.planes.windows(2) {
            if pair[0].disparity.abs() <= pair[1].disparity.abs() {
                return Err(DataError::BadSceneSpec(format!(
                    "disparity magnitudes must strictly decrease with depth ({} then {})",
                    pair[0].disparity, pair[1].disparity
                )));
            }
        }
        if self.planes.last().unwrap().rect.is_some() {
            return Err(DataError::BadSceneSpec(
                "farthest plane must be full-canvas (rect = null)".into(),
            ));
        }
        Ok(())
    }

    /// A randomized spec for oracle tests: `num_planes - 1` moving rectangles
    /// over a full-canvas background, distinct descending disparity
    /// magnitudes with random signs. Deterministic per seed.
    pub fn random(seed: u64, canvas: (usize, usize), length: usize, num_planes: usize) -> Self {
        assert!(num_planes >= 1);
        let (h, w) = canvas;
        let mut rng = derive_rng(seed, "scene_spec", 0);
        let max_mag = ((w / 8) as i32).max(1);
        // Distinct magnitudes, descending; background gets the smallest.
        let mut mags: Vec<i32> = Vec::new();
        while mags.len() < num_planes {
            let m = rng.gen_range(0..=max_mag);
            if !mags.contains(&m) {
                mags.push(m);
            }
        }
        mags.sort_unstable_by(|a, b| b.cmp(a));
        let mut planes = Vec::with_capacity(num_planes);
        for (i, mag) in mags.iter().enumerate() {
            let sign = if rng.gen_bool(0.5) { 1 } else { -1 };
            let last = i + 1 == num_planes;
            let rect = if last {
                None
            } else {
                let rh = rng.gen_range(h as f64 * 0.25..h as f64 * 0.6);
                let rw = rng.gen_range(w as f64 * 0.25..w as f64 * 0.6);
                let ry = rng.gen_range(0.0..h as f64 - rh);
                let rx = rng.gen_range(0.0..w as f64 - rw);
                Some([ry, rx, rh, rw])
            };
            planes.push(PlaneSpec {
                disparity: sign * *mag,
                velocity: (rng.gen_range(-1.5..1.5), rng.gen_range(-0.75..0.75)),
                texture_seed: rng.gen(),
                rect,
            });
        }
        SyntheticSceneSpec {
            canvas,
            length,
            planes,
        }
    }
}

/// Smooth periodic noise: a seeded sum of low-frequency sinusoids, evaluated
/// at continuous coordinates and mapped into `[0, 1]`.
#[derive(Debug, Clone)]
pub struct NoiseField {
    components: Vec<(f64, f64, f64, f64)>, // (amplitude, fy, fx, phase)
    norm: f64,
}

impl NoiseField {
    pub fn new(seed: u64, max_freq: f64) -> Self {
        let mut rng = derive_rng(seed, "noise_field", 0);
        let n = 6;
        let mut components = Vec::with_capacity(n);
        let mut norm = 0.0;
        for _ in 0..n {
            let amp: f64 = rng.gen_range(0.4..1.0);
            let fy = rng.gen_range(-max_freq..max_freq);
            let fx = rng.gen_range(-max_freq..max_freq);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            norm += amp;
            components.push((amp, fy, fx, phase));
        }
        NoiseField { components, norm }
    }

    /// Evaluate at continuous coordinates; result in [0, 1].
    pub fn eval(&self, y: f64, x: f64) -> f64 {
        let mut v = 0.0;
        for &(amp, fy, fx, phase) in &self.components {
            v += amp * (std::f64::consts::TAU * (fy * y + fx * x) + phase).sin();
        }
        0.5 + 0.5 * (v / self.norm)
    }
}

/// A smooth procedural test image `[H, W, C]` with values in `[0, 1]`.
pub fn band_limited_image(seed: u64, h: usize, w: usize, c: usize) -> Array3<f32> {
    let fields: Vec<NoiseField> = (0..c)
        .map(|k| NoiseField::new(seed.wrapping_add(k as u64 * 7919), 0.11))
        .collect();
    Array3::from_shape_fn((h, w, c), |(i, j, k)| {
        fields[k].eval(i as f64, j as f64) as f32
    })
}

/// Everything a synthetic scene knows about itself.
///
/// The primary ground-truth maps live on the right-view grid: `gt_disparity`
/// is the map `D` with `right(i, j) = left(i, j + D(i, j))`, and
/// `gt_occlusion` marks right-view pixels whose left-image sample does not
/// show the same surface (so the equality cannot hold). The `left_*` maps
/// carry the same information on the left-view grid, which is what flow
/// fields are indexed by.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub left: FrameSequence,
    pub right: FrameSequence,
    /// Right-grid warp map, `[T, H, W]`.
    pub gt_disparity: Array3<f32>,
    /// Right-grid occlusion, `[T, H, W]`.
    pub gt_occlusion: Array3<bool>,
    /// Left-grid surface disparity, `[T, H, W]`.
    pub left_disparity: Array3<f32>,
    /// Left-grid "invisible in the right view", `[T, H, W]`.
    pub left_occlusion: Array3<bool>,
}

const TEX_LO: f64 = 10.0;
const TEX_HI: f64 = 245.0;

struct Plane {
    disparity: i32,
    velocity: (f64, f64),
    rect: Option<[f64; 4]>,
    tex: [NoiseField; 3],
}

impl Plane {
    fn covers(&self, t: usize, y: f64, x: f64) -> bool {
        match self.rect {
            None => true,
            Some([ry, rx, rh, rw]) => {
                let oy = ry + self.velocity.1 * t as f64;
                let ox = rx + self.velocity.0 * t as f64;
                y >= oy && y < oy + rh && x >= ox && x < ox + rw
            }
        }
    }

    fn sample(&self, t: usize, y: f64, x: f64, c: usize) -> f64 {
        let (vx, vy) = self.velocity;
        let ty = y - vy * t as f64;
        let tx = x - vx * t as f64;
        TEX_LO + (TEX_HI - TEX_LO) * self.tex[c].eval(ty, tx)
    }
}

/// Render a scene: left and right views plus exact disparity/occlusion maps.
/// Deterministic for a fixed `(spec, seed)` pair.
pub fn generate_synthetic_stereo(
    spec: &SyntheticSceneSpec,
    seed: u64,
) -> Result<SyntheticScene, DataError> {
    spec.validate()?;
    let (h, w) = spec.canvas;
    let t_len = spec.length;
    let planes: Vec<Plane> = spec
        .planes
        .iter()
        .map(|p| {
            let base = seed ^ p.texture_seed.wrapping_mul(0x9e3779b97f4a7c15);
            Plane {
                disparity: p.disparity,
                velocity: p.velocity,
                rect: p.rect,
                tex: [
                    NoiseField::new(base.wrapping_add(1), 0.11),
                    NoiseField::new(base.wrapping_add(2), 0.11),
                    NoiseField::new(base.wrapping_add(3), 0.11),
                ],
            }
        })
        .collect();

    let mut left = Array4::zeros((t_len, h, w, 3));
    let mut right = Array4::zeros((t_len, h, w, 3));
    let mut gt_disparity = Array3::zeros((t_len, h, w));
    let mut gt_occlusion = Array3::from_elem((t_len, h, w), false);
    let mut left_disparity = Array3::zeros((t_len, h, w));
    let mut left_occlusion = Array3::from_elem((t_len, h, w), false);
    // nearest plane covering each pixel, per view
    let mut left_id = ndarray::Array2::<usize>::zeros((h, w));
    let mut right_id = ndarray::Array2::<usize>::from_elem((h, w), usize::MAX);

    let nearest_cover = |t: usize, y: f64, x: f64| -> usize {
        planes
            .iter()
            .position(|p| p.covers(t, y, x))
            .expect("background covers everything")
    };

    for t in 0..t_len {
        // Left view and per-pixel surface ids.
        for i in 0..h {
            for j in 0..w {
                let p = nearest_cover(t, i as f64, j as f64);
                left_id[[i, j]] = p;
                left_disparity[[t, i, j]] = planes[p].disparity as f32;
                for c in 0..3 {
                    left[[t, i, j, c]] = planes[p].sample(t, i as f64, j as f64, c) as f32;
                }
            }
        }
        // Right view: plane p covers right pixel (i, j) iff its left footprint
        // covers (i, j + d_p). Copy the stored left value whenever the left
        // view shows the same surface there, so the warp round trip is
        // bit-exact; otherwise (left-occluded) evaluate the plane texture and
        // mark the pixel occluded.
        let bg_disp = planes.last().unwrap().disparity;
        for i in 0..h {
            for j in 0..w {
                let hit = planes
                    .iter()
                    .position(|p| p.covers(t, i as f64, (j as i64 + p.disparity as i64) as f64));
                match hit {
                    Some(p) => {
                        right_id[[i, j]] = p;
                        let d = planes[p].disparity;
                        let jl = j as i64 + d as i64;
                        gt_disparity[[t, i, j]] = d as f32;
                        let visible_in_left =
                            jl >= 0 && (jl as usize) < w && left_id[[i, jl as usize]] == p;
                        if visible_in_left {
                            for c in 0..3 {
                                right[[t, i, j, c]] = left[[t, i, jl as usize, c]];
                            }
                        } else {
                            gt_occlusion[[t, i, j]] = true;
                            for c in 0..3 {
                                right[[t, i, j, c]] =
                                    planes[p].sample(t, i as f64, jl as f64, c) as f32;
                            }
                        }
                    }
                    None => {
                        // No surface: the band exposed at a border when the
                        // background shifts. Replicate the nearest valid
                        // column and mark occluded.
                        right_id[[i, j]] = planes.len() - 1;
                        gt_disparity[[t, i, j]] = bg_disp as f32;
                        gt_occlusion[[t, i, j]] = true;
                        let jl = (j as i64 + bg_disp as i64).clamp(0, w as i64 - 1) as usize;
                        for c in 0..3 {
                            right[[t, i, j, c]] = left[[t, i, jl, c]];
                        }
                    }
                }
            }
        }
        // Left-grid occlusion: a left pixel is invisible in the right view if
        // its destination column leaves the canvas or lands where a different
        // surface wins the z-buffer.
        for i in 0..h {
            for j in 0..w {
                let p = left_id[[i, j]];
                let jr = j as i64 - planes[p].disparity as i64;
                let occ = if jr < 0 || jr >= w as i64 {
                    true
                } else {
                    right_id[[i, jr as usize]] != p
                };
                left_occlusion[[t, i, j]] = occ;
            }
        }
    }

    Ok(SyntheticScene {
        left: FrameSequence::new(left, ValueRange::UNIT8)?,
        right: FrameSequence::new(right, ValueRange::UNIT8)?,
        gt_disparity,
        gt_occlusion,
        left_disparity,
        left_occlusion,
    })
}
