//! Soft split/composition patch embedding and windowed spatial-temporal
//! attention with temporal key/value striding.
//!
//! Soft split extracts overlapping patches and projects them to tokens; soft
//! composition inverse-projects and scatter-adds patch contributions, divided
//! by per-pixel coverage. Attention partitions the token grid into
//! non-overlapping windows; queries attend within their window across all
//! frames while keys/values come from a strided subset of frames.

use crate::autodiff::{Tape, Var};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttnError {
    #[error("token width {c} not divisible by {heads} heads")]
    HeadMismatch { c: usize, heads: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{0}")]
    Invalid(String),
}

/// Patch geometry for soft split / soft composition.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub patch: usize,
    pub stride: usize,
    pub pad: usize,
}

impl SplitSpec {
    /// Overlapping 3x3 patches at stride 2, padded so windows tile cleanly.
    pub fn default_3x3s2() -> Self {
        SplitSpec {
            patch: 3,
            stride: 2,
            pad: 1,
        }
    }

    pub fn token_grid(&self, h: usize, w: usize) -> (usize, usize) {
        crate::autodiff::unfold_out_dims(h, w, self.patch, self.stride, self.pad)
    }
}

/// Token grid metadata for a `[T, M, N, C]` embedding.
#[derive(Debug, Clone, Copy)]
pub struct TokenShape {
    pub t: usize,
    pub m: usize,
    pub n: usize,
    pub c: usize,
}

/// Windowed grid metadata for a `[T, m, n, h, w, C]` tensor.
#[derive(Debug, Clone, Copy)]
pub struct WindowShape {
    pub t: usize,
    pub m: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

/// Q/K/V/output projection weights for one attention block.
#[derive(Debug, Clone, Copy)]
pub struct AttnWeights {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Extract overlapping patches from `x: [T, C, H, W]`, flatten each patch and
/// project linearly to tokens `[T, M, N, C_z]`.
pub fn soft_split(
    tape: &Tape,
    x: Var,
    proj_w: Var, // [C*k*k, C_z]
    proj_b: Var, // [C_z]
    spec: SplitSpec,
) -> Result<(Var, TokenShape), AttnError> {
    let xs = tape.shape(x);
    if xs.len() != 4 {
        return Err(AttnError::ShapeMismatch(format!(
            "soft_split expects [T, C, H, W], got {:?}",
            xs
        )));
    }
    if spec.stride == 0 {
        return Err(AttnError::Invalid("stride must be positive".into()));
    }
    if spec.patch < spec.stride {
        return Err(AttnError::Invalid(
            "patch must be at least stride (overlapping patches)".into(),
        ));
    }
    let (t, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (m, n) = spec.token_grid(h, w);
    let ws = tape.shape(proj_w);
    if ws != [c * spec.patch * spec.patch, tape.shape(proj_b)[0]] {
        return Err(AttnError::ShapeMismatch(format!(
            "projection {:?} does not match patch dim {}",
            ws,
            c * spec.patch * spec.patch
        )));
    }
    let cz = ws[1];
    let patches = tape.unfold(x, spec.patch, spec.stride, spec.pad); // [T, L, C*k*k]
    let flat = tape.reshape(patches, &[t * m * n, c * spec.patch * spec.patch]);
    let tokens = tape.matmul(flat, proj_w);
    let tokens = tape.add_bcast(tokens, proj_b);
    let tokens = tape.reshape(tokens, &[t, m, n, cz]);
    Ok((
        tokens,
        TokenShape { t, m, n, c: cz },
    ))
}

/// Inverse of [`soft_split`]: project tokens back to patch pixels and gather
/// with coverage normalization into `[T, C, H, W]`.
pub fn soft_composition(
    tape: &Tape,
    tokens: Var,
    shape: TokenShape,
    proj_w: Var, // [C_z, C*k*k]
    proj_b: Var, // [C*k*k]
    spec: SplitSpec,
    out_c: usize,
    out_hw: (usize, usize),
) -> Result<Var, AttnError> {
    let (h, w) = out_hw;
    let (m, n) = spec.token_grid(h, w);
    if (m, n) != (shape.m, shape.n) {
        return Err(AttnError::ShapeMismatch(format!(
            "target {}x{} implies token grid {}x{}, embedding has {}x{}",
            h, w, m, n, shape.m, shape.n
        )));
    }
    let ws = tape.shape(proj_w);
    let ckk = out_c * spec.patch * spec.patch;
    if ws != [shape.c, ckk] {
        return Err(AttnError::ShapeMismatch(format!(
            "composition projection {:?} does not match [{} x {}]",
            ws, shape.c, ckk
        )));
    }
    let flat = tape.reshape(tokens, &[shape.t * m * n, shape.c]);
    let patches = tape.matmul(flat, proj_w);
    let patches = tape.add_bcast(patches, proj_b);
    let patches = tape.reshape(patches, &[shape.t, m * n, ckk]);
    Ok(tape.fold_mean(patches, out_c, h, w, spec.patch, spec.stride, spec.pad))
}

/// Partition a `[T, M, N, C]` token grid into non-overlapping `h x w`
/// windows, yielding `[T, m, n, h, w, C]`. The grid must tile exactly.
pub fn window_partition(
    tape: &Tape,
    tokens: Var,
    shape: TokenShape,
    win: (usize, usize),
) -> Result<(Var, WindowShape), AttnError> {
    let (wh, ww) = win;
    if shape.m % wh != 0 || shape.n % ww != 0 {
        return Err(AttnError::ShapeMismatch(format!(
            "token grid {}x{} not tiled by windows {}x{}",
            shape.m, shape.n, wh, ww
        )));
    }
    let (m, n) = (shape.m / wh, shape.n / ww);
    let split = tape.reshape(tokens, &[shape.t, m, wh, n, ww, shape.c]);
    let grid = tape.permute(split, &[0, 1, 3, 2, 4, 5]);
    Ok((
        grid,
        WindowShape {
            t: shape.t,
            m,
            n,
            h: wh,
            w: ww,
            c: shape.c,
        },
    ))
}

/// Inverse of [`window_partition`].
pub fn window_unpartition(tape: &Tape, grid: Var, ws: WindowShape) -> (Var, TokenShape) {
    let back = tape.permute(grid, &[0, 1, 3, 2, 4, 5]);
    let tokens = tape.reshape(back, &[ws.t, ws.m * ws.h, ws.n * ws.w, ws.c]);
    (
        tokens,
        TokenShape {
            t: ws.t,
            m: ws.m * ws.h,
            n: ws.n * ws.w,
            c: ws.c,
        },
    )
}

/// Key/value frame indices for a temporal stride.
pub fn strided_frames(t: usize, stride: usize) -> Vec<usize> {
    assert!(stride >= 1, "temporal stride must be >= 1");
    (0..t).step_by(stride).collect()
}

/// Pack `[T, m, n, h, w, C]` into per-window, per-head rows
/// `[m*n*heads, T*h*w, C/heads]` after a linear projection.
fn project_and_pack(
    tape: &Tape,
    grid: Var,
    ws: WindowShape,
    proj_w: Var,
    proj_b: Var,
    heads: usize,
) -> Var {
    let dh = ws.c / heads;
    let nt = ws.t * ws.h * ws.w;
    // [T,m,n,h,w,C] -> [m,n,T,h,w,C] -> [(m n T h w), C]
    let perm = tape.permute(grid, &[1, 2, 0, 3, 4, 5]);
    let flat = tape.reshape(perm, &[ws.m * ws.n * nt, ws.c]);
    let proj = tape.matmul(flat, proj_w);
    let proj = tape.add_bcast(proj, proj_b);
    // [(m n), T h w, heads, dh] -> [(m n), heads, T h w, dh] -> [B, N, dh]
    let heads_split = tape.reshape(proj, &[ws.m * ws.n, nt, heads, dh]);
    let heads_first = tape.permute(heads_split, &[0, 2, 1, 3]);
    tape.reshape(heads_first, &[ws.m * ws.n * heads, nt, dh])
}

/// Windowed multi-head attention. Queries come from `q_grid` over all frames;
/// keys and values come from `kv_grid` restricted to `kv_frames`. Output has
/// the query grid's shape.
pub fn st_attention(
    tape: &Tape,
    q_grid: Var,
    kv_grid: Var,
    q_shape: WindowShape,
    kv_shape: WindowShape,
    weights: &AttnWeights,
    heads: usize,
    kv_frames: &[usize],
) -> Result<Var, AttnError> {
    if q_shape.c % heads != 0 {
        return Err(AttnError::HeadMismatch {
            c: q_shape.c,
            heads,
        });
    }
    if (q_shape.m, q_shape.n, q_shape.h, q_shape.w, q_shape.c)
        != (kv_shape.m, kv_shape.n, kv_shape.h, kv_shape.w, kv_shape.c)
    {
        return Err(AttnError::ShapeMismatch(format!(
            "query windows {:?} vs key/value windows {:?}",
            q_shape, kv_shape
        )));
    }
    if kv_frames.iter().any(|&f| f >= kv_shape.t) {
        return Err(AttnError::Invalid("kv frame index out of range".into()));
    }
    let dh = q_shape.c / heads;
    let kv_sel = tape.index_select(kv_grid, 0, kv_frames);
    let kv_ws = WindowShape {
        t: kv_frames.len(),
        ..kv_shape
    };
    let q = project_and_pack(tape, q_grid, q_shape, weights.wq, weights.bq, heads);
    let k = project_and_pack(tape, kv_sel, kv_ws, weights.wk, weights.bk, heads);
    let v = project_and_pack(tape, kv_sel, kv_ws, weights.wv, weights.bv, heads);
    let nq = q_shape.t * q_shape.h * q_shape.w;

    let kt = tape.permute(k, &[0, 2, 1]);
    let scores = tape.bmm(q, kt);
    let scores = tape.affine(scores, 1.0 / (dh as f32).sqrt(), 0.0);
    let attn = tape.softmax(scores, 2);
    let ctx = tape.bmm(attn, v); // [B, Nq, dh]

    // back to [(m n), T h w, C] then to the grid layout
    let ctx = tape.reshape(ctx, &[q_shape.m * q_shape.n, heads, nq, dh]);
    let ctx = tape.permute(ctx, &[0, 2, 1, 3]);
    let ctx = tape.reshape(ctx, &[q_shape.m * q_shape.n * nq, q_shape.c]);
    let out = tape.matmul(ctx, weights.wo);
    let out = tape.add_bcast(out, weights.bo);
    let out = tape.reshape(
        out,
        &[
            q_shape.m,
            q_shape.n,
            q_shape.t,
            q_shape.h,
            q_shape.w,
            q_shape.c,
        ],
    );
    let out = tape.permute(out, &[2, 0, 1, 3, 4, 5]);
    Ok(out)
}

/// Self-attention with temporal key/value striding.
pub fn st_self_attention(
    tape: &Tape,
    grid: Var,
    shape: WindowShape,
    weights: &AttnWeights,
    heads: usize,
    temporal_stride: usize,
) -> Result<Var, AttnError> {
    let frames = strided_frames(shape.t, temporal_stride);
    st_attention(tape, grid, grid, shape, shape, weights, heads, &frames)
}

/// Cross-attention: queries from `q_grid`, keys/values from `kv_grid` with
/// temporal striding. Reduces to self-attention when both grids coincide.
pub fn st_cross_attention(
    tape: &Tape,
    q_grid: Var,
    kv_grid: Var,
    q_shape: WindowShape,
    kv_shape: WindowShape,
    weights: &AttnWeights,
    heads: usize,
    temporal_stride: usize,
) -> Result<Var, AttnError> {
    let frames = strided_frames(kv_shape.t, temporal_stride);
    st_attention(
        tape, q_grid, kv_grid, q_shape, kv_shape, weights, heads, &frames,
    )
}

#[cfg(test)]
mod tests;
