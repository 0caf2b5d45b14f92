//! The six-stage conversion network: dual-branch encoders, per-scale
//! self-attention, implicit-disparity head, cross-attention injection,
//! layered-disparity head, and context fusion.

pub mod layers;
pub mod params;

pub use params::{Binder, Params};

use crate::autodiff::{Conv2dSpec, Tape, Var};
use crate::frame::{FrameSequence, ValueRange};
use crate::rng::derive_rng;
use crate::warp::kernels as wk;
use crate::warp::{DisparityProbVolume, LayeredDisparity};
use layers::{AttnBlock, Conv2d, ConvT2d};
use ndarray::{Array4, Ix3};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input dimensions {h}x{w} must be divisible by 4")]
    Indivisible { h: usize, w: usize },
    #[error("clip length {got} does not match the configured length {want}")]
    ClipLength { got: usize, want: usize },
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Warp(#[from] crate::warp::WarpError),
    #[error(transparent)]
    Frame(#[from] crate::frame::FrameError),
}

/// Architecture hyperparameters. Desk-scale defaults exercise every path on
/// a 8x64x64 clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub clip_len: usize,
    /// candidate shift range, inclusive
    pub shift_min: i32,
    pub shift_max: i32,
    /// layered disparity count
    pub d_lay: usize,
    /// token width
    pub c_z: usize,
    pub heads: usize,
    /// window side, in tokens
    pub window: usize,
    pub temporal_stride: usize,
    /// disparity-branch widths at 1/2 and 1/4 scale
    pub disp_half_c: usize,
    pub disp_quarter_c: usize,
    /// fusion-block width in the implicit head
    pub fuse_c: usize,
    /// texture/residual width in context fusion and the layered head
    pub head_c: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            clip_len: 8,
            shift_min: -12,
            shift_max: 12,
            d_lay: 7,
            c_z: 64,
            heads: 2,
            window: 4,
            temporal_stride: 2,
            disp_half_c: 48,
            disp_quarter_c: 64,
            fuse_c: 96,
            head_c: 32,
        }
    }
}

impl ModelConfig {
    pub fn shifts(&self) -> Vec<i32> {
        (self.shift_min..=self.shift_max).collect()
    }

    pub fn d_impl(&self) -> usize {
        (self.shift_max - self.shift_min + 1) as usize
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.shift_min >= self.shift_max {
            return Err(ModelError::BadConfig("empty shift range".into()));
        }
        if self.c_z % self.heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "c_z {} not divisible by {} heads",
                self.c_z, self.heads
            )));
        }
        if self.d_lay < 1 {
            return Err(ModelError::BadConfig("need at least one disparity layer".into()));
        }
        if self.clip_len < 1 {
            return Err(ModelError::BadConfig("clip length must be positive".into()));
        }
        Ok(())
    }
}

/// All tape handles a forward pass produces; image-valued vars are
/// `[T, H, W, C]` in the input's pixel range.
pub struct ForwardPass {
    pub aux_right: Var,
    pub layered_right: Var,
    pub final_right: Var,
    /// `[T, H, W, D]`, full resolution
    pub implicit_probs: Var,
    /// `[T, D, H, W]`
    pub layered_disp: Var,
    /// warp validity masks, `[D, T, H, W]`
    pub warp_masks: Array4<f32>,
    /// composition selectors, `[D, T, H, W]`
    pub selectors: Array4<f32>,
}

/// Materialized outputs for inference consumers.
pub struct NetworkOutputs {
    pub aux_right: FrameSequence,
    pub layered_right: FrameSequence,
    pub final_right: FrameSequence,
    pub implicit_probs: DisparityProbVolume,
    pub layered_disp: LayeredDisparity,
}

impl ForwardPass {
    pub fn into_outputs(
        self,
        tape: &Tape,
        value_range: ValueRange,
        shifts: Vec<i32>,
    ) -> Result<NetworkOutputs, ModelError> {
        let take4 = |v: Var| -> Array4<f32> {
            tape.value(v)
                .view()
                .clone()
                .into_dimensionality::<ndarray::Ix4>()
                .unwrap()
                .to_owned()
        };
        Ok(NetworkOutputs {
            aux_right: FrameSequence::new_clamped(take4(self.aux_right), value_range)?,
            layered_right: FrameSequence::new_clamped(take4(self.layered_right), value_range)?,
            final_right: FrameSequence::new_clamped(take4(self.final_right), value_range)?,
            implicit_probs: DisparityProbVolume::new(take4(self.implicit_probs), shifts)?,
            layered_disp: LayeredDisparity::new(take4(self.layered_disp))?,
        })
    }
}

/// Features the disparity branch produces at 1/2 and 1/4 scale.
pub struct BranchFeatures {
    pub half: Var,
    pub quarter: Var,
}

/// A pluggable disparity-feature backbone. The default is a small strided
/// convolutional encoder; an adapter wrapping a real depth network can slot
/// in behind the same interface.
pub trait DisparityBackbone {
    fn channels(&self) -> (usize, usize);
    fn init_into(&self, params: &mut Params, rng: &mut ChaCha12Rng);
    fn forward(&self, tape: &Tape, b: &Binder, x_norm: Var) -> BranchFeatures;
}

/// Default backbone: two stride-2 stages of 3x3 convs.
pub struct SmallConvBackbone {
    l1: Conv2d,
    l2: Conv2d,
    l3: Conv2d,
    l4: Conv2d,
    half_c: usize,
    quarter_c: usize,
}

impl SmallConvBackbone {
    pub fn new(half_c: usize, quarter_c: usize) -> Self {
        Self {
            l1: Conv2d::new("disp.l1", 3, 32, Conv2dSpec::down3()),
            l2: Conv2d::new("disp.l2", 32, half_c, Conv2dSpec::same3()),
            l3: Conv2d::new("disp.l3", half_c, quarter_c, Conv2dSpec::down3()),
            l4: Conv2d::new("disp.l4", quarter_c, quarter_c, Conv2dSpec::same3()),
            half_c,
            quarter_c,
        }
    }
}

impl DisparityBackbone for SmallConvBackbone {
    fn channels(&self) -> (usize, usize) {
        (self.half_c, self.quarter_c)
    }

    fn init_into(&self, params: &mut Params, rng: &mut ChaCha12Rng) {
        for l in [&self.l1, &self.l2, &self.l3, &self.l4] {
            l.init_into(params, rng);
        }
    }

    fn forward(&self, tape: &Tape, b: &Binder, x_norm: Var) -> BranchFeatures {
        let h1 = self.l1.forward(tape, b, x_norm);
        let half = self.l2.forward(tape, b, h1);
        let q1 = self.l3.forward(tape, b, half);
        let quarter = self.l4.forward(tape, b, q1);
        BranchFeatures { half, quarter }
    }
}

/// The assembled network.
pub struct Model {
    pub config: ModelConfig,
    backbone: Box<dyn DisparityBackbone>,
    // context branch (widths fixed by the encoder design)
    ctx: Vec<Conv2d>,
    // per-scale self-attention on disparity features
    attn_half: AttnBlock,
    attn_quarter: AttnBlock,
    // implicit head
    imp_fuse1: Conv2d,
    imp_fuse2: Conv2d,
    imp_proj: Conv2d,
    // layered head
    v_r1: Conv2d,
    v_r2: Conv2d,
    v_r3: Conv2d,
    attn_cross: AttnBlock,
    lay_up: ConvT2d,
    lay_r: Vec<Conv2d>,
    lay_proj: Conv2d,
    // context fusion
    attn_fusion: AttnBlock,
    fus_up: ConvT2d,
    fus_t: Vec<Conv2d>,
    fus_s: Vec<Conv2d>,
    fus_proj: Conv2d,
}

pub const CTX_OUT_C: usize = 256;
const CTX_SKIP_C: usize = 256; // 4th-layer features re-entering the group convs

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let backbone = Box::new(SmallConvBackbone::new(config.disp_half_c, config.disp_quarter_c));
        Self::with_backbone(config, backbone)
    }

    pub fn with_backbone(
        config: ModelConfig,
        backbone: Box<dyn DisparityBackbone>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let t = config.clip_len;
        let cz = config.c_z;
        let heads = config.heads;
        let win = config.window;
        let ts = config.temporal_stride;

        let g = |groups| Conv2dSpec {
            kernel: 3,
            stride: 1,
            pad: 1,
            groups,
        };
        let ctx = vec![
            Conv2d::new("ctx.l1", 3, 64, Conv2dSpec::same3()),
            Conv2d::new("ctx.l2", 64, 64, Conv2dSpec::down3()),
            Conv2d::new("ctx.l3", 64, 128, Conv2dSpec::same3()),
            Conv2d::new("ctx.l4", 128, 256, Conv2dSpec::same3()),
            Conv2d::new("ctx.l5", 256, 384, g(1)),
            Conv2d::new("ctx.l6", 640, 512, g(2)),
            Conv2d::new("ctx.l7", 768, 384, g(4)),
            Conv2d::new("ctx.l8", 640, 256, g(8)),
        ];
        let (half_c, quarter_c) = backbone.channels();
        let fuse_in = half_c + quarter_c;
        let d_impl = config.d_impl();
        let v_in = d_impl * 3;
        let hc = config.head_c;

        Ok(Self {
            backbone,
            ctx,
            attn_half: AttnBlock::self_attn("attn.disp_half", half_c, cz, heads, win, t, ts),
            attn_quarter: AttnBlock::self_attn("attn.disp_quarter", quarter_c, cz, heads, win, t, ts),
            imp_fuse1: Conv2d::new("imp.fuse1", fuse_in, config.fuse_c, Conv2dSpec::same3()),
            imp_fuse2: Conv2d::new("imp.fuse2", config.fuse_c, config.fuse_c, Conv2dSpec::same3()),
            imp_proj: Conv2d::new("imp.proj", config.fuse_c, d_impl, Conv2dSpec::same3())
                .linear_out(1e-2),
            v_r1: Conv2d::new("v.r1", v_in, cz, Conv2dSpec::same3()),
            v_r2: Conv2d::new("v.r2", cz, cz, Conv2dSpec::down3()),
            v_r3: Conv2d::new("v.r3", cz, cz, Conv2dSpec::same3()),
            attn_cross: AttnBlock::cross_attn("attn.cross", cz, CTX_OUT_C, cz, heads, win, t, ts),
            lay_up: ConvT2d::new("lay.up", cz, hc),
            lay_r: vec![
                Conv2d::new("lay.r1", hc, hc, Conv2dSpec::same3()),
                Conv2d::new("lay.r2", hc, hc, Conv2dSpec::same3()),
                Conv2d::new("lay.r3", hc, hc, Conv2dSpec::same3()),
            ],
            lay_proj: Conv2d::new("lay.proj", hc, config.d_lay, Conv2dSpec::same3())
                .linear_out(1e-3),
            attn_fusion: AttnBlock::self_attn(
                "attn.fusion",
                CTX_OUT_C + cz,
                cz,
                heads,
                win,
                t,
                ts,
            ),
            fus_up: ConvT2d::new("fus.up", CTX_OUT_C + cz, hc),
            fus_t: vec![
                Conv2d::new("fus.t1", hc, hc, Conv2dSpec::same3()),
                Conv2d::new("fus.t2", hc, hc, Conv2dSpec::same3()),
                Conv2d::new("fus.t3", hc, hc, Conv2dSpec::same3()),
            ],
            fus_s: vec![
                Conv2d::new("fus.s1", 3 + hc, hc, Conv2dSpec::same3()),
                Conv2d::new("fus.s2", hc, hc, Conv2dSpec::same3()),
                Conv2d::new("fus.s3", hc, hc, Conv2dSpec::same3()),
            ],
            fus_proj: Conv2d::new("fus.proj", hc, 3, Conv2dSpec::same3()).linear_out(1e-3),
            config,
        })
    }

    /// Fresh parameters for this architecture, seeded.
    pub fn init_params(&self, seed: u64) -> Params {
        let mut params = Params::new();
        let mut rng = derive_rng(seed, "model_init", 0);
        self.backbone.init_into(&mut params, &mut rng);
        for l in &self.ctx {
            l.init_into(&mut params, &mut rng);
        }
        for blk in [
            &self.attn_half,
            &self.attn_quarter,
            &self.attn_cross,
            &self.attn_fusion,
        ] {
            blk.init_into(&mut params, &mut rng);
        }
        for l in [
            &self.imp_fuse1,
            &self.imp_fuse2,
            &self.imp_proj,
            &self.v_r1,
            &self.v_r2,
            &self.v_r3,
            &self.lay_proj,
            &self.fus_proj,
        ] {
            l.init_into(&mut params, &mut rng);
        }
        for l in self.lay_r.iter().chain(&self.fus_t).chain(&self.fus_s) {
            l.init_into(&mut params, &mut rng);
        }
        self.lay_up.init_into(&mut params, &mut rng);
        self.fus_up.init_into(&mut params, &mut rng);
        params
    }

    /// Zero the disparity and residual output heads: the network then emits
    /// zero disparities everywhere and `final_right` reduces to the
    /// median-blurred identity-composed input.
    pub fn zero_output_heads(params: &mut Params) {
        params.zero_prefix("lay.proj");
        params.zero_prefix("fus.proj");
        params.zero_prefix("imp.proj");
    }

    /// Context-encoder forward: the appendix conv stack with group-wise
    /// interleaved skip features from the 4th layer onward.
    fn context_features(&self, tape: &Tape, b: &Binder, x_norm: Var) -> Var {
        let f1 = self.ctx[0].forward(tape, b, x_norm);
        let f2 = self.ctx[1].forward(tape, b, f1);
        let f3 = self.ctx[2].forward(tape, b, f2);
        let f4 = self.ctx[3].forward(tape, b, f3);
        let f5 = self.ctx[4].forward(tape, b, f4);
        let f6 = self.ctx[5].forward(tape, b, interleave_groups(tape, f4, f5, 2));
        let f7 = self.ctx[6].forward(tape, b, interleave_groups(tape, f4, f6, 4));
        self.ctx[7].forward(tape, b, interleave_groups(tape, f4, f7, 8))
    }

    /// Full forward pass over one clip.
    pub fn forward(
        &self,
        tape: &Tape,
        binder: &Binder,
        left: &FrameSequence,
    ) -> Result<ForwardPass, ModelError> {
        let (t, h, w, _c) = left.dim();
        if t != self.config.clip_len {
            return Err(ModelError::ClipLength {
                got: t,
                want: self.config.clip_len,
            });
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(ModelError::Indivisible { h, w });
        }
        let vr = left.value_range();
        let mid = (vr.lo + vr.hi) * 0.5;
        let half_width = vr.width() * 0.5;

        // constants on the tape
        let pixels_thwc = tape.constant(left.data().clone().into_dyn());
        let x_nchw = tape.permute(pixels_thwc, &[0, 3, 1, 2]);
        let x_norm = tape.affine(x_nchw, 1.0 / half_width, -mid / half_width);

        // stage 1: dual branches
        let branch = self.backbone.forward(tape, binder, x_norm);
        let ctx_feats = self.context_features(tape, binder, x_norm);

        // stage 2: per-scale self-attention on disparity features
        let half_attn = self.attn_half.forward(tape, binder, branch.half);
        let quarter_attn = self.attn_quarter.forward(tape, binder, branch.quarter);

        // stage 3: implicit disparity at 1/2 scale, upsampled to full
        let quarter_up = tape.upsample2x(quarter_attn);
        let fused = tape.concat(1, &[half_attn, quarter_up]);
        let fused = self.imp_fuse1.forward(tape, binder, fused);
        let fused = self.imp_fuse2.forward(tape, binder, fused);
        let logits_half = self.imp_proj.forward(tape, binder, fused);
        let probs_half = tape.softmax(logits_half, 1);
        let probs_full_nchw = tape.upsample2x(probs_half); // [T, D, H, W]
        let probs_thwd = tape.permute(probs_full_nchw, &[0, 2, 3, 1]);

        // auxiliary reconstruction: blend of shifted copies in pixel units
        let shifts = self.config.shifts();
        let stack_pixels = tape.shift_stack(pixels_thwc, &shifts); // [T, D, H, W, C]
        let aux_right = tape.implicit_blend(stack_pixels, probs_thwd);

        // stage 4: V features (probability-weighted shifted copies) refined
        // to 1/2 scale, with context injected by cross-attention
        let stack_norm = tape.affine(stack_pixels, 1.0 / half_width, -mid / half_width);
        let probs_tdhw1 = tape.reshape(probs_full_nchw, &[t, self.config.d_impl(), h, w, 1]);
        let v_feats = tape.mul_bcast(stack_norm, probs_tdhw1); // [T, D, H, W, C]
        let v_tdchw = tape.permute(v_feats, &[0, 1, 4, 2, 3]);
        let v_flat = tape.reshape(v_tdchw, &[t, self.config.d_impl() * 3, h, w]);
        let v = self.v_r1.forward(tape, binder, v_flat);
        let v = self.v_r2.forward(tape, binder, v);
        let v = self.v_r3.forward(tape, binder, v);
        let layered_feats = self.attn_cross.forward_cross(tape, binder, v, ctx_feats);

        // stage 5: layered disparity, warp, and occlusion-aware composition
        let lifted = self.lay_up.forward(tape, binder, layered_feats);
        let mut lr = lifted;
        for l in &self.lay_r {
            lr = l.forward(tape, binder, lr);
        }
        let layered_disp = self.lay_proj.forward(tape, binder, lr); // [T, D_lay, H, W]

        let d_lay = self.config.d_lay;
        let mut warped_layers = Vec::with_capacity(d_lay);
        let mut masks = Array4::<f32>::zeros((d_lay, t, h, w));
        for di in 0..d_lay {
            let disp_t1hw = tape.index_select(layered_disp, 1, &[di]);
            let disp = tape.reshape(disp_t1hw, &[t, h, w]);
            let (warped, valid) = tape.warp_horizontal(pixels_thwc, disp);
            masks
                .index_axis_mut(ndarray::Axis(0), di)
                .assign(&valid.view().into_dimensionality::<Ix3>().unwrap());
            warped_layers.push(warped);
        }
        let selectors = wk::compose_selectors(masks.view())?;
        let layered_right = tape.compose_with_selectors(&warped_layers, &selectors);

        // stage 6: context fusion
        let fused_map = tape.concat(1, &[ctx_feats, layered_feats]);
        let refined = self.attn_fusion.forward(tape, binder, fused_map);
        let up = self.fus_up.forward(tape, binder, refined);
        let mut tex = up;
        for l in &self.fus_t {
            tex = l.forward(tape, binder, tex);
        }
        let blurred = tape.median_blur3(layered_right); // [T, H, W, C] pixels
        let blurred_nchw = tape.permute(blurred, &[0, 3, 1, 2]);
        let blurred_norm = tape.affine(blurred_nchw, 1.0 / half_width, -mid / half_width);
        let mut res = tape.concat(1, &[blurred_norm, tex]);
        for l in &self.fus_s {
            res = l.forward(tape, binder, res);
        }
        let residual_norm = self.fus_proj.forward(tape, binder, res);
        let residual_pixels = tape.affine(residual_norm, half_width, 0.0);
        let final_nchw = tape.add(blurred_nchw, residual_pixels);
        let final_nchw = tape.clamp(final_nchw, vr.lo, vr.hi);
        let final_right = tape.permute(final_nchw, &[0, 2, 3, 1]);

        Ok(ForwardPass {
            aux_right,
            layered_right,
            final_right,
            implicit_probs: probs_thwd,
            layered_disp,
            warp_masks: masks,
            selectors,
        })
    }
}

/// Group-wise interleaved concatenation: each of `groups` slices sees its
/// share of `skip` followed by its share of `cur`, matching the grouped
/// context-encoder convolutions.
fn interleave_groups(tape: &Tape, skip: Var, cur: Var, groups: usize) -> Var {
    let ss = tape.shape(skip);
    let cs = tape.shape(cur);
    let (t, h, w) = (ss[0], ss[2], ss[3]);
    debug_assert_eq!(ss[1], CTX_SKIP_C);
    let skip_g = tape.reshape(skip, &[t, groups, CTX_SKIP_C / groups, h, w]);
    let cur_g = tape.reshape(cur, &[t, groups, cs[1] / groups, h, w]);
    let cat = tape.concat(2, &[skip_g, cur_g]);
    tape.reshape(cat, &[t, CTX_SKIP_C + cs[1], h, w])
}
