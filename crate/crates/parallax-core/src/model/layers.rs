//! Layer builders: declaration, initialization, and tape forward passes.

use super::params::{Binder, Params};
use crate::attention::{
    soft_composition, soft_split, st_attention, strided_frames, window_partition,
    window_unpartition, AttnWeights, SplitSpec, WindowShape,
};
use crate::autodiff::{Conv2dSpec, ConvT2dSpec, Tape, Var};
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

pub const LRELU_SLOPE: f32 = 0.2;
const LN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Kaiming-style fan-in scaling for leaky-relu stacks.
    Kaiming,
    /// Xavier scaling for linear/attention projections.
    Xavier,
    /// Small random output heads (near-identity behavior at start).
    Small(f32),
}

fn normal(rng: &mut ChaCha12Rng, std: f32) -> f32 {
    // Box-Muller; two uniforms per draw keeps the stream simple.
    let u1: f32 = rng.gen_range(1e-7..1.0);
    let u2: f32 = rng.gen_range(0.0..1.0);
    std * (-2.0 * u1.ln()).sqrt() * (std::f32::consts::TAU * u2).cos()
}

fn init_tensor(rng: &mut ChaCha12Rng, shape: &[usize], init: Init, fan_in: usize, fan_out: usize) -> ArrayD<f32> {
    let std = match init {
        Init::Kaiming => (2.0 / (1.0 + LRELU_SLOPE * LRELU_SLOPE) / fan_in as f32).sqrt(),
        Init::Xavier => (2.0 / (fan_in + fan_out) as f32).sqrt(),
        Init::Small(s) => s,
    };
    ArrayD::from_shape_fn(IxDyn(shape), |_| normal(rng, std))
}

/// Conv + optional leaky-relu.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub spec: Conv2dSpec,
    pub act: Option<f32>,
    pub init: Init,
}

impl Conv2d {
    pub fn new(name: &str, c_in: usize, c_out: usize, spec: Conv2dSpec) -> Self {
        Self {
            name: name.to_string(),
            c_in,
            c_out,
            spec,
            act: Some(LRELU_SLOPE),
            init: Init::Kaiming,
        }
    }

    pub fn linear_out(mut self, std: f32) -> Self {
        self.act = None;
        self.init = Init::Small(std);
        self
    }

    pub fn init_into(&self, params: &mut Params, rng: &mut ChaCha12Rng) {
        let k = self.spec.kernel;
        let cg = self.c_in / self.spec.groups;
        let fan_in = cg * k * k;
        params.insert(
            format!("{}.w", self.name),
            init_tensor(rng, &[self.c_out, cg, k, k], self.init, fan_in, self.c_out * k * k),
        );
        params.insert(format!("{}.b", self.name), ArrayD::zeros(IxDyn(&[self.c_out])));
    }

    pub fn forward(&self, tape: &Tape, b: &Binder, x: Var) -> Var {
        let w = b.var(&format!("{}.w", self.name));
        let bias = b.var(&format!("{}.b", self.name));
        let y = tape.conv2d(x, w, Some(bias), self.spec);
        match self.act {
            Some(slope) => tape.leaky_relu(y, slope),
            None => y,
        }
    }
}

/// Transposed conv + optional leaky-relu (2x upsampling geometry).
#[derive(Debug, Clone)]
pub struct ConvT2d {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub spec: ConvT2dSpec,
    pub act: Option<f32>,
}

impl ConvT2d {
    pub fn new(name: &str, c_in: usize, c_out: usize) -> Self {
        Self {
            name: name.to_string(),
            c_in,
            c_out,
            spec: ConvT2dSpec::up2x(),
            act: Some(LRELU_SLOPE),
        }
    }

    pub fn init_into(&self, params: &mut Params, rng: &mut ChaCha12Rng) {
        let k = self.spec.kernel;
        let fan_in = self.c_in * k * k / (self.spec.stride * self.spec.stride);
        params.insert(
            format!("{}.w", self.name),
            init_tensor(
                rng,
                &[self.c_in, self.c_out, k, k],
                Init::Kaiming,
                fan_in.max(1),
                self.c_out * k * k,
            ),
        );
        params.insert(format!("{}.b", self.name), ArrayD::zeros(IxDyn(&[self.c_out])));
    }

    pub fn forward(&self, tape: &Tape, b: &Binder, x: Var) -> Var {
        let w = b.var(&format!("{}.w", self.name));
        let bias = b.var(&format!("{}.b", self.name));
        let y = tape.conv_transpose2d(x, w, Some(bias), self.spec);
        match self.act {
            Some(slope) => tape.leaky_relu(y, slope),
            None => y,
        }
    }
}

fn init_linear(params: &mut Params, rng: &mut ChaCha12Rng, name: &str, d_in: usize, d_out: usize) {
    params.insert(
        format!("{}.w", name),
        init_tensor(rng, &[d_in, d_out], Init::Xavier, d_in, d_out),
    );
    params.insert(format!("{}.b", name), ArrayD::zeros(IxDyn(&[d_out])));
}

fn init_layer_norm(params: &mut Params, name: &str, d: usize) {
    params.insert(format!("{}.g", name), ArrayD::ones(IxDyn(&[d])));
    params.insert(format!("{}.b", name), ArrayD::zeros(IxDyn(&[d])));
}

fn layer_norm(tape: &Tape, b: &Binder, name: &str, x: Var) -> Var {
    tape.layer_norm(
        x,
        b.var(&format!("{}.g", name)),
        b.var(&format!("{}.b", name)),
        LN_EPS,
    )
}

fn attn_weights(b: &Binder, name: &str) -> AttnWeights {
    AttnWeights {
        wq: b.var(&format!("{}.q.w", name)),
        bq: b.var(&format!("{}.q.b", name)),
        wk: b.var(&format!("{}.k.w", name)),
        bk: b.var(&format!("{}.k.b", name)),
        wv: b.var(&format!("{}.v.w", name)),
        bv: b.var(&format!("{}.v.b", name)),
        wo: b.var(&format!("{}.o.w", name)),
        bo: b.var(&format!("{}.o.b", name)),
    }
}

fn ffn(tape: &Tape, b: &Binder, name: &str, x: Var, shape: &[usize], c: usize) -> Var {
    let n: usize = shape.iter().take(shape.len() - 1).product();
    let flat = tape.reshape(x, &[n, c]);
    let h = tape.matmul(flat, b.var(&format!("{}.w1", name)));
    let h = tape.add_bcast(h, b.var(&format!("{}.b1", name)));
    let h = tape.leaky_relu(h, LRELU_SLOPE);
    let o = tape.matmul(h, b.var(&format!("{}.w2", name)));
    let o = tape.add_bcast(o, b.var(&format!("{}.b2", name)));
    tape.reshape(o, shape)
}

/// A windowed spatial-temporal transformer block wrapped in soft
/// split/composition: tokens get position embeddings, pre-norm attention and
/// a feed-forward, then are composed back and added to the input.
#[derive(Debug, Clone)]
pub struct AttnBlock {
    pub name: String,
    pub c_in: usize,
    pub c_kv: Option<usize>,
    pub c_z: usize,
    pub heads: usize,
    pub window: usize,
    pub split: SplitSpec,
    pub clip_len: usize,
    pub temporal_stride: usize,
    pub outer_residual: bool,
}

impl AttnBlock {
    pub fn self_attn(
        name: &str,
        c_in: usize,
        c_z: usize,
        heads: usize,
        window: usize,
        clip_len: usize,
        temporal_stride: usize,
    ) -> Self {
        Self {
            name: name.to_string(),
            c_in,
            c_kv: None,
            c_z,
            heads,
            window,
            split: SplitSpec::default_3x3s2(),
            clip_len,
            temporal_stride,
            outer_residual: true,
        }
    }

    pub fn cross_attn(
        name: &str,
        c_q: usize,
        c_kv: usize,
        c_z: usize,
        heads: usize,
        window: usize,
        clip_len: usize,
        temporal_stride: usize,
    ) -> Self {
        Self {
            name: name.to_string(),
            c_in: c_q,
            c_kv: Some(c_kv),
            c_z,
            heads,
            window,
            split: SplitSpec::default_3x3s2(),
            clip_len,
            temporal_stride,
            outer_residual: true,
        }
    }

    pub fn init_into(&self, params: &mut Params, rng: &mut ChaCha12Rng) {
        let ckk = self.c_in * self.split.patch * self.split.patch;
        init_linear(params, rng, &format!("{}.split", self.name), ckk, self.c_z);
        if let Some(c_kv) = self.c_kv {
            let kv_ckk = c_kv * self.split.patch * self.split.patch;
            init_linear(params, rng, &format!("{}.kvsplit", self.name), kv_ckk, self.c_z);
            init_layer_norm(params, &format!("{}.lnkv", self.name), self.c_z);
            params.insert(
                format!("{}.poskv", self.name),
                init_tensor(
                    rng,
                    &[self.clip_len, 1, 1, self.window, self.window, self.c_z],
                    Init::Small(0.02),
                    1,
                    1,
                ),
            );
        }
        params.insert(
            format!("{}.pos", self.name),
            init_tensor(
                rng,
                &[self.clip_len, 1, 1, self.window, self.window, self.c_z],
                Init::Small(0.02),
                1,
                1,
            ),
        );
        init_layer_norm(params, &format!("{}.ln1", self.name), self.c_z);
        for p in ["q", "k", "v", "o"] {
            init_linear(params, rng, &format!("{}.{}", self.name, p), self.c_z, self.c_z);
        }
        init_layer_norm(params, &format!("{}.ln2", self.name), self.c_z);
        params.insert(
            format!("{}.ffn.w1", self.name),
            init_tensor(rng, &[self.c_z, 2 * self.c_z], Init::Xavier, self.c_z, 2 * self.c_z),
        );
        params.insert(format!("{}.ffn.b1", self.name), ArrayD::zeros(IxDyn(&[2 * self.c_z])));
        params.insert(
            format!("{}.ffn.w2", self.name),
            init_tensor(rng, &[2 * self.c_z, self.c_z], Init::Xavier, 2 * self.c_z, self.c_z),
        );
        params.insert(format!("{}.ffn.b2", self.name), ArrayD::zeros(IxDyn(&[self.c_z])));
        let ckk_out = self.c_in * self.split.patch * self.split.patch;
        init_linear(params, rng, &format!("{}.comp", self.name), self.c_z, ckk_out);
    }

    fn tokens_to_windows(
        &self,
        tape: &Tape,
        b: &Binder,
        x: Var,
        split_name: &str,
        pos_name: &str,
    ) -> (Var, WindowShape) {
        let (tokens, tshape) = soft_split(
            tape,
            x,
            b.var(&format!("{}.w", split_name)),
            b.var(&format!("{}.b", split_name)),
            self.split,
        )
        .expect("soft split");
        let (grid, wshape) = window_partition(tape, tokens, tshape, (self.window, self.window))
            .expect("window partition");
        let grid = tape.add_bcast(grid, b.var(pos_name));
        (grid, wshape)
    }

    /// Self-attention form: `x: [T, C_in, H, W] -> [T, C_in, H, W]`.
    pub fn forward(&self, tape: &Tape, b: &Binder, x: Var) -> Var {
        assert!(self.c_kv.is_none(), "use forward_cross for cross blocks");
        let xs = tape.shape(x);
        let (h, w) = (xs[2], xs[3]);
        let (grid, wshape) = self.tokens_to_windows(
            tape,
            b,
            x,
            &format!("{}.split", self.name),
            &format!("{}.pos", self.name),
        );
        let normed = layer_norm(tape, b, &format!("{}.ln1", self.name), grid);
        let frames = strided_frames(wshape.t, self.temporal_stride);
        let attn = st_attention(
            tape,
            normed,
            normed,
            wshape,
            wshape,
            &attn_weights(b, &self.name),
            self.heads,
            &frames,
        )
        .expect("attention");
        let grid = tape.add(grid, attn);
        let normed2 = layer_norm(tape, b, &format!("{}.ln2", self.name), grid);
        let gshape = tape.shape(grid);
        let f = ffn(tape, b, &format!("{}.ffn", self.name), normed2, &gshape, self.c_z);
        let grid = tape.add(grid, f);
        let (tokens, tshape) = window_unpartition(tape, grid, wshape);
        let out = soft_composition(
            tape,
            tokens,
            tshape,
            b.var(&format!("{}.comp.w", self.name)),
            b.var(&format!("{}.comp.b", self.name)),
            self.split,
            self.c_in,
            (h, w),
        )
        .expect("soft composition");
        if self.outer_residual {
            tape.add(out, x)
        } else {
            out
        }
    }

    /// Cross-attention form: queries from `q`, keys/values from `kv`.
    /// Output matches `q`'s shape.
    pub fn forward_cross(&self, tape: &Tape, b: &Binder, q: Var, kv: Var) -> Var {
        let c_kv = self.c_kv.expect("cross block");
        let qs = tape.shape(q);
        let ks = tape.shape(kv);
        assert_eq!(ks[1], c_kv, "kv channel mismatch");
        assert_eq!((qs[2], qs[3]), (ks[2], ks[3]), "cross: spatial mismatch");
        let (h, w) = (qs[2], qs[3]);
        let (qgrid, qshape) = self.tokens_to_windows(
            tape,
            b,
            q,
            &format!("{}.split", self.name),
            &format!("{}.pos", self.name),
        );
        let (kvgrid, kvshape) = self.tokens_to_windows(
            tape,
            b,
            kv,
            &format!("{}.kvsplit", self.name),
            &format!("{}.poskv", self.name),
        );
        let qn = layer_norm(tape, b, &format!("{}.ln1", self.name), qgrid);
        let kn = layer_norm(tape, b, &format!("{}.lnkv", self.name), kvgrid);
        let frames = strided_frames(kvshape.t, self.temporal_stride);
        let attn = st_attention(
            tape,
            qn,
            kn,
            qshape,
            kvshape,
            &attn_weights(b, &self.name),
            self.heads,
            &frames,
        )
        .expect("cross attention");
        let grid = tape.add(qgrid, attn);
        let normed2 = layer_norm(tape, b, &format!("{}.ln2", self.name), grid);
        let gshape = tape.shape(grid);
        let f = ffn(tape, b, &format!("{}.ffn", self.name), normed2, &gshape, self.c_z);
        let grid = tape.add(grid, f);
        let (tokens, tshape) = window_unpartition(tape, grid, qshape);
        let out = soft_composition(
            tape,
            tokens,
            tshape,
            b.var(&format!("{}.comp.w", self.name)),
            b.var(&format!("{}.comp.b", self.name)),
            self.split,
            self.c_in,
            (h, w),
        )
        .expect("soft composition");
        if self.outer_residual {
            tape.add(out, q)
        } else {
            out
        }
    }
}
