use super::*;
use crate::autodiff::Tape;
use crate::rng::derive_rng;
use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;

fn rand_arr(seed: u64, shape: &[usize], lo: f32, hi: f32) -> ArrayD<f32> {
    let mut rng = derive_rng(seed, "attn_test", 0);
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(lo..hi))
}

fn identity_weights(tape: &Tape, c: usize) -> AttnWeights {
    let eye = Array2::from_shape_fn((c, c), |(i, j)| f32::from(i == j)).into_dyn();
    let zero = ArrayD::zeros(IxDyn(&[c]));
    AttnWeights {
        wq: tape.constant(eye.clone()),
        bq: tape.constant(zero.clone()),
        wk: tape.constant(eye.clone()),
        bk: tape.constant(zero.clone()),
        wv: tape.constant(eye.clone()),
        bv: tape.constant(zero.clone()),
        wo: tape.constant(eye),
        bo: tape.constant(zero),
    }
}

fn random_weights(tape: &Tape, c: usize, seed: u64) -> AttnWeights {
    AttnWeights {
        wq: tape.param(rand_arr(seed, &[c, c], -0.4, 0.4)),
        bq: tape.param(rand_arr(seed + 1, &[c], -0.1, 0.1)),
        wk: tape.param(rand_arr(seed + 2, &[c, c], -0.4, 0.4)),
        bk: tape.param(rand_arr(seed + 3, &[c], -0.1, 0.1)),
        wv: tape.param(rand_arr(seed + 4, &[c, c], -0.4, 0.4)),
        bv: tape.param(rand_arr(seed + 5, &[c], -0.1, 0.1)),
        wo: tape.param(rand_arr(seed + 6, &[c, c], -0.4, 0.4)),
        bo: tape.param(rand_arr(seed + 7, &[c], -0.1, 0.1)),
    }
}

// ------------------------------------------------------- soft split / comp

#[test]
fn split_with_patch_equal_stride_is_plain_tiling() {
    let tape = Tape::new();
    let x0 = rand_arr(1, &[1, 1, 4, 4], -1.0, 1.0);
    let x = tape.constant(x0.clone());
    let spec = SplitSpec {
        patch: 2,
        stride: 2,
        pad: 0,
    };
    let eye = Array2::from_shape_fn((4, 4), |(i, j)| f32::from(i == j)).into_dyn();
    let w = tape.constant(eye);
    let b = tape.constant(ArrayD::zeros(IxDyn(&[4])));
    let (tokens, shape) = soft_split(&tape, x, w, b, spec).unwrap();
    assert_eq!((shape.m, shape.n, shape.c), (2, 2, 4));
    let v = tape.value(tokens);
    // token (0, 0) is the top-left 2x2 patch in row-major order
    assert_eq!(v[[0, 0, 0, 0]], x0[[0, 0, 0, 0]]);
    assert_eq!(v[[0, 0, 0, 1]], x0[[0, 0, 0, 1]]);
    assert_eq!(v[[0, 0, 0, 2]], x0[[0, 0, 1, 0]]);
    assert_eq!(v[[0, 0, 0, 3]], x0[[0, 0, 1, 1]]);
    // token (1, 1) is the bottom-right patch
    assert_eq!(v[[0, 1, 1, 0]], x0[[0, 0, 2, 2]]);
}

#[test]
fn split_token_count_matches_hand_enumeration() {
    // 4x4 input, 2x2 patches, stride 1, no padding: origins 0..2 each axis.
    let tape = Tape::new();
    let x = tape.constant(rand_arr(2, &[1, 1, 4, 4], -1.0, 1.0));
    let spec = SplitSpec {
        patch: 2,
        stride: 1,
        pad: 0,
    };
    let w = tape.constant(rand_arr(3, &[4, 6], -1.0, 1.0));
    let b = tape.constant(ArrayD::zeros(IxDyn(&[6])));
    let (_, shape) = soft_split(&tape, x, w, b, spec).unwrap();
    assert_eq!((shape.m, shape.n), (3, 3));
}

#[test]
fn zero_features_give_zero_tokens() {
    let tape = Tape::new();
    let x = tape.constant(ArrayD::zeros(IxDyn(&[2, 3, 8, 8])));
    let spec = SplitSpec::default_3x3s2();
    let w = tape.constant(rand_arr(4, &[27, 16], -1.0, 1.0));
    let b = tape.constant(ArrayD::zeros(IxDyn(&[16])));
    let (tokens, _) = soft_split(&tape, x, w, b, spec).unwrap();
    assert!(tape.value(tokens).iter().all(|&v| v == 0.0));
}

#[test]
fn composition_inverts_split_with_tied_identity_projections() {
    let tape = Tape::new();
    let x0 = rand_arr(5, &[2, 2, 8, 8], -1.0, 1.0);
    let x = tape.constant(x0.clone());
    let spec = SplitSpec::default_3x3s2();
    let ckk = 2 * 9;
    let eye = Array2::from_shape_fn((ckk, ckk), |(i, j)| f32::from(i == j)).into_dyn();
    let w_split = tape.constant(eye.clone());
    let b_split = tape.constant(ArrayD::zeros(IxDyn(&[ckk])));
    let (tokens, shape) = soft_split(&tape, x, w_split, b_split, spec).unwrap();
    let w_comp = tape.constant(eye);
    let b_comp = tape.constant(ArrayD::zeros(IxDyn(&[ckk])));
    let back = soft_composition(&tape, tokens, shape, w_comp, b_comp, spec, 2, (8, 8)).unwrap();
    let v = tape.value(back);
    for (a, b) in v.iter().zip(x0.iter()) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn single_token_scatters_its_footprint() {
    // identity projections, one nonzero token: output equals the token's
    // patch pixels divided by coverage counts.
    let tape = Tape::new();
    let spec = SplitSpec {
        patch: 2,
        stride: 1,
        pad: 0,
    };
    let (h, w) = (4, 4);
    let (m, n) = spec.token_grid(h, w);
    let mut tok = ArrayD::zeros(IxDyn(&[1, m, n, 4]));
    for k in 0..4 {
        tok[[0, 1, 1, k]] = 1.0 + k as f32;
    }
    let tokens = tape.constant(tok);
    let eye = Array2::from_shape_fn((4, 4), |(i, j)| f32::from(i == j)).into_dyn();
    let wc = tape.constant(eye);
    let bc = tape.constant(ArrayD::zeros(IxDyn(&[4])));
    let shape = TokenShape { t: 1, m, n, c: 4 };
    let out = soft_composition(&tape, tokens, shape, wc, bc, spec, 1, (h, w)).unwrap();
    let v = tape.value(out);
    let counts = crate::autodiff::coverage_counts(h, w, 2, 1, 0);
    // the patch with origin (1,1) covers pixels (1,1), (1,2), (2,1), (2,2)
    assert_eq!(v[[0, 0, 1, 1]], 1.0 / counts[[1, 1]]);
    assert_eq!(v[[0, 0, 1, 2]], 2.0 / counts[[1, 2]]);
    assert_eq!(v[[0, 0, 2, 1]], 3.0 / counts[[2, 1]]);
    assert_eq!(v[[0, 0, 2, 2]], 4.0 / counts[[2, 2]]);
    assert_eq!(v[[0, 0, 0, 0]], 0.0);
}

// ------------------------------------------------------- window partition

#[test]
fn partition_roundtrip_is_identity() {
    let tape = Tape::new();
    let x0 = rand_arr(6, &[2, 8, 8, 5], -1.0, 1.0);
    let tokens = tape.constant(x0.clone());
    let shape = TokenShape {
        t: 2,
        m: 8,
        n: 8,
        c: 5,
    };
    let (grid, ws) = window_partition(&tape, tokens, shape, (4, 4)).unwrap();
    assert_eq!((ws.m, ws.n, ws.h, ws.w), (2, 2, 4, 4));
    let (back, shape2) = window_unpartition(&tape, grid, ws);
    assert_eq!((shape2.m, shape2.n), (8, 8));
    assert_eq!(*tape.value(back), x0);
}

#[test]
fn partition_rejects_non_tiling_windows() {
    let tape = Tape::new();
    let tokens = tape.constant(rand_arr(7, &[1, 6, 8, 4], -1.0, 1.0));
    let shape = TokenShape {
        t: 1,
        m: 6,
        n: 8,
        c: 4,
    };
    assert!(window_partition(&tape, tokens, shape, (4, 4)).is_err());
}

// ------------------------------------------------------------ attention

#[test]
fn singleton_attention_returns_value_projection() {
    // one window, one token, one frame: softmax over a single key is 1,
    // so with identity V/O projections the token passes through.
    let tape = Tape::new();
    let x0 = rand_arr(8, &[1, 1, 1, 1, 1, 4], -1.0, 1.0);
    let grid = tape.constant(x0.clone());
    let ws = WindowShape {
        t: 1,
        m: 1,
        n: 1,
        h: 1,
        w: 1,
        c: 4,
    };
    let weights = identity_weights(&tape, 4);
    let out = st_self_attention(&tape, grid, ws, &weights, 1, 1).unwrap();
    let v = tape.value(out);
    for (a, b) in v.iter().zip(x0.iter()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn identical_tokens_attend_uniformly() {
    let tape = Tape::new();
    let c = 6;
    let mut token = vec![0.0f32; c];
    for (k, v) in token.iter_mut().enumerate() {
        *v = 0.3 * k as f32 - 0.5;
    }
    let x0 = ArrayD::from_shape_fn(IxDyn(&[4, 1, 1, 2, 2, c]), |idx| token[idx[5]]);
    let grid = tape.constant(x0);
    let ws = WindowShape {
        t: 4,
        m: 1,
        n: 1,
        h: 2,
        w: 2,
        c,
    };
    let weights = random_weights(&tape, c, 40);
    let out = st_self_attention(&tape, grid, ws, &weights, 2, 2).unwrap();
    let v = tape.value(out);
    // every output token equals every other (weights uniform over identical
    // value rows)
    let first: Vec<f32> = (0..c).map(|k| v[[0, 0, 0, 0, 0, k]]).collect();
    for t in 0..4 {
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..c {
                    assert!((v[[t, 0, 0, i, j, k]] - first[k]).abs() < 1e-5);
                }
            }
        }
    }
}

#[test]
fn cross_attention_with_tied_inputs_equals_self_attention() {
    let tape = Tape::new();
    let x0 = rand_arr(9, &[4, 2, 2, 2, 2, 8], -1.0, 1.0);
    let grid = tape.constant(x0);
    let ws = WindowShape {
        t: 4,
        m: 2,
        n: 2,
        h: 2,
        w: 2,
        c: 8,
    };
    let weights = random_weights(&tape, 8, 50);
    let a = st_self_attention(&tape, grid, ws, &weights, 2, 2).unwrap();
    let b = st_cross_attention(&tape, grid, grid, ws, ws, &weights, 2, 2).unwrap();
    assert_eq!(*tape.value(a), *tape.value(b));
}

#[test]
fn zero_kv_with_zero_value_bias_yields_output_bias_only() {
    let tape = Tape::new();
    let q0 = rand_arr(10, &[2, 1, 1, 2, 2, 4], -1.0, 1.0);
    let q = tape.constant(q0);
    let kv = tape.constant(ArrayD::zeros(IxDyn(&[2, 1, 1, 2, 2, 4])));
    let ws = WindowShape {
        t: 2,
        m: 1,
        n: 1,
        h: 2,
        w: 2,
        c: 4,
    };
    let weights = identity_weights(&tape, 4);
    let out = st_cross_attention(&tape, q, kv, ws, ws, &weights, 4, 1).unwrap();
    assert!(tape.value(out).iter().all(|&v| v == 0.0));
}

#[test]
fn two_token_attention_matches_hand_arithmetic() {
    // 2 tokens of width 2, 1 head, identity projections: scores are dot
    // products / sqrt(2), output = softmax-weighted sum of tokens.
    let tape = Tape::new();
    let t0 = [1.0f32, 0.0];
    let t1 = [0.0f32, 2.0];
    let mut x0 = ArrayD::zeros(IxDyn(&[1, 1, 1, 1, 2, 2]));
    for k in 0..2 {
        x0[[0, 0, 0, 0, 0, k]] = t0[k];
        x0[[0, 0, 0, 0, 1, k]] = t1[k];
    }
    let grid = tape.constant(x0);
    let ws = WindowShape {
        t: 1,
        m: 1,
        n: 1,
        h: 1,
        w: 2,
        c: 2,
    };
    let weights = identity_weights(&tape, 2);
    let out = st_self_attention(&tape, grid, ws, &weights, 1, 1).unwrap();
    let v = tape.value(out);
    let s = 1.0f64 / 2.0f64.sqrt();
    // query t0: scores [t0.t0, t0.t1]/sqrt(2) = [s, 0]
    let w00 = (s.exp()) / (s.exp() + 1.0);
    let w01 = 1.0 - w00;
    let expect0 = [w00 * 1.0 + w01 * 0.0, w00 * 0.0 + w01 * 2.0];
    for k in 0..2 {
        assert!(
            (f64::from(v[[0, 0, 0, 0, 0, k]]) - expect0[k]).abs() < 1e-5,
            "token0 channel {}",
            k
        );
    }
    // query t1: scores [0, t1.t1/sqrt(2)] = [0, 4/sqrt(2)]
    let s11 = 4.0f64 * s;
    let w11 = s11.exp() / (s11.exp() + 1.0);
    let w10 = 1.0 - w11;
    let expect1 = [w10 * 1.0, w11 * 2.0];
    for k in 0..2 {
        assert!(
            (f64::from(v[[0, 0, 0, 0, 1, k]]) - expect1[k]).abs() < 1e-5,
            "token1 channel {}",
            k
        );
    }
}

#[test]
fn head_mismatch_is_rejected() {
    let tape = Tape::new();
    let grid = tape.constant(rand_arr(11, &[1, 1, 1, 2, 2, 6], -1.0, 1.0));
    let ws = WindowShape {
        t: 1,
        m: 1,
        n: 1,
        h: 2,
        w: 2,
        c: 6,
    };
    let weights = identity_weights(&tape, 6);
    assert!(matches!(
        st_self_attention(&tape, grid, ws, &weights, 4, 1),
        Err(AttnError::HeadMismatch { .. })
    ));
}

/// Full attention with excluded frames' scores masked to -inf, built from
/// tape primitives: the independent oracle for temporal striding.
fn masked_full_attention(
    tape: &Tape,
    grid: crate::autodiff::Var,
    ws: WindowShape,
    weights: &AttnWeights,
    heads: usize,
    keep_frames: &[usize],
) -> crate::autodiff::Var {
    let dh = ws.c / heads;
    let nt = ws.t * ws.h * ws.w;
    let pack = |v: crate::autodiff::Var, pw, pb| {
        let perm = tape.permute(v, &[1, 2, 0, 3, 4, 5]);
        let flat = tape.reshape(perm, &[ws.m * ws.n * nt, ws.c]);
        let proj = tape.matmul(flat, pw);
        let proj = tape.add_bcast(proj, pb);
        let split = tape.reshape(proj, &[ws.m * ws.n, nt, heads, dh]);
        let hf = tape.permute(split, &[0, 2, 1, 3]);
        tape.reshape(hf, &[ws.m * ws.n * heads, nt, dh])
    };
    let q = pack(grid, weights.wq, weights.bq);
    let k = pack(grid, weights.wk, weights.bk);
    let v = pack(grid, weights.wv, weights.bv);
    let kt = tape.permute(k, &[0, 2, 1]);
    let scores = tape.bmm(q, kt);
    let scores = tape.affine(scores, 1.0 / (dh as f32).sqrt(), 0.0);
    // additive mask over key positions: keys of dropped frames get -inf
    let mut mask = ArrayD::zeros(IxDyn(&[1, 1, nt]));
    for t in 0..ws.t {
        if !keep_frames.contains(&t) {
            for p in 0..ws.h * ws.w {
                mask[[0, 0, t * ws.h * ws.w + p]] = f32::NEG_INFINITY;
            }
        }
    }
    let maskv = tape.constant(mask);
    let scores = tape.add_bcast(scores, maskv);
    let attn = tape.softmax(scores, 2);
    let ctx = tape.bmm(attn, v);
    let ctx = tape.reshape(ctx, &[ws.m * ws.n, heads, nt, dh]);
    let ctx = tape.permute(ctx, &[0, 2, 1, 3]);
    let ctx = tape.reshape(ctx, &[ws.m * ws.n * nt, ws.c]);
    let out = tape.matmul(ctx, weights.wo);
    let out = tape.add_bcast(out, weights.bo);
    let out = tape.reshape(out, &[ws.m, ws.n, ws.t, ws.h, ws.w, ws.c]);
    tape.permute(out, &[2, 0, 1, 3, 4, 5])
}

#[test]
fn strided_attention_equals_masked_full_attention() {
    let tape = Tape::new();
    let ws = WindowShape {
        t: 8,
        m: 1,
        n: 1,
        h: 4,
        w: 4,
        c: 8,
    };
    let grid = tape.constant(rand_arr(12, &[8, 1, 1, 4, 4, 8], -1.0, 1.0));
    let weights = random_weights(&tape, 8, 60);
    let strided = st_self_attention(&tape, grid, ws, &weights, 2, 2).unwrap();
    let keep = strided_frames(8, 2);
    assert_eq!(keep, vec![0, 2, 4, 6]);
    let masked = masked_full_attention(&tape, grid, ws, &weights, 2, &keep);
    let a = tape.value(strided);
    let b = tape.value(masked);
    let max_diff = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max);
    assert!(max_diff < 1e-5, "max diff {}", max_diff);
}

#[test]
fn attention_rows_sum_to_one() {
    // reconstruct the attention matrix with the same weights and check
    // row-stochasticity per query
    let tape = Tape::new();
    let ws = WindowShape {
        t: 4,
        m: 1,
        n: 1,
        h: 2,
        w: 2,
        c: 4,
    };
    let grid = tape.constant(rand_arr(13, &[4, 1, 1, 2, 2, 4], -2.0, 2.0));
    let weights = random_weights(&tape, 4, 70);
    let heads = 2;
    let dh = 2;
    let nt = 4 * 2 * 2;
    let frames = strided_frames(4, 2);
    let kv = tape.index_select(grid, 0, &frames);
    let kv_ws = WindowShape { t: 2, ..ws };
    let q = super::project_and_pack(&tape, grid, ws, weights.wq, weights.bq, heads);
    let k = super::project_and_pack(&tape, kv, kv_ws, weights.wk, weights.bk, heads);
    let kt = tape.permute(k, &[0, 2, 1]);
    let scores = tape.bmm(q, kt);
    let scores = tape.affine(scores, 1.0 / (dh as f32).sqrt(), 0.0);
    let attn = tape.softmax(scores, 2);
    let v = tape.value(attn);
    let nk = 2 * 2 * 2;
    for b in 0..heads {
        for qi in 0..nt {
            let sum: f32 = (0..nk).map(|ki| v[[b, qi, ki]]).sum();
            assert!((sum - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn gradients_flow_through_attention() {
    let tape = Tape::new();
    let ws = WindowShape {
        t: 4,
        m: 1,
        n: 1,
        h: 2,
        w: 2,
        c: 4,
    };
    let grid = tape.param(rand_arr(14, &[4, 1, 1, 2, 2, 4], -1.0, 1.0));
    let weights = random_weights(&tape, 4, 80);
    let out = st_self_attention(&tape, grid, ws, &weights, 2, 2).unwrap();
    let loss = tape.mean_all(out);
    let grads = tape.backward(loss);
    for v in [
        grid, weights.wq, weights.wk, weights.wv, weights.wo, weights.bq, weights.bo,
    ] {
        let g = grads.get(v).expect("gradient present");
        assert!(g.iter().any(|&x| x != 0.0), "gradient all zero");
        assert!(g.iter().all(|x| x.is_finite()));
    }
}
