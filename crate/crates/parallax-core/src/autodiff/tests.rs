use super::*;
use crate::parallelism::scope_sequential;
use crate::rng::derive_rng;
use ndarray::{ArrayD, IxDyn};
use rand::Rng;

fn rand_array(seed: u64, shape: &[usize], lo: f32, hi: f32) -> ArrayD<f32> {
    let mut rng = derive_rng(seed, "ad_test", 0);
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(lo..hi))
}

/// Keep values away from 0 so relu/abs kinks cannot sit inside an FD probe.
fn rand_array_off_zero(seed: u64, shape: &[usize]) -> ArrayD<f32> {
    let mut rng = derive_rng(seed, "ad_test_oz", 0);
    ArrayD::from_shape_fn(IxDyn(shape), |_| {
        let v: f32 = rng.gen_range(0.15..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Finite-difference check of d(objective)/d(x0) where the objective is
/// `mean(f(x) * weights)` built on a fresh tape per evaluation.
fn fd_check(
    name: &str,
    x0: &ArrayD<f32>,
    seed: u64,
    tol: f32,
    f: impl Fn(&Tape, Var) -> Var,
) {
    let objective = |x: &ArrayD<f32>| -> (f32, Option<ArrayD<f32>>, Vec<usize>) {
        let tape = Tape::new();
        let xv = tape.param(x.clone());
        let y = f(&tape, xv);
        let out_shape = tape.shape(y);
        let w = tape.constant(rand_array(seed ^ 0x5151, &out_shape, -1.0, 1.0));
        let loss = tape.mean_all(tape.mul(y, w));
        let lv = tape.value(loss)[[]];
        let mut grads = tape.backward(loss);
        (lv, grads.take(xv), out_shape)
    };
    let (_, grad, _) = objective(x0);
    let grad = grad.unwrap_or_else(|| panic!("{}: no gradient", name));
    let h = 1e-2f32;
    let mut probe = x0.clone();
    let mut max_rel = 0.0f32;
    for k in 0..x0.len() {
        let orig = probe.as_slice_mut().unwrap()[k];
        probe.as_slice_mut().unwrap()[k] = orig + h;
        let fp = objective(&probe).0;
        probe.as_slice_mut().unwrap()[k] = orig - h;
        let fm = objective(&probe).0;
        probe.as_slice_mut().unwrap()[k] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let a = grad.as_slice().unwrap()[k];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(0.05);
        max_rel = max_rel.max(rel);
    }
    assert!(max_rel < tol, "{}: max rel err {} >= {}", name, max_rel, tol);
}

#[test]
fn basic_arith_and_multiuse_accumulation() {
    let tape = Tape::new();
    let x = tape.param(ndarray::arr1(&[1.0f32, -2.0, 3.0]).into_dyn());
    let y = tape.add(x, x); // 2x
    let z = tape.mul(y, x); // 2x^2 -> dz/dx = 4x
    let loss = tape.mean_all(z);
    let grads = tape.backward(loss);
    let g = grads.get(x).unwrap();
    for (k, &xv) in [1.0f32, -2.0, 3.0].iter().enumerate() {
        assert!((g.as_slice().unwrap()[k] - 4.0 * xv / 3.0).abs() < 1e-6);
    }
}

#[test]
fn constants_carry_no_edges() {
    let tape = Tape::new();
    let a = tape.constant(rand_array(1, &[4, 4], -1.0, 1.0));
    let b = tape.constant(rand_array(2, &[4, 4], -1.0, 1.0));
    let c = tape.mul(a, b);
    assert!(!tape.requires_grad(c));
}

#[test]
fn fd_elementwise_ops() {
    let x = rand_array_off_zero(10, &[3, 5]);
    fd_check("add_self", &x, 11, 3e-2, |t, v| t.add(v, v));
    fd_check("sub_const", &x, 12, 3e-2, |t, v| {
        let c = t.constant(rand_array(13, &[3, 5], -1.0, 1.0));
        t.sub(v, c)
    });
    fd_check("mul_const", &x, 14, 3e-2, |t, v| {
        let c = t.constant(rand_array(15, &[3, 5], 0.5, 1.5));
        t.mul(v, c)
    });
    fd_check("affine", &x, 16, 3e-2, |t, v| t.affine(v, 2.5, -0.7));
    fd_check("leaky_relu", &x, 17, 3e-2, |t, v| t.leaky_relu(v, 0.2));
    fd_check("abs", &x, 18, 3e-2, |t, v| t.abs(v));
    fd_check("softmax", &x, 19, 3e-2, |t, v| t.softmax(v, 1));
    fd_check("diff", &x, 20, 3e-2, |t, v| t.diff(v, 1));
}

#[test]
fn fd_clamp_interior() {
    let x = rand_array(21, &[4, 4], -0.4, 0.4);
    fd_check("clamp", &x, 22, 3e-2, |t, v| t.clamp(v, -0.5, 0.5));
}

#[test]
fn fd_broadcast_ops() {
    let x = rand_array(23, &[2, 3, 4], -1.0, 1.0);
    fd_check("add_bcast_wide", &x, 24, 3e-2, |t, v| {
        let b = t.constant(rand_array(25, &[4], -1.0, 1.0));
        t.add_bcast(v, b)
    });
    fd_check("mul_bcast_wide", &x, 26, 3e-2, |t, v| {
        let b = t.constant(rand_array(27, &[3, 1], 0.5, 1.5));
        t.mul_bcast(v, b)
    });
    // gradient wrt the narrow side
    let b = rand_array(28, &[4], -1.0, 1.0);
    fd_check("add_bcast_narrow", &b, 29, 3e-2, |t, v| {
        let a = t.constant(rand_array(30, &[2, 3, 4], -1.0, 1.0));
        t.add_bcast(a, v)
    });
    let b = rand_array(31, &[3, 1], 0.5, 1.5);
    fd_check("mul_bcast_narrow", &b, 32, 3e-2, |t, v| {
        let a = t.constant(rand_array(33, &[2, 3, 4], -1.0, 1.0));
        t.mul_bcast(a, v)
    });
}

#[test]
fn fd_shaping_ops() {
    let x = rand_array(34, &[2, 3, 4], -1.0, 1.0);
    fd_check("reshape", &x, 35, 3e-2, |t, v| t.reshape(v, &[6, 4]));
    fd_check("permute", &x, 36, 3e-2, |t, v| t.permute(v, &[2, 0, 1]));
    fd_check("concat", &x, 37, 3e-2, |t, v| t.concat(1, &[v, v]));
    fd_check("index_select", &x, 38, 3e-2, |t, v| {
        t.index_select(v, 0, &[1, 1, 0])
    });
}

#[test]
fn fd_matmul_and_bmm() {
    let a = rand_array(40, &[3, 4], -1.0, 1.0);
    fd_check("matmul_a", &a, 41, 3e-2, |t, v| {
        let b = t.constant(rand_array(42, &[4, 5], -1.0, 1.0));
        t.matmul(v, b)
    });
    let b = rand_array(43, &[4, 5], -1.0, 1.0);
    fd_check("matmul_b", &b, 44, 3e-2, |t, v| {
        let a = t.constant(rand_array(45, &[3, 4], -1.0, 1.0));
        t.matmul(a, v)
    });
    let a = rand_array(46, &[2, 3, 4], -1.0, 1.0);
    fd_check("bmm_a", &a, 47, 3e-2, |t, v| {
        let b = t.constant(rand_array(48, &[2, 4, 3], -1.0, 1.0));
        t.bmm(v, b)
    });
    let b = rand_array(49, &[2, 4, 3], -1.0, 1.0);
    fd_check("bmm_b", &b, 50, 3e-2, |t, v| {
        let a = t.constant(rand_array(51, &[2, 3, 4], -1.0, 1.0));
        t.bmm(a, v)
    });
}

#[test]
fn matmul_matches_hand_computation() {
    let tape = Tape::new();
    let a = tape.constant(ndarray::arr2(&[[1.0f32, 2.0], [3.0, 4.0]]).into_dyn());
    let b = tape.constant(ndarray::arr2(&[[5.0f32, 6.0], [7.0, 8.0]]).into_dyn());
    let c = tape.matmul(a, b);
    let v = tape.value(c);
    assert_eq!(v[[0, 0]], 19.0);
    assert_eq!(v[[0, 1]], 22.0);
    assert_eq!(v[[1, 0]], 43.0);
    assert_eq!(v[[1, 1]], 50.0);
}

#[test]
fn softmax_rows_are_distributions() {
    let tape = Tape::new();
    let x = tape.constant(rand_array(52, &[5, 7], -3.0, 3.0));
    let y = tape.softmax(x, 1);
    let v = tape.value(y);
    for i in 0..5 {
        let s: f32 = (0..7).map(|j| v[[i, j]]).sum();
        assert!((s - 1.0).abs() < 1e-5);
        assert!((0..7).all(|j| v[[i, j]] >= 0.0));
    }
}

#[test]
fn fd_layer_norm() {
    let x = rand_array(53, &[3, 6], -1.0, 1.0);
    fd_check("layer_norm_x", &x, 54, 3e-2, |t, v| {
        let g = t.constant(rand_array(55, &[6], 0.5, 1.5));
        let b = t.constant(rand_array(56, &[6], -0.5, 0.5));
        t.layer_norm(v, g, b, 1e-5)
    });
    let g0 = rand_array(57, &[6], 0.5, 1.5);
    fd_check("layer_norm_gamma", &g0, 58, 3e-2, |t, v| {
        let x = t.constant(rand_array(59, &[3, 6], -1.0, 1.0));
        let b = t.constant(rand_array(60, &[6], -0.5, 0.5));
        t.layer_norm(x, v, b, 1e-5)
    });
    let b0 = rand_array(61, &[6], -0.5, 0.5);
    fd_check("layer_norm_beta", &b0, 62, 3e-2, |t, v| {
        let x = t.constant(rand_array(63, &[3, 6], -1.0, 1.0));
        let g = t.constant(rand_array(64, &[6], 0.5, 1.5));
        t.layer_norm(x, g, v, 1e-5)
    });
}

#[test]
fn fd_conv2d() {
    let spec = Conv2dSpec {
        kernel: 3,
        stride: 1,
        pad: 1,
        groups: 1,
    };
    let x = rand_array(70, &[2, 3, 6, 6], -1.0, 1.0);
    fd_check("conv2d_x", &x, 71, 5e-2, |t, v| {
        let w = t.constant(rand_array(72, &[4, 3, 3, 3], -0.5, 0.5));
        let b = t.constant(rand_array(73, &[4], -0.1, 0.1));
        t.conv2d(v, w, Some(b), spec)
    });
    let w = rand_array(74, &[4, 3, 3, 3], -0.5, 0.5);
    fd_check("conv2d_w", &w, 75, 5e-2, |t, v| {
        let x = t.constant(rand_array(76, &[2, 3, 6, 6], -1.0, 1.0));
        t.conv2d(x, v, None, spec)
    });
    let b = rand_array(77, &[4], -0.1, 0.1);
    fd_check("conv2d_b", &b, 78, 5e-2, |t, v| {
        let x = t.constant(rand_array(79, &[2, 3, 6, 6], -1.0, 1.0));
        let w = t.constant(rand_array(80, &[4, 3, 3, 3], -0.5, 0.5));
        t.conv2d(x, w, Some(v), spec)
    });
}

#[test]
fn fd_conv2d_strided_and_grouped() {
    let spec = Conv2dSpec {
        kernel: 3,
        stride: 2,
        pad: 1,
        groups: 2,
    };
    let x = rand_array(81, &[1, 4, 6, 6], -1.0, 1.0);
    fd_check("conv2d_g2_x", &x, 82, 5e-2, |t, v| {
        let w = t.constant(rand_array(83, &[6, 2, 3, 3], -0.5, 0.5));
        t.conv2d(v, w, None, spec)
    });
    let w = rand_array(84, &[6, 2, 3, 3], -0.5, 0.5);
    fd_check("conv2d_g2_w", &w, 85, 5e-2, |t, v| {
        let x = t.constant(rand_array(86, &[1, 4, 6, 6], -1.0, 1.0));
        t.conv2d(x, v, None, spec)
    });
}

#[test]
fn fd_conv_transpose2d() {
    let spec = ConvT2dSpec::up2x();
    let x = rand_array(87, &[1, 3, 4, 4], -1.0, 1.0);
    fd_check("convT_x", &x, 88, 5e-2, |t, v| {
        let w = t.constant(rand_array(89, &[3, 2, 4, 4], -0.3, 0.3));
        let b = t.constant(rand_array(90, &[2], -0.1, 0.1));
        t.conv_transpose2d(v, w, Some(b), spec)
    });
    let w = rand_array(91, &[3, 2, 4, 4], -0.3, 0.3);
    fd_check("convT_w", &w, 92, 5e-2, |t, v| {
        let x = t.constant(rand_array(93, &[1, 3, 4, 4], -1.0, 1.0));
        t.conv_transpose2d(x, v, None, spec)
    });
}

#[test]
fn conv_transpose_doubles_resolution() {
    let tape = Tape::new();
    let x = tape.constant(rand_array(94, &[1, 3, 5, 7], -1.0, 1.0));
    let w = tape.constant(rand_array(95, &[3, 2, 4, 4], -0.3, 0.3));
    let y = tape.conv_transpose2d(x, w, None, ConvT2dSpec::up2x());
    assert_eq!(tape.shape(y), vec![1, 2, 10, 14]);
}

#[test]
fn fd_upsample2x() {
    let x = rand_array(96, &[1, 2, 4, 5], -1.0, 1.0);
    fd_check("upsample2x", &x, 97, 3e-2, |t, v| t.upsample2x(v));
}

#[test]
fn upsample_preserves_channel_sums() {
    // a per-pixel distribution over channels stays a distribution
    let tape = Tape::new();
    let logits = tape.constant(rand_array(98, &[1, 5, 6, 6], -2.0, 2.0));
    let probs = tape.softmax(logits, 1);
    let up = tape.upsample2x(probs);
    let v = tape.value(up);
    for i in 0..12 {
        for j in 0..12 {
            let s: f32 = (0..5).map(|d| v[[0, d, i, j]]).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn fd_unfold_fold() {
    let x = rand_array(99, &[1, 2, 6, 6], -1.0, 1.0);
    fd_check("unfold", &x, 100, 3e-2, |t, v| t.unfold(v, 3, 2, 1));
    let (ho, wo) = super::ops::unfold_out_dims(6, 6, 3, 2, 1);
    let p = rand_array(101, &[1, ho * wo, 2 * 9], -1.0, 1.0);
    fd_check("fold_mean", &p, 102, 3e-2, |t, v| {
        t.fold_mean(v, 2, 6, 6, 3, 2, 1)
    });
}

#[test]
fn fold_inverts_unfold_under_count_normalization() {
    let tape = Tape::new();
    let x0 = rand_array(103, &[2, 3, 8, 8], -1.0, 1.0);
    let x = tape.constant(x0.clone());
    let patches = tape.unfold(x, 3, 2, 1);
    let back = tape.fold_mean(patches, 3, 8, 8, 3, 2, 1);
    let v = tape.value(back);
    for (a, b) in v.iter().zip(x0.iter()) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn fd_warp_ops_through_tape() {
    // disparity gradient through the tape wrapper
    let d0 = rand_array(104, &[1, 6, 8], -0.4, 0.4).mapv(|v| v + 0.5);
    fd_check("tape_warp_disp", &d0, 105, 5e-2, |t, v| {
        let src = t.constant(
            crate::datakit::synth::band_limited_image(7, 6, 8, 1)
                .insert_axis(ndarray::Axis(0))
                .to_owned()
                .into_dyn(),
        );
        t.warp_horizontal(src, v).0
    });
    // probability gradient through blend
    let p0 = rand_array(106, &[1, 6, 8, 3], 0.2, 0.8);
    fd_check("tape_blend_probs", &p0, 107, 5e-2, |t, v| {
        let src = t.constant(
            crate::datakit::synth::band_limited_image(8, 6, 8, 1)
                .insert_axis(ndarray::Axis(0))
                .to_owned()
                .into_dyn(),
        );
        let stack = t.shift_stack(src, &[-1, 0, 1]);
        t.implicit_blend(stack, v)
    });
}

#[test]
fn fd_median_blur() {
    // distinct values so the argmedian is stable under FD probes
    let mut x = rand_array(108, &[1, 5, 5, 1], -1.0, 1.0);
    for (k, v) in x.iter_mut().enumerate() {
        *v += k as f32 * 1e-1;
    }
    fd_check("median_blur3", &x, 109, 5e-2, |t, v| t.median_blur3(v));
}

#[test]
fn fd_compose_with_selectors() {
    let sel = {
        let mut rng = derive_rng(110, "sel", 0);
        ndarray::Array4::from_shape_fn((2, 1, 4, 5), |_| f32::from(rng.gen_bool(0.5)))
    };
    // make selectors disjoint: layer 1 only where layer 0 is off
    let mut sel = sel;
    for ti in 0..1 {
        for i in 0..4 {
            for j in 0..5 {
                if sel[[0, ti, i, j]] == 1.0 {
                    sel[[1, ti, i, j]] = 0.0;
                }
            }
        }
    }
    let x = rand_array(111, &[1, 4, 5, 2], -1.0, 1.0);
    let sel2 = sel.clone();
    fd_check("compose", &x, 112, 3e-2, move |t, v| {
        let other = t.constant(rand_array(113, &[1, 4, 5, 2], -1.0, 1.0));
        t.compose_with_selectors(&[v, other], &sel2)
    });
}

#[test]
fn conv_is_bitwise_deterministic_across_parallelism() {
    let x0 = rand_array(114, &[4, 8, 12, 12], -1.0, 1.0);
    let w0 = rand_array(115, &[8, 8, 3, 3], -0.3, 0.3);
    let run = || {
        let tape = Tape::new();
        let x = tape.param(x0.clone());
        let w = tape.param(w0.clone());
        let y = tape.conv2d(x, w, None, Conv2dSpec::same3());
        let loss = tape.mean_all(y);
        let mut grads = tape.backward(loss);
        (
            tape.value(y).as_slice().unwrap().to_vec(),
            grads.take(w).unwrap(),
            grads.take(x).unwrap(),
        )
    };
    let parallel = run();
    let sequential = scope_sequential(run);
    assert_eq!(parallel.0, sequential.0);
    assert_eq!(parallel.1, sequential.1);
    assert_eq!(parallel.2, sequential.2);
}
