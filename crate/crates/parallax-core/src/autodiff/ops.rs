//! Elementwise, shaping, reduction, and linear-algebra ops.

use super::{Edge, Tape, Var};
use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayD, Axis, Ix2, Ix3, Ix4, IxDyn, Slice};
use std::sync::Arc;

/// Reduce `g` (shaped like the broadcast result) down to `target_shape` by
/// summing over broadcast axes (leading axes and size-1 axes).
fn reduce_to_shape(g: &ArrayD<f32>, target_shape: &[usize]) -> ArrayD<f32> {
    let mut out = g.clone();
    while out.ndim() > target_shape.len() {
        out = out.sum_axis(Axis(0));
    }
    for (ax, (&od, &td)) in out
        .shape()
        .to_vec()
        .iter()
        .zip(target_shape.iter())
        .enumerate()
    {
        if od != td {
            debug_assert_eq!(td, 1, "broadcast mismatch");
            out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    out
}

impl Tape {
    fn unary(
        &self,
        x: Var,
        value: ArrayD<f32>,
        pullback: impl Fn(&ArrayD<f32>) -> ArrayD<f32> + 'static,
    ) -> Var {
        let rg = self.requires_grad(x);
        let edges = if rg {
            vec![Edge {
                parent: x.id,
                pullback: Box::new(pullback),
            }]
        } else {
            Vec::new()
        };
        self.push(value, rg, edges)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add: shape mismatch");
        let value = &*va + &*vb;
        let mut edges = Vec::new();
        if self.requires_grad(a) {
            edges.push(Edge {
                parent: a.id,
                pullback: Box::new(|g| g.clone()),
            });
        }
        if self.requires_grad(b) {
            edges.push(Edge {
                parent: b.id,
                pullback: Box::new(|g| g.clone()),
            });
        }
        self.push(value, !edges.is_empty(), edges)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub: shape mismatch");
        let value = &*va - &*vb;
        let mut edges = Vec::new();
        if self.requires_grad(a) {
            edges.push(Edge {
                parent: a.id,
                pullback: Box::new(|g| g.clone()),
            });
        }
        if self.requires_grad(b) {
            edges.push(Edge {
                parent: b.id,
                pullback: Box::new(|g| -g),
            });
        }
        self.push(value, !edges.is_empty(), edges)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul: shape mismatch");
        let value = &*va * &*vb;
        let mut edges = Vec::new();
        if self.requires_grad(a) {
            let vb2 = Arc::clone(&vb);
            edges.push(Edge {
                parent: a.id,
                pullback: Box::new(move |g| g * &*vb2),
            });
        }
        if self.requires_grad(b) {
            let va2 = Arc::clone(&va);
            edges.push(Edge {
                parent: b.id,
                pullback: Box::new(move |g| g * &*va2),
            });
        }
        self.push(value, !edges.is_empty(), edges)
    }

    /// `x * mul + add` elementwise with scalars.
    pub fn affine(&self, x: Var, mul: f32, add: f32) -> Var {
        let v = self.value(x);
        let value = v.mapv(|t| t * mul + add);
        self.unary(x, value, move |g| g.mapv(|t| t * mul))
    }

    /// Broadcasting add: `b` must broadcast to `a`'s shape.
    pub fn add_bcast(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let value = &*va + &*vb;
        assert_eq!(value.shape(), va.shape(), "add_bcast: a must be the wide side");
        let mut edges = Vec::new();
        if self.requires_grad(a) {
            edges.push(Edge {
                parent: a.id,
                pullback: Box::new(|g| g.clone()),
            });
        }
        if self.requires_grad(b) {
            let bshape = vb.shape().to_vec();
            edges.push(Edge {
                parent: b.id,
                pullback: Box::new(move |g| reduce_to_shape(g, &bshape)),
            });
        }
        self.push(value, !edges.is_empty(), edges)
    }

    /// Broadcasting multiply: `b` must broadcast to `a`'s shape.
    pub fn mul_bcast(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let value = &*va * &*vb;
        assert_eq!(value.shape(), va.shape(), "mul_bcast: a must be the wide side");
        let mut edges = Vec::new();
        if self.requires_grad(a) {
            let vb2 = Arc::clone(&vb);
            edges.push(Edge {
                parent: a.id,
                pullback: Box::new(move |g| g * &*vb2),
            });
        }
        if self.requires_grad(b) {
            let va2 = Arc::clone(&va);
            let bshape = vb.shape().to_vec();
            edges.push(Edge {
                parent: b.id,
                pullback: Box::new(move |g| reduce_to_shape(&(g * &*va2), &bshape)),
            });
        }
        self.push(value, !edges.is_empty(), edges)
    }

    pub fn leaky_relu(&self, x: Var, slope: f32) -> Var {
        let v = self.value(x);
        let value = v.mapv(|t| if t > 0.0 { t } else { slope * t });
        let vx = Arc::clone(&v);
        self.unary(x, value, move |g| {
            let mut out = g.clone();
            out.zip_mut_with(&vx, |gv, &xv| {
                if xv <= 0.0 {
                    *gv *= slope;
                }
            });
            out
        })
    }

    pub fn relu(&self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn abs(&self, x: Var) -> Var {
        let v = self.value(x);
        let value = v.mapv(f32::abs);
        let vx = Arc::clone(&v);
        self.unary(x, value, move |g| {
            let mut out = g.clone();
            out.zip_mut_with(&vx, |gv, &xv| {
                *gv *= if xv > 0.0 {
                    1.0
                } else if xv < 0.0 {
                    -1.0
                } else {
                    0.0
                };
            });
            out
        })
    }

    /// Clamp with pass-through sub-gradient on the inclusive interior.
    pub fn clamp(&self, x: Var, lo: f32, hi: f32) -> Var {
        let v = self.value(x);
        let value = v.mapv(|t| t.clamp(lo, hi));
        let vx = Arc::clone(&v);
        self.unary(x, value, move |g| {
            let mut out = g.clone();
            out.zip_mut_with(&vx, |gv, &xv| {
                if xv < lo || xv > hi {
                    *gv = 0.0;
                }
            });
            out
        })
    }

    pub fn mean_all(&self, x: Var) -> Var {
        let v = self.value(x);
        let n = v.len();
        let value = ArrayD::from_elem(IxDyn(&[]), v.sum() / n as f32);
        let shape = v.shape().to_vec();
        self.unary(x, value, move |g| {
            let gs = g[[]] / n as f32;
            ArrayD::from_elem(IxDyn(&shape), gs)
        })
    }

    pub fn concat(&self, axis: usize, vars: &[Var]) -> Var {
        assert!(!vars.is_empty());
        let values: Vec<Arc<ArrayD<f32>>> = vars.iter().map(|&v| self.value(v)).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let value = ndarray::concatenate(Axis(axis), &views).expect("concat: incompatible shapes");
        let mut edges = Vec::new();
        let mut offset = 0usize;
        for (k, &var) in vars.iter().enumerate() {
            let len = values[k].shape()[axis];
            if self.requires_grad(var) {
                let (start, end) = (offset, offset + len);
                edges.push(Edge {
                    parent: var.id,
                    pullback: Box::new(move |g| {
                        g.slice_axis(Axis(axis), Slice::from(start..end)).to_owned()
                    }),
                });
            }
            offset += len;
        }
        self.push(value, !edges.is_empty(), edges)
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x);
        let orig = v.shape().to_vec();
        let value = v
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: element count mismatch");
        self.unary(x, value, move |g| {
            g.as_standard_layout()
                .to_owned()
                .into_shape_with_order(IxDyn(&orig))
                .unwrap()
        })
    }

    pub fn permute(&self, x: Var, axes: &[usize]) -> Var {
        let v = self.value(x);
        let value = v
            .view()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .to_owned();
        let mut inverse = vec![0usize; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.unary(x, value, move |g| {
            g.view()
                .permuted_axes(IxDyn(&inverse))
                .as_standard_layout()
                .to_owned()
        })
    }

    /// Gather along `axis` at the given indices.
    pub fn index_select(&self, x: Var, axis: usize, indices: &[usize]) -> Var {
        let v = self.value(x);
        let value = v.select(Axis(axis), indices);
        let idx = indices.to_vec();
        let full = v.shape().to_vec();
        self.unary(x, value, move |g| {
            let mut out = ArrayD::<f32>::zeros(IxDyn(&full));
            for (k, &i) in idx.iter().enumerate() {
                let mut dst = out.index_axis_mut(Axis(axis), i);
                dst += &g.index_axis(Axis(axis), k);
            }
            out
        })
    }

    /// Forward difference along `axis`: `out = x[1..] - x[..-1]`.
    pub fn diff(&self, x: Var, axis: usize) -> Var {
        let v = self.value(x);
        let n = v.shape()[axis];
        assert!(n >= 2, "diff: axis too short");
        let hi = v.slice_axis(Axis(axis), Slice::from(1..n));
        let lo = v.slice_axis(Axis(axis), Slice::from(0..n - 1));
        let value = (&hi - &lo).to_owned();
        let full = v.shape().to_vec();
        self.unary(x, value, move |g| {
            let mut out = ArrayD::<f32>::zeros(IxDyn(&full));
            {
                let mut hi = out.slice_axis_mut(Axis(axis), Slice::from(1..n));
                hi += g;
            }
            {
                let mut lo = out.slice_axis_mut(Axis(axis), Slice::from(0..n - 1));
                lo -= g;
            }
            out
        })
    }

    /// Softmax over `axis` with max-subtraction.
    pub fn softmax(&self, x: Var, axis: usize) -> Var {
        let v = self.value(x);
        let max = v.map_axis(Axis(axis), |lane| {
            lane.iter().cloned().fold(f32::NEG_INFINITY, f32::max)
        });
        let mut value = (*v).clone();
        let maxb = max.insert_axis(Axis(axis));
        value.zip_mut_with(&maxb.broadcast(v.shape()).unwrap(), |a, &m| {
            *a = (*a - m).exp()
        });
        let sum = value.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        value.zip_mut_with(&sum.broadcast(v.shape()).unwrap(), |a, &s| *a /= s);
        let y = Arc::new(value.clone());
        self.unary(x, value, move |g| {
            let dot = (g * &*y).sum_axis(Axis(axis)).insert_axis(Axis(axis));
            let mut out = g.clone();
            out.zip_mut_with(&dot.broadcast(g.shape()).unwrap(), |gv, &d| *gv -= d);
            out * &*y
        })
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f32) -> Var {
        let v = self.value(x);
        let vg = self.value(gamma);
        let vb = self.value(beta);
        let d = *v.shape().last().expect("layer_norm: needs at least 1 axis");
        assert_eq!(vg.shape(), [d]);
        assert_eq!(vb.shape(), [d]);
        let last = v.ndim() - 1;
        let mu = v.mean_axis(Axis(last)).unwrap().insert_axis(Axis(last));
        let centered = &*v - &mu;
        let var = centered
            .mapv(|t| t * t)
            .mean_axis(Axis(last))
            .unwrap()
            .insert_axis(Axis(last));
        let inv_std = var.mapv(|t| 1.0 / (t + eps).sqrt());
        let norm = &centered * &inv_std; // broadcast over last axis
        let mut value = norm.clone();
        value.zip_mut_with(&vg.broadcast(v.shape()).unwrap(), |a, &g| *a *= g);
        value.zip_mut_with(&vb.broadcast(v.shape()).unwrap(), |a, &b| *a += b);

        let norm = Arc::new(norm);
        let inv_std = Arc::new(inv_std);
        let mut edges = Vec::new();
        if self.requires_grad(x) {
            let norm2 = Arc::clone(&norm);
            let inv_std2 = Arc::clone(&inv_std);
            let vg2 = Arc::clone(&vg);
            edges.push(Edge {
                parent: x.id,
                pullback: Box::new(move |g| {
                    // dy = g * gamma; dx = inv_std * (dy - mean(dy) - norm * mean(dy*norm))
                    let mut dy = g.clone();
                    dy.zip_mut_with(&vg2.broadcast(g.shape()).unwrap(), |a, &gm| *a *= gm);
                    let m1 = dy.mean_axis(Axis(last)).unwrap().insert_axis(Axis(last));
                    let m2 = (&dy * &*norm2)
                        .mean_axis(Axis(last))
                        .unwrap()
                        .insert_axis(Axis(last));
                    let mut out = dy;
                    out.zip_mut_with(&m1.broadcast(g.shape()).unwrap(), |a, &m| *a -= m);
                    out -= &(&*norm2 * &m2);
                    out * &*inv_std2
                }),
            });
        }
        if self.requires_grad(gamma) {
            let norm2 = Arc::clone(&norm);
            edges.push(Edge {
                parent: gamma.id,
                pullback: Box::new(move |g| {
                    let prod = g * &*norm2;
                    reduce_to_shape(&prod, &[d])
                        .into_shape_with_order(IxDyn(&[d]))
                        .unwrap()
                }),
            });
        }
        if self.requires_grad(beta) {
            edges.push(Edge {
                parent: beta.id,
                pullback: Box::new(move |g| {
                    reduce_to_shape(g, &[d])
                        .into_shape_with_order(IxDyn(&[d]))
                        .unwrap()
                }),
            });
        }
        self.push(value, !edges.is_empty(), edges)
    }

    /// `[m, k] @ [k, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let a2 = va.view().into_dimensionality::<Ix2>().expect("matmul: a 2-d");
        let b2 = vb.view().into_dimensionality::<Ix2>().expect("matmul: b 2-d");
        let (m, k) = a2.dim();
        let (k2, n) = b2.dim();
        assert_eq!(k, k2, "matmul: inner dims");
        let mut out = Array2::<f32>::zeros((m, n));
        general_mat_mul(1.0, &a2, &b2, 0.0, &mut out);
        let mut edges = Vec::new();
        if self.requires_grad(a) {
            let vb2 = Arc::clone(&vb);
            edges.push(Edge {
                parent: a.id,
                pullback: Box::new(move |g| {
                    let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                    let b2 = vb2.view().into_dimensionality::<Ix2>().unwrap();
                    let mut da = Array2::<f32>::zeros((m, k));
                    general_mat_mul(1.0, &g2, &b2.t(), 0.0, &mut da);
                    da.into_dyn()
                }),
            });
        }
        if self.requires_grad(b) {
            let va2 = Arc::clone(&va);
            edges.push(Edge {
                parent: b.id,
                pullback: Box::new(move |g| {
                    let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                    let a2 = va2.view().into_dimensionality::<Ix2>().unwrap();
                    let mut db = Array2::<f32>::zeros((k, n));
                    general_mat_mul(1.0, &a2.t(), &g2, 0.0, &mut db);
                    db.into_dyn()
                }),
            });
        }
        self.push(out.into_dyn(), !edges.is_empty(), edges)
    }

    /// Batched matmul `[B, m, k] @ [B, k, n]`.
    pub fn bmm(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let a3 = va.view().into_dimensionality::<Ix3>().expect("bmm: a 3-d");
        let b3 = vb.view().into_dimensionality::<Ix3>().expect("bmm: b 3-d");
        let (bs, m, k) = a3.dim();
        let (bs2, k2, n) = b3.dim();
        assert_eq!(bs, bs2, "bmm: batch dims");
        assert_eq!(k, k2, "bmm: inner dims");
        let mut out = ndarray::Array3::<f32>::zeros((bs, m, n));
        for i in 0..bs {
            let mut o = out.index_axis_mut(Axis(0), i);
            general_mat_mul(
                1.0,
                &a3.index_axis(Axis(0), i),
                &b3.index_axis(Axis(0), i),
                0.0,
                &mut o,
            );
        }
        let mut edges = Vec::new();
        if self.requires_grad(a) {
            let vb2 = Arc::clone(&vb);
            edges.push(Edge {
                parent: a.id,
                pullback: Box::new(move |g| {
                    let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                    let b3 = vb2.view().into_dimensionality::<Ix3>().unwrap();
                    let mut da = ndarray::Array3::<f32>::zeros((bs, m, k));
                    for i in 0..bs {
                        let mut o = da.index_axis_mut(Axis(0), i);
                        general_mat_mul(
                            1.0,
                            &g3.index_axis(Axis(0), i),
                            &b3.index_axis(Axis(0), i).t(),
                            0.0,
                            &mut o,
                        );
                    }
                    da.into_dyn()
                }),
            });
        }
        if self.requires_grad(b) {
            let va2 = Arc::clone(&va);
            edges.push(Edge {
                parent: b.id,
                pullback: Box::new(move |g| {
                    let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                    let a3 = va2.view().into_dimensionality::<Ix3>().unwrap();
                    let mut db = ndarray::Array3::<f32>::zeros((bs, k, n));
                    for i in 0..bs {
                        let mut o = db.index_axis_mut(Axis(0), i);
                        general_mat_mul(
                            1.0,
                            &a3.index_axis(Axis(0), i).t(),
                            &g3.index_axis(Axis(0), i),
                            0.0,
                            &mut o,
                        );
                    }
                    db.into_dyn()
                }),
            });
        }
        self.push(out.into_dyn(), !edges.is_empty(), edges)
    }

    /// Bilinear 2x upsampling of `[N, C, H, W]` (half-pixel alignment).
    pub fn upsample2x(&self, x: Var) -> Var {
        let v = self.value(x);
        let x4 = v.view().into_dimensionality::<Ix4>().expect("upsample2x: 4-d");
        let (n, c, h, w) = x4.dim();
        let (taps_y, taps_x) = (upsample_taps(h), upsample_taps(w));
        let mut out = Array4::<f32>::zeros((n, c, 2 * h, 2 * w));
        for ni in 0..n {
            for ci in 0..c {
                for (oy, &(y0, y1, fy)) in taps_y.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in taps_x.iter().enumerate() {
                        let v00 = x4[[ni, ci, y0, x0]];
                        let v01 = x4[[ni, ci, y0, x1]];
                        let v10 = x4[[ni, ci, y1, x0]];
                        let v11 = x4[[ni, ci, y1, x1]];
                        out[[ni, ci, oy, ox]] = v00 * (1.0 - fy) * (1.0 - fx)
                            + v01 * (1.0 - fy) * fx
                            + v10 * fy * (1.0 - fx)
                            + v11 * fy * fx;
                    }
                }
            }
        }
        self.unary(x, out.into_dyn(), move |g| {
            let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
            let mut dx = Array4::<f32>::zeros((n, c, h, w));
            for ni in 0..n {
                for ci in 0..c {
                    for (oy, &(y0, y1, fy)) in taps_y.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in taps_x.iter().enumerate() {
                            let gv = g4[[ni, ci, oy, ox]];
                            dx[[ni, ci, y0, x0]] += gv * (1.0 - fy) * (1.0 - fx);
                            dx[[ni, ci, y0, x1]] += gv * (1.0 - fy) * fx;
                            dx[[ni, ci, y1, x0]] += gv * fy * (1.0 - fx);
                            dx[[ni, ci, y1, x1]] += gv * fy * fx;
                        }
                    }
                }
            }
            dx.into_dyn()
        })
    }

    /// Extract overlapping patches: `[N, C, H, W] -> [N, L, C*k*k]` with
    /// symmetric zero padding.
    pub fn unfold(&self, x: Var, k: usize, stride: usize, pad: usize) -> Var {
        let v = self.value(x);
        let x4 = v.view().into_dimensionality::<Ix4>().expect("unfold: 4-d");
        let (n, c, h, w) = x4.dim();
        let (ho, wo) = unfold_out_dims(h, w, k, stride, pad);
        let l = ho * wo;
        let mut out = ndarray::Array3::<f32>::zeros((n, l, c * k * k));
        for ni in 0..n {
            for py in 0..ho {
                for px in 0..wo {
                    let p = py * wo + px;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (py * stride + ky) as i64 - pad as i64;
                                let ix = (px * stride + kx) as i64 - pad as i64;
                                if iy >= 0 && iy < h as i64 && ix >= 0 && ix < w as i64 {
                                    out[[ni, p, (ci * k + ky) * k + kx]] =
                                        x4[[ni, ci, iy as usize, ix as usize]];
                                }
                            }
                        }
                    }
                }
            }
        }
        self.unary(x, out.into_dyn(), move |g| {
            let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
            let mut dx = Array4::<f32>::zeros((n, c, h, w));
            for ni in 0..n {
                for py in 0..ho {
                    for px in 0..wo {
                        let p = py * wo + px;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (py * stride + ky) as i64 - pad as i64;
                                    let ix = (px * stride + kx) as i64 - pad as i64;
                                    if iy >= 0 && iy < h as i64 && ix >= 0 && ix < w as i64 {
                                        dx[[ni, ci, iy as usize, ix as usize]] +=
                                            g3[[ni, p, (ci * k + ky) * k + kx]];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            dx.into_dyn()
        })
    }

    /// Inverse of [`Tape::unfold`]: scatter-add patches into the image and
    /// divide by the per-pixel coverage count.
    pub fn fold_mean(
        &self,
        patches: Var,
        c: usize,
        h: usize,
        w: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Var {
        let v = self.value(patches);
        let p3 = v.view().into_dimensionality::<Ix3>().expect("fold: 3-d");
        let (n, l, ckk) = p3.dim();
        assert_eq!(ckk, c * k * k, "fold: channel/patch mismatch");
        let (ho, wo) = unfold_out_dims(h, w, k, stride, pad);
        assert_eq!(l, ho * wo, "fold: patch count mismatch");
        let counts = Arc::new(coverage_counts(h, w, k, stride, pad));
        let mut out = Array4::<f32>::zeros((n, c, h, w));
        for ni in 0..n {
            for py in 0..ho {
                for px in 0..wo {
                    let p = py * wo + px;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (py * stride + ky) as i64 - pad as i64;
                                let ix = (px * stride + kx) as i64 - pad as i64;
                                if iy >= 0 && iy < h as i64 && ix >= 0 && ix < w as i64 {
                                    out[[ni, ci, iy as usize, ix as usize]] +=
                                        p3[[ni, p, (ci * k + ky) * k + kx]];
                                }
                            }
                        }
                    }
                }
            }
        }
        {
            let counts = Arc::clone(&counts);
            for ni in 0..n {
                for ci in 0..c {
                    let mut plane = out.slice_mut(ndarray::s![ni, ci, .., ..]);
                    plane.zip_mut_with(&counts, |o, &cnt| *o /= cnt);
                }
            }
        }
        self.unary(patches, out.into_dyn(), move |g| {
            let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
            let mut dp = ndarray::Array3::<f32>::zeros((n, l, c * k * k));
            for ni in 0..n {
                for py in 0..ho {
                    for px in 0..wo {
                        let p = py * wo + px;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (py * stride + ky) as i64 - pad as i64;
                                    let ix = (px * stride + kx) as i64 - pad as i64;
                                    if iy >= 0 && iy < h as i64 && ix >= 0 && ix < w as i64 {
                                        dp[[ni, p, (ci * k + ky) * k + kx]] = g4
                                            [[ni, ci, iy as usize, ix as usize]]
                                            / counts[[iy as usize, ix as usize]];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            dp.into_dyn()
        })
    }
}

/// Output grid of an unfold with the given geometry.
pub fn unfold_out_dims(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    assert!(stride > 0, "stride must be positive");
    assert!(h + 2 * pad >= k && w + 2 * pad >= k, "patch exceeds padded input");
    ((h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1)
}

/// How many patches cover each pixel.
pub fn coverage_counts(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Array2<f32> {
    let (ho, wo) = unfold_out_dims(h, w, k, stride, pad);
    let mut counts = Array2::<f32>::zeros((h, w));
    for py in 0..ho {
        for px in 0..wo {
            for ky in 0..k {
                for kx in 0..k {
                    let iy = (py * stride + ky) as i64 - pad as i64;
                    let ix = (px * stride + kx) as i64 - pad as i64;
                    if iy >= 0 && iy < h as i64 && ix >= 0 && ix < w as i64 {
                        counts[[iy as usize, ix as usize]] += 1.0;
                    }
                }
            }
        }
    }
    assert!(
        counts.iter().all(|&c| c > 0.0),
        "unfold geometry leaves uncovered pixels"
    );
    counts
}

fn upsample_taps(size: usize) -> Vec<(usize, usize, f32)> {
    (0..2 * size)
        .map(|o| {
            let src = (o as f32 + 0.5) / 2.0 - 0.5;
            let src = src.clamp(0.0, (size - 1) as f32);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(size - 1);
            (i0, i1, src - i0 as f32)
        })
        .collect()
}
