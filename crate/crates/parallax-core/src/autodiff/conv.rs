//! 2-D convolution and transposed convolution via im2col + GEMM.
//!
//! Frames are processed in parallel; weight-gradient partials are folded in
//! frame order so results do not depend on the thread count. The transposed
//! convolution reuses the same column machinery with the data/weight roles
//! swapped (its forward is the convolution's backward-data pass).

use super::{Edge, Tape, Var};
use crate::parallelism::ordered_map;
use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, Ix1, Ix4};
use std::sync::Arc;

#[derive(Debug, Clone, Copy)]
pub struct Conv2dSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl Conv2dSpec {
    pub fn same3() -> Self {
        Conv2dSpec {
            kernel: 3,
            stride: 1,
            pad: 1,
            groups: 1,
        }
    }

    pub fn down3() -> Self {
        Conv2dSpec {
            kernel: 3,
            stride: 2,
            pad: 1,
            groups: 1,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }
}

/// Transposed convolution geometry: `out = (in - 1) * stride - 2 * pad + kernel`.
#[derive(Debug, Clone, Copy)]
pub struct ConvT2dSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvT2dSpec {
    /// Exact 2x upsampling.
    pub fn up2x() -> Self {
        ConvT2dSpec {
            kernel: 4,
            stride: 2,
            pad: 1,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.stride + self.kernel - 2 * self.pad,
            (w - 1) * self.stride + self.kernel - 2 * self.pad,
        )
    }
}

/// `[C, H, W] -> [C*k*k, Ho*Wo]` with zero padding.
fn im2col(
    x: ArrayView3<'_, f32>,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<f32> {
    let (c, h, w) = x.dim();
    let mut cols = Array2::<f32>::zeros((c * k * k, ho * wo));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let mut out_row = cols.row_mut(row);
                for py in 0..ho {
                    let iy = (py * stride + ky) as i64 - pad as i64;
                    if iy < 0 || iy >= h as i64 {
                        continue;
                    }
                    for px in 0..wo {
                        let ix = (px * stride + kx) as i64 - pad as i64;
                        if ix < 0 || ix >= w as i64 {
                            continue;
                        }
                        out_row[py * wo + px] = x[[ci, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter columns back into the image.
fn col2im(
    cols: ArrayView2<'_, f32>,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array3<f32> {
    let mut x = Array3::<f32>::zeros((c, h, w));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let col_row = cols.row(row);
                for py in 0..ho {
                    let iy = (py * stride + ky) as i64 - pad as i64;
                    if iy < 0 || iy >= h as i64 {
                        continue;
                    }
                    for px in 0..wo {
                        let ix = (px * stride + kx) as i64 - pad as i64;
                        if ix < 0 || ix >= w as i64 {
                            continue;
                        }
                        x[[ci, iy as usize, ix as usize]] += col_row[py * wo + px];
                    }
                }
            }
        }
    }
    x
}

fn conv_forward_frame(
    x: ArrayView3<'_, f32>,
    w: &Array4<f32>,
    bias: Option<&ndarray::Array1<f32>>,
    spec: Conv2dSpec,
) -> Array3<f32> {
    let (c_in, h, win) = x.dim();
    let (c_out, cg, k, _) = w.dim();
    let g = spec.groups;
    debug_assert_eq!(cg, c_in / g);
    let (ho, wo) = spec.out_dims(h, win);
    let cols = im2col(x, k, spec.stride, spec.pad, ho, wo);
    let mut y = Array3::<f32>::zeros((c_out, ho, wo));
    let rows_per_group = (c_in / g) * k * k;
    let out_per_group = c_out / g;
    for gi in 0..g {
        let wg = w
            .slice(s![gi * out_per_group..(gi + 1) * out_per_group, .., .., ..])
            .to_owned()
            .into_shape_with_order((out_per_group, rows_per_group))
            .unwrap();
        let colg = cols.slice(s![gi * rows_per_group..(gi + 1) * rows_per_group, ..]);
        let mut yflat = Array2::<f32>::zeros((out_per_group, ho * wo));
        general_mat_mul(1.0, &wg, &colg, 0.0, &mut yflat);
        y.slice_mut(s![gi * out_per_group..(gi + 1) * out_per_group, .., ..])
            .assign(&yflat.into_shape_with_order((out_per_group, ho, wo)).unwrap());
    }
    if let Some(b) = bias {
        for co in 0..c_out {
            y.slice_mut(s![co, .., ..]).mapv_inplace(|v| v + b[co]);
        }
    }
    y
}

impl Tape {
    /// Convolution of `x: [N, C_in, H, W]` with `w: [C_out, C_in/g, k, k]`
    /// and optional bias `[C_out]`.
    pub fn conv2d(&self, x: Var, w: Var, bias: Option<Var>, spec: Conv2dSpec) -> Var {
        let vx = self.value(x);
        let vw = self.value(w);
        let x4 = vx.view().into_dimensionality::<Ix4>().expect("conv2d: x 4-d");
        let w4 = Arc::new(
            vw.view()
                .into_dimensionality::<Ix4>()
                .expect("conv2d: w 4-d")
                .to_owned(),
        );
        let (n, c_in, h, win) = x4.dim();
        let (c_out, cg, k, k2) = w4.dim();
        assert_eq!(k, k2, "conv2d: square kernels only");
        assert_eq!(k, spec.kernel);
        assert_eq!(
            cg * spec.groups,
            c_in,
            "conv2d: weight shape does not match input channels / groups"
        );
        assert_eq!(c_out % spec.groups, 0, "conv2d: groups must divide C_out");
        let vb = bias.map(|b| self.value(b));
        let b1 = vb
            .as_ref()
            .map(|b| b.view().into_dimensionality::<Ix1>().expect("bias 1-d").to_owned());
        let (ho, wo) = spec.out_dims(h, win);

        let frames = ordered_map(n, |ni| {
            conv_forward_frame(
                x4.index_axis(ndarray::Axis(0), ni),
                &w4,
                b1.as_ref(),
                spec,
            )
        });
        let mut y = Array4::<f32>::zeros((n, c_out, ho, wo));
        for (ni, f) in frames.into_iter().enumerate() {
            y.slice_mut(s![ni, .., .., ..]).assign(&f);
        }

        let mut edges = Vec::new();
        let rows_per_group = cg * k * k;
        let out_per_group = c_out / spec.groups;
        if self.requires_grad(x) {
            let w4c = Arc::clone(&w4);
            edges.push(Edge {
                parent: x.id,
                pullback: Box::new(move |g| {
                    let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                    let parts = ordered_map(n, |ni| {
                        let gf = g4.index_axis(ndarray::Axis(0), ni);
                        let mut cols = Array2::<f32>::zeros((c_in * k * k, ho * wo));
                        for gi in 0..spec.groups {
                            let wg = w4c
                                .slice(s![gi * out_per_group..(gi + 1) * out_per_group, .., .., ..])
                                .to_owned()
                                .into_shape_with_order((out_per_group, rows_per_group))
                                .unwrap();
                            let gflat = gf
                                .slice(s![gi * out_per_group..(gi + 1) * out_per_group, .., ..])
                                .to_owned()
                                .into_shape_with_order((out_per_group, ho * wo))
                                .unwrap();
                            let mut colg = cols
                                .slice_mut(s![gi * rows_per_group..(gi + 1) * rows_per_group, ..]);
                            let mut tmp = Array2::<f32>::zeros((rows_per_group, ho * wo));
                            general_mat_mul(1.0, &wg.t(), &gflat, 0.0, &mut tmp);
                            colg.assign(&tmp);
                        }
                        col2im(cols.view(), c_in, h, win, k, spec.stride, spec.pad, ho, wo)
                    });
                    let mut dx = Array4::<f32>::zeros((n, c_in, h, win));
                    for (ni, p) in parts.into_iter().enumerate() {
                        dx.slice_mut(s![ni, .., .., ..]).assign(&p);
                    }
                    dx.into_dyn()
                }),
            });
        }
        if self.requires_grad(w) {
            let vx2 = Arc::clone(&vx);
            edges.push(Edge {
                parent: w.id,
                pullback: Box::new(move |g| {
                    let x4 = vx2.view().into_dimensionality::<Ix4>().unwrap();
                    let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                    let parts = ordered_map(n, |ni| {
                        let cols = im2col(
                            x4.index_axis(ndarray::Axis(0), ni),
                            k,
                            spec.stride,
                            spec.pad,
                            ho,
                            wo,
                        );
                        let gf = g4.index_axis(ndarray::Axis(0), ni);
                        let mut dw = Array2::<f32>::zeros((c_out, rows_per_group));
                        for gi in 0..spec.groups {
                            let gflat = gf
                                .slice(s![gi * out_per_group..(gi + 1) * out_per_group, .., ..])
                                .to_owned()
                                .into_shape_with_order((out_per_group, ho * wo))
                                .unwrap();
                            let colg =
                                cols.slice(s![gi * rows_per_group..(gi + 1) * rows_per_group, ..]);
                            let mut dwg = dw
                                .slice_mut(s![gi * out_per_group..(gi + 1) * out_per_group, ..]);
                            let mut tmp = Array2::<f32>::zeros((out_per_group, rows_per_group));
                            general_mat_mul(1.0, &gflat, &colg.t(), 0.0, &mut tmp);
                            dwg.assign(&tmp);
                        }
                        dw
                    });
                    let mut acc = Array2::<f32>::zeros((c_out, rows_per_group));
                    for p in parts {
                        acc += &p;
                    }
                    acc.into_shape_with_order((c_out, cg, k, k))
                        .unwrap()
                        .into_dyn()
                }),
            });
        }
        if let Some(b) = bias {
            if self.requires_grad(b) {
                edges.push(Edge {
                    parent: b.id,
                    pullback: Box::new(move |g| {
                        let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                        let mut db = ndarray::Array1::<f32>::zeros(c_out);
                        for ni in 0..n {
                            for co in 0..c_out {
                                db[co] += g4.slice(s![ni, co, .., ..]).sum();
                            }
                        }
                        db.into_dyn()
                    }),
                });
            }
        }
        self.push(y.into_dyn(), !edges.is_empty(), edges)
    }

    /// Transposed convolution of `x: [N, C_in, H, W]` with
    /// `w: [C_in, C_out, k, k]` and optional bias `[C_out]` (groups = 1).
    pub fn conv_transpose2d(&self, x: Var, w: Var, bias: Option<Var>, spec: ConvT2dSpec) -> Var {
        let vx = self.value(x);
        let vw = self.value(w);
        let x4 = vx.view().into_dimensionality::<Ix4>().expect("convT: x 4-d");
        let (n, c_in, h, win) = x4.dim();
        let w4 = vw.view().into_dimensionality::<Ix4>().expect("convT: w 4-d");
        let (c_in2, c_out, k, k2) = w4.dim();
        assert_eq!(c_in, c_in2, "convT: input channels");
        assert_eq!(k, k2);
        assert_eq!(k, spec.kernel);
        let (ho, wo) = spec.out_dims(h, win);
        let vb = bias.map(|b| self.value(b));
        let b1 = vb
            .as_ref()
            .map(|b| b.view().into_dimensionality::<Ix1>().unwrap().to_owned());

        // w viewed as a conv weight [C_in (out role), C_out*k*k]
        let wflat = Arc::new(
            w4.to_owned()
                .into_shape_with_order((c_in, c_out * k * k))
                .unwrap(),
        );

        let wflat_f = Arc::clone(&wflat);
        let frames = ordered_map(n, |ni| {
            let xf = x4
                .index_axis(ndarray::Axis(0), ni)
                .to_owned()
                .into_shape_with_order((c_in, h * win))
                .unwrap();
            let mut cols = Array2::<f32>::zeros((c_out * k * k, h * win));
            general_mat_mul(1.0, &wflat_f.t(), &xf, 0.0, &mut cols);
            let mut y = col2im(cols.view(), c_out, ho, wo, k, spec.stride, spec.pad, h, win);
            if let Some(b) = b1.as_ref() {
                for co in 0..c_out {
                    y.slice_mut(s![co, .., ..]).mapv_inplace(|v| v + b[co]);
                }
            }
            y
        });
        let mut y = Array4::<f32>::zeros((n, c_out, ho, wo));
        for (ni, f) in frames.into_iter().enumerate() {
            y.slice_mut(s![ni, .., .., ..]).assign(&f);
        }

        let mut edges = Vec::new();
        if self.requires_grad(x) {
            let wflat2 = Arc::clone(&wflat);
            edges.push(Edge {
                parent: x.id,
                pullback: Box::new(move |g| {
                    // backward-data of convT = forward conv with the same kernel
                    let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                    let parts = ordered_map(n, |ni| {
                        let cols = im2col(
                            g4.index_axis(ndarray::Axis(0), ni),
                            k,
                            spec.stride,
                            spec.pad,
                            h,
                            win,
                        );
                        let mut dxf = Array2::<f32>::zeros((c_in, h * win));
                        general_mat_mul(1.0, &wflat2, &cols, 0.0, &mut dxf);
                        dxf.into_shape_with_order((c_in, h, win)).unwrap()
                    });
                    let mut dx = Array4::<f32>::zeros((n, c_in, h, win));
                    for (ni, p) in parts.into_iter().enumerate() {
                        dx.slice_mut(s![ni, .., .., ..]).assign(&p);
                    }
                    dx.into_dyn()
                }),
            });
        }
        if self.requires_grad(w) {
            let vx2 = Arc::clone(&vx);
            edges.push(Edge {
                parent: w.id,
                pullback: Box::new(move |g| {
                    let x4 = vx2.view().into_dimensionality::<Ix4>().unwrap();
                    let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                    let parts = ordered_map(n, |ni| {
                        let cols = im2col(
                            g4.index_axis(ndarray::Axis(0), ni),
                            k,
                            spec.stride,
                            spec.pad,
                            h,
                            win,
                        );
                        let xf = x4
                            .index_axis(ndarray::Axis(0), ni)
                            .to_owned()
                            .into_shape_with_order((c_in, h * win))
                            .unwrap();
                        let mut dw = Array2::<f32>::zeros((c_in, c_out * k * k));
                        general_mat_mul(1.0, &xf, &cols.t(), 0.0, &mut dw);
                        dw
                    });
                    let mut acc = Array2::<f32>::zeros((c_in, c_out * k * k));
                    for p in parts {
                        acc += &p;
                    }
                    acc.into_shape_with_order((c_in, c_out, k, k))
                        .unwrap()
                        .into_dyn()
                }),
            });
        }
        if let Some(b) = bias {
            if self.requires_grad(b) {
                edges.push(Edge {
                    parent: b.id,
                    pullback: Box::new(move |g| {
                        let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                        let mut db = ndarray::Array1::<f32>::zeros(c_out);
                        for ni in 0..n {
                            for co in 0..c_out {
                                db[co] += g4.slice(s![ni, co, .., ..]).sum();
                            }
                        }
                        db.into_dyn()
                    }),
                });
            }
        }
        self.push(y.into_dyn(), !edges.is_empty(), edges)
    }
}
