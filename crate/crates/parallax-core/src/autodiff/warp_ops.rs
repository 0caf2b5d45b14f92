//! Tape ops backed by the warp kernels.

use super::{Edge, Tape, Var};
use crate::warp::kernels as wk;
use ndarray::{Array3, Array4, Ix3, Ix4, Ix5};
use std::sync::Arc;

impl Tape {
    /// Shifted-copy stack `[T, H, W, C] -> [T, D, H, W, C]`.
    pub fn shift_stack(&self, src: Var, shifts: &[i32]) -> Var {
        let v = self.value(src);
        let x4 = v.view().into_dimensionality::<Ix4>().expect("shift_stack: 4-d");
        let out = wk::shift_stack_forward(x4, shifts).expect("shift_stack");
        let shifts = shifts.to_vec();
        let rg = self.requires_grad(src);
        let edges = if rg {
            vec![Edge {
                parent: src.id,
                pullback: Box::new(move |g| {
                    let g5 = g.view().into_dimensionality::<Ix5>().unwrap();
                    wk::shift_stack_backward(g5, &shifts).into_dyn()
                }),
            }]
        } else {
            Vec::new()
        };
        self.push(out.into_dyn(), rg, edges)
    }

    /// Blend a shift stack `[T, D, H, W, C]` by probabilities `[T, H, W, D]`.
    pub fn implicit_blend(&self, stack: Var, probs: Var) -> Var {
        let vs = self.value(stack);
        let vp = self.value(probs);
        let s5 = vs.view().into_dimensionality::<Ix5>().expect("blend: stack 5-d");
        let p4 = vp.view().into_dimensionality::<Ix4>().expect("blend: probs 4-d");
        let out = wk::implicit_blend_forward(s5, p4).expect("implicit_blend");
        let mut edges = Vec::new();
        if self.requires_grad(stack) {
            let vs2 = Arc::clone(&vs);
            let vp2 = Arc::clone(&vp);
            edges.push(Edge {
                parent: stack.id,
                pullback: Box::new(move |g| {
                    let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                    let s5 = vs2.view().into_dimensionality::<Ix5>().unwrap();
                    let p4 = vp2.view().into_dimensionality::<Ix4>().unwrap();
                    wk::implicit_blend_backward(g4, s5, p4).0.into_dyn()
                }),
            });
        }
        if self.requires_grad(probs) {
            let vs2 = Arc::clone(&vs);
            let vp2 = Arc::clone(&vp);
            edges.push(Edge {
                parent: probs.id,
                pullback: Box::new(move |g| {
                    let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                    let s5 = vs2.view().into_dimensionality::<Ix5>().unwrap();
                    let p4 = vp2.view().into_dimensionality::<Ix4>().unwrap();
                    wk::implicit_blend_backward(g4, s5, p4).1.into_dyn()
                }),
            });
        }
        self.push(out.into_dyn(), !edges.is_empty(), edges)
    }

    /// Horizontal bilinear warp of `src: [T, H, W, C]` by `disp: [T, H, W]`.
    /// Returns the warped output and its (constant) validity mask.
    pub fn warp_horizontal(&self, src: Var, disp: Var) -> (Var, Array3<f32>) {
        let vsrc = self.value(src);
        let vdisp = self.value(disp);
        let s4 = vsrc.view().into_dimensionality::<Ix4>().expect("warp: src 4-d");
        let d3 = vdisp.view().into_dimensionality::<Ix3>().expect("warp: disp 3-d");
        let (out, valid) = wk::warp_horizontal_forward(s4, d3).expect("warp_horizontal");
        let mut edges = Vec::new();
        if self.requires_grad(src) {
            let vsrc2 = Arc::clone(&vsrc);
            let vdisp2 = Arc::clone(&vdisp);
            edges.push(Edge {
                parent: src.id,
                pullback: Box::new(move |g| {
                    let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                    let s4 = vsrc2.view().into_dimensionality::<Ix4>().unwrap();
                    let d3 = vdisp2.view().into_dimensionality::<Ix3>().unwrap();
                    wk::warp_horizontal_backward(g4, s4, d3).0.into_dyn()
                }),
            });
        }
        if self.requires_grad(disp) {
            let vsrc2 = Arc::clone(&vsrc);
            let vdisp2 = Arc::clone(&vdisp);
            edges.push(Edge {
                parent: disp.id,
                pullback: Box::new(move |g| {
                    let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                    let s4 = vsrc2.view().into_dimensionality::<Ix4>().unwrap();
                    let d3 = vdisp2.view().into_dimensionality::<Ix3>().unwrap();
                    wk::warp_horizontal_backward(g4, s4, d3).1.into_dyn()
                }),
            });
        }
        let out_var = self.push(out.into_dyn(), !edges.is_empty(), edges);
        (out_var, valid)
    }

    /// Compose per-layer warped images `[T, H, W, C]` with constant selector
    /// masks `[D, T, H, W]` (selectors carry no gradient).
    pub fn compose_with_selectors(&self, layers: &[Var], selectors: &Array4<f32>) -> Var {
        let d = layers.len();
        assert_eq!(selectors.dim().0, d, "compose: selector/layer count");
        let first = self.value(layers[0]);
        let (t, h, w, c) = first
            .view()
            .into_dimensionality::<Ix4>()
            .expect("compose: 4-d layers")
            .dim();
        let mut out = Array4::<f32>::zeros((t, h, w, c));
        for (di, &lv) in layers.iter().enumerate() {
            let v = self.value(lv);
            let l4 = v.view().into_dimensionality::<Ix4>().unwrap();
            assert_eq!(l4.dim(), (t, h, w, c));
            for ti in 0..t {
                for i in 0..h {
                    for j in 0..w {
                        let s = selectors[[di, ti, i, j]];
                        if s != 0.0 {
                            for ci in 0..c {
                                out[[ti, i, j, ci]] += s * l4[[ti, i, j, ci]];
                            }
                        }
                    }
                }
            }
        }
        let mut edges = Vec::new();
        for (di, &lv) in layers.iter().enumerate() {
            if self.requires_grad(lv) {
                let sel = selectors.index_axis(ndarray::Axis(0), di).to_owned();
                edges.push(Edge {
                    parent: lv.id,
                    pullback: Box::new(move |g| {
                        let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                        let mut dl = Array4::<f32>::zeros(g4.dim());
                        let (t, h, w, c) = g4.dim();
                        for ti in 0..t {
                            for i in 0..h {
                                for j in 0..w {
                                    let s = sel[[ti, i, j]];
                                    if s != 0.0 {
                                        for ci in 0..c {
                                            dl[[ti, i, j, ci]] = s * g4[[ti, i, j, ci]];
                                        }
                                    }
                                }
                            }
                        }
                        dl.into_dyn()
                    }),
                });
            }
        }
        self.push(out.into_dyn(), !edges.is_empty(), edges)
    }

    /// 3x3 median blur of `[T, H, W, C]`; gradients route to the chosen
    /// median source pixels.
    pub fn median_blur3(&self, x: Var) -> Var {
        let v = self.value(x);
        let x4 = v.view().into_dimensionality::<Ix4>().expect("median: 4-d");
        let (out, argsrc) = wk::median_blur3_forward(x4).expect("median_blur3");
        let rg = self.requires_grad(x);
        let edges = if rg {
            vec![Edge {
                parent: x.id,
                pullback: Box::new(move |g| {
                    let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                    wk::median_blur3_backward(g4, &argsrc).into_dyn()
                }),
            }]
        } else {
            Vec::new()
        };
        self.push(out.into_dyn(), rg, edges)
    }
}
