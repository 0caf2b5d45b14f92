//! Central finite-difference checking for hand-derived adjoints.
//!
//! Scalar objective: `F(x) = sum(weights * f(x))`. The adjoint under test
//! reports `dF/dx`; this module recomputes each component with central
//! differences and returns the worst relative error, where the relative error
//! uses a magnitude floor so near-zero derivative pairs compare absolutely.

use ndarray::ArrayD;

/// Default step matching the kernels' gradient-check contract.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Relative error with a magnitude floor.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Report from a finite-difference sweep.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Sweep every component of `x`, comparing `analytic[k]` against the central
/// difference of `objective` at step `h`.
pub fn check_grad(
    x: &ArrayD<f64>,
    analytic: &ArrayD<f64>,
    h: f64,
    floor: f64,
    mut objective: impl FnMut(&ArrayD<f64>) -> f64,
) -> FdReport {
    assert_eq!(x.shape(), analytic.shape());
    let mut probe = x.clone();
    let mut max_rel_err: f64 = 0.0;
    let n = x.len();
    for k in 0..n {
        let orig = probe.as_slice_mut().unwrap()[k];
        probe.as_slice_mut().unwrap()[k] = orig + h;
        let fp = objective(&probe);
        probe.as_slice_mut().unwrap()[k] = orig - h;
        let fm = objective(&probe);
        probe.as_slice_mut().unwrap()[k] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let a = analytic.as_slice().unwrap()[k];
        max_rel_err = max_rel_err.max(rel_err(a, fd, floor));
    }
    FdReport {
        max_rel_err,
        checked: n,
    }
}
