//! Forward/backward flow consistency and occlusion statistics.
//!
//! For mutually inverse flows the forward vector and the backward vector
//! sampled at the forward target cancel; the per-pixel norm of their sum is
//! the consistency error. Pixels above a threshold count as occluded (or as
//! flow failures, which for dataset screening amounts to the same thing).

use super::MetricError;
use ndarray::{Array2, Array3};

/// Threshold used for dataset screening.
pub const DEFAULT_EPSILON: f64 = 4.0;

/// Cumulative per-frame occlusion-fraction buckets reported for datasets.
pub const OCCLUSION_BUCKET_EDGES: [f64; 4] = [0.10, 0.20, 0.30, 0.40];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowDirection {
    LeftToRight,
    RightToLeft,
    FrameToFrame,
}

/// A dense flow field `[H, W, 2]`, vectors ordered (horizontal, vertical) in
/// pixels.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub vectors: Array3<f64>,
    pub direction: FlowDirection,
}

impl FlowField {
    pub fn new(vectors: Array3<f64>, direction: FlowDirection) -> Result<Self, MetricError> {
        if vectors.dim().2 != 2 {
            return Err(MetricError::ShapeMismatch(format!(
                "flow field needs [H, W, 2], got {:?}",
                vectors.dim()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite("flow field"));
        }
        Ok(Self { vectors, direction })
    }

    /// Build the horizontal flow field implied by a disparity map under the
    /// convention `right(i, j) = left(i, j + d)`: left-to-right flow moves a
    /// left pixel by `-d` of its left-grid disparity, right-to-left flow
    /// moves a right pixel by `+d` of its right-grid disparity.
    pub fn from_disparity(
        disparity: &Array2<f64>,
        direction: FlowDirection,
    ) -> Result<Self, MetricError> {
        let (h, w) = disparity.dim();
        let sign = match direction {
            FlowDirection::LeftToRight => -1.0,
            FlowDirection::RightToLeft => 1.0,
            FlowDirection::FrameToFrame => {
                return Err(MetricError::Invalid(
                    "disparity implies a stereo direction, not frame-to-frame".into(),
                ))
            }
        };
        let mut vectors = Array3::zeros((h, w, 2));
        for i in 0..h {
            for j in 0..w {
                vectors[[i, j, 0]] = sign * disparity[[i, j]];
            }
        }
        FlowField::new(vectors, direction)
    }

    pub fn dim_hw(&self) -> (usize, usize) {
        (self.vectors.dim().0, self.vectors.dim().1)
    }

    /// Bilinear sample at a continuous position, clamping to the border.
    fn sample(&self, y: f64, x: f64) -> (f64, f64) {
        let (h, w) = self.dim_hw();
        let y = y.clamp(0.0, (h - 1) as f64);
        let x = x.clamp(0.0, (w - 1) as f64);
        let y0 = y.floor() as usize;
        let x0 = x.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let fy = y - y0 as f64;
        let fx = x - x0 as f64;
        let mut out = (0.0, 0.0);
        for c in 0..2 {
            let v00 = self.vectors[[y0, x0, c]];
            let v01 = self.vectors[[y0, x1, c]];
            let v10 = self.vectors[[y1, x0, c]];
            let v11 = self.vectors[[y1, x1, c]];
            let v = v00 * (1.0 - fy) * (1.0 - fx)
                + v01 * (1.0 - fy) * fx
                + v10 * fy * (1.0 - fx)
                + v11 * fy * fx;
            if c == 0 {
                out.0 = v;
            } else {
                out.1 = v;
            }
        }
        out
    }
}

/// Per-pixel consistency error, non-negative.
#[derive(Debug, Clone)]
pub struct ConsistencyMap {
    pub errors: Array2<f64>,
}

impl ConsistencyMap {
    pub fn mean(&self) -> f64 {
        self.errors.mean().unwrap_or(0.0)
    }
}

/// Per-pixel `|| f_fwd(p) + f_bwd(p + f_fwd(p)) ||`, with the backward field
/// sampled bilinearly at the forward target (border-clamped).
pub fn flow_consistency(
    f_fwd: &FlowField,
    f_bwd: &FlowField,
) -> Result<ConsistencyMap, MetricError> {
    let (h, w) = f_fwd.dim_hw();
    if f_bwd.dim_hw() != (h, w) {
        return Err(MetricError::ShapeMismatch(format!(
            "forward {:?} vs backward {:?}",
            f_fwd.dim_hw(),
            f_bwd.dim_hw()
        )));
    }
    let mut errors = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let fx = f_fwd.vectors[[i, j, 0]];
            let fy = f_fwd.vectors[[i, j, 1]];
            let (bx, by) = f_bwd.sample(i as f64 + fy, j as f64 + fx);
            errors[[i, j]] = ((fx + bx).powi(2) + (fy + by).powi(2)).sqrt();
        }
    }
    Ok(ConsistencyMap { errors })
}

/// Fraction of pixels whose error strictly exceeds `epsilon`.
pub fn occlusion_fraction(map: &ConsistencyMap, epsilon: f64) -> Result<f64, MetricError> {
    if epsilon <= 0.0 {
        return Err(MetricError::BadEpsilon(epsilon));
    }
    let total = map.errors.len();
    let over = map.errors.iter().filter(|&&e| e > epsilon).count();
    Ok(over as f64 / total as f64)
}

/// Cumulative percentage of frames below each occlusion bucket edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketBreakdown {
    /// Percentages at the edges 10% / 20% / 30% / 40%, in order.
    pub percent_below: [f64; 4],
}

/// Percentage of frames whose occlusion fraction is strictly below each of
/// the bucket edges 10%, 20%, 30%, 40%.
pub fn occlusion_breakdown(fractions: &[f64]) -> Result<BucketBreakdown, MetricError> {
    if fractions.is_empty() {
        return Err(MetricError::Empty("per-frame fraction list"));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(MetricError::Invalid(format!(
            "fraction {} outside [0, 1]",
            f
        )));
    }
    let n = fractions.len() as f64;
    let mut percent_below = [0.0; 4];
    for (k, edge) in OCCLUSION_BUCKET_EDGES.iter().enumerate() {
        let c = fractions.iter().filter(|&&f| f < *edge).count();
        percent_below[k] = 100.0 * c as f64 / n;
    }
    Ok(BucketBreakdown { percent_below })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_flow(h: usize, w: usize, fx: f64, fy: f64, dir: FlowDirection) -> FlowField {
        let mut v = Array3::zeros((h, w, 2));
        v.slice_mut(ndarray::s![.., .., 0]).fill(fx);
        v.slice_mut(ndarray::s![.., .., 1]).fill(fy);
        FlowField::new(v, dir).unwrap()
    }

    #[test]
    fn exact_inverse_flows_are_consistent() {
        let f = constant_flow(6, 9, 2.0, 0.0, FlowDirection::LeftToRight);
        let b = constant_flow(6, 9, -2.0, 0.0, FlowDirection::RightToLeft);
        let c = flow_consistency(&f, &b).unwrap();
        assert!(c.errors.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn zero_forward_measures_backward_magnitude() {
        let f = constant_flow(6, 9, 0.0, 0.0, FlowDirection::LeftToRight);
        let b = constant_flow(6, 9, 3.0, 0.0, FlowDirection::RightToLeft);
        let c = flow_consistency(&f, &b).unwrap();
        assert!(c.errors.iter().all(|&e| (e - 3.0).abs() < 1e-12));
    }

    #[test]
    fn vector_norm_combines_components() {
        // f = (+1, 0), b = (-1, +1): sum = (0, 1), norm 1 everywhere.
        let f = constant_flow(6, 9, 1.0, 0.0, FlowDirection::LeftToRight);
        let b = constant_flow(6, 9, -1.0, 1.0, FlowDirection::RightToLeft);
        let c = flow_consistency(&f, &b).unwrap();
        assert!(c.errors.iter().all(|&e| (e - 1.0).abs() < 1e-12));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let f = constant_flow(6, 9, 1.0, 0.0, FlowDirection::LeftToRight);
        let b = constant_flow(6, 8, -1.0, 0.0, FlowDirection::RightToLeft);
        assert!(flow_consistency(&f, &b).is_err());
    }

    #[test]
    fn occlusion_fraction_counts_strict_exceedance() {
        let mut e = Array2::zeros((10, 10));
        let m0 = ConsistencyMap { errors: e.clone() };
        assert_eq!(occlusion_fraction(&m0, 4.0).unwrap(), 0.0);

        e[[3, 7]] = 5.0;
        let m1 = ConsistencyMap { errors: e };
        assert!((occlusion_fraction(&m1, 4.0).unwrap() - 0.01).abs() < 1e-12);

        let m4 = ConsistencyMap {
            errors: Array2::from_elem((10, 10), 4.0),
        };
        assert_eq!(occlusion_fraction(&m4, 4.0).unwrap(), 0.0);
    }

    #[test]
    fn occlusion_fraction_monotone_in_epsilon() {
        let mut e = Array2::zeros((8, 8));
        for (k, v) in e.iter_mut().enumerate() {
            *v = (k % 11) as f64;
        }
        let m = ConsistencyMap { errors: e };
        let f2 = occlusion_fraction(&m, 2.0).unwrap();
        let f4 = occlusion_fraction(&m, 4.0).unwrap();
        let f8 = occlusion_fraction(&m, 8.0).unwrap();
        assert!(f2 >= f4 && f4 >= f8);
    }

    #[test]
    fn breakdown_counts_frames_below_edges() {
        let b = occlusion_breakdown(&[0.05, 0.15, 0.25, 0.35]).unwrap();
        assert_eq!(b.percent_below, [25.0, 50.0, 75.0, 100.0]);

        let z = occlusion_breakdown(&[0.0, 0.0]).unwrap();
        assert_eq!(z.percent_below, [100.0, 100.0, 100.0, 100.0]);

        assert!(occlusion_breakdown(&[]).is_err());
    }

    #[test]
    fn disparity_flows_roundtrip_to_zero_error() {
        // Constant-disparity scene: left->right flow -d, right->left flow +d.
        let d = Array2::from_elem((8, 12), 3.0);
        let f = FlowField::from_disparity(&d, FlowDirection::LeftToRight).unwrap();
        let b = FlowField::from_disparity(&d, FlowDirection::RightToLeft).unwrap();
        let c = flow_consistency(&f, &b).unwrap();
        assert!(c.errors.iter().all(|&e| e == 0.0));
    }
}
