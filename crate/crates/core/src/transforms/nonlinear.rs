use rand::Rng as _;

use super::{TransformConfig, TransformStep};
use crate::rng::Rng;
use crate::types::Volume;

pub(super) fn sample(r: &mut Rng, cfg: &TransformConfig) -> TransformStep {
    let control_points = [[r.random::<f64>(), r.random::<f64>()], [r.random::<f64>(), r.random::<f64>()]];
    let increasing = r.random_bool(0.5);
    TransformStep::Nonlinear { control_points, increasing, samples: cfg.bezier_samples }
}

/// Lookup table of a cubic Bézier curve from (0,0) to (1,1) through the two
/// control points. Both coordinate columns are sorted ascending, which makes
/// the mapping monotone; a decreasing map reverses the value column.
pub fn bezier_lookup(control_points: [[f64; 2]; 2], increasing: bool, samples: usize) -> (Vec<f64>, Vec<f64>) {
    let [p1, p2] = control_points;
    let curve = |t: f64, a: f64, b: f64| {
        let s = 1.0 - t;
        3.0 * s * s * t * a + 3.0 * s * t * t * b + t * t * t
    };
    let n = samples.max(2);
    let ts = (0..n).map(|i| i as f64 / (n - 1) as f64);
    let mut xs: Vec<f64> = ts.clone().map(|t| curve(t, p1[0], p2[0])).collect();
    let mut ys: Vec<f64> = ts.map(|t| curve(t, p1[1], p2[1])).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    if !increasing {
        ys.reverse();
    }
    (xs, ys)
}

/// Piecewise-linear interpolation with clamping at both ends.
fn interp(v: f64, xs: &[f64], ys: &[f64]) -> f64 {
    let last = xs.len() - 1;
    if v <= xs[0] {
        return ys[0];
    }
    if v >= xs[last] {
        return ys[last];
    }
    // first index with xs[j] > v; v lies in [xs[j-1], xs[j])
    let j = xs.partition_point(|&x| x <= v);
    let (x0, x1, y0, y1) = (xs[j - 1], xs[j], ys[j - 1], ys[j]);
    if x1 == x0 {
        y0
    } else {
        y0 + (v - x0) * ((y1 - y0) / (x1 - x0))
    }
}

/// Maps every voxel through the Bézier lookup. The output depends only on the
/// voxel's own value.
pub fn nonlinear_with(crop: &Volume, control_points: [[f64; 2]; 2], increasing: bool, samples: usize) -> Volume {
    let (xs, ys) = bezier_lookup(control_points, increasing, samples);
    let voxels = crop.voxels().iter().map(|&v| (interp(v as f64, &xs, &ys) as f32).clamp(0.0, 1.0)).collect();
    Volume::from_parts_unchecked(crop.shape(), voxels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Shape3;

    #[test]
    fn identity_control_points_leave_crop_unchanged() {
        let shape = Shape3::new(8, 8, 8);
        let mut r = crate::rng::rng(4);
        let crop = Volume::new(shape, (0..shape.len()).map(|_| r.random::<f32>()).collect()).unwrap();
        let out = nonlinear_with(&crop, [[1.0 / 3.0, 1.0 / 3.0], [2.0 / 3.0, 2.0 / 3.0]], true, 1000);
        assert_eq!(out, crop);
    }

    #[test]
    fn decreasing_curve_reverses_two_values() {
        let crop = Volume::new(Shape3::new(1, 2, 2), vec![0.2, 0.8, 0.2, 0.8]).unwrap();
        let out = nonlinear_with(&crop, [[0.3, 0.9], [0.6, 0.1]], false, 1000);
        let v = out.voxels();
        assert_eq!(v[0], v[2]);
        assert_eq!(v[1], v[3]);
        assert!(v[0] > v[1]);
    }

    #[test]
    fn increasing_curve_preserves_voxel_order() {
        let shape = Shape3::new(8, 8, 4);
        let mut r = crate::rng::rng(8);
        let crop = Volume::new(shape, (0..shape.len()).map(|_| r.random::<f32>()).collect()).unwrap();
        let out = nonlinear_with(&crop, [[0.1, 0.7], [0.9, 0.2]], true, 1000);
        let mut idx: Vec<usize> = (0..shape.len()).collect();
        idx.sort_by(|&a, &b| crop.voxels()[a].total_cmp(&crop.voxels()[b]));
        for w in idx.windows(2) {
            assert!(out.voxels()[w[0]] <= out.voxels()[w[1]]);
        }
    }
}
