use rand::Rng as _;

use super::{Cuboid, TransformConfig, TransformStep};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::types::{Shape3, Volume};

fn sample_cuboid(r: &mut Rng, shape: Shape3, [lo, hi]: [f64; 2]) -> Cuboid {
    let extent = [0, 1, 2].map(|a| {
        let f = if hi > lo { r.random_range(lo..=hi) } else { lo };
        ((f * shape.0[a] as f64).round() as usize).min(shape.0[a])
    });
    let origin = [0, 1, 2].map(|a| r.random_range(0..=shape.0[a] - extent[a]));
    Cuboid { origin, extent }
}

pub(super) fn sample_inpaint(r: &mut Rng, cfg: &TransformConfig, shape: Shape3) -> TransformStep {
    let k = r.random_range(cfg.inpaint_count[0]..=cfg.inpaint_count[1]);
    let cuboids = (0..k).map(|_| sample_cuboid(r, shape, cfg.inpaint_fraction)).collect();
    TransformStep::Inpaint { cuboids, noise_seed: r.random() }
}

pub(super) fn sample_outpaint(r: &mut Rng, cfg: &TransformConfig, shape: Shape3) -> TransformStep {
    let m = r.random_range(cfg.outpaint_count[0].max(1)..=cfg.outpaint_count[1].max(1));
    let retained = (0..m).map(|_| sample_cuboid(r, shape, cfg.outpaint_fraction)).collect();
    TransformStep::Outpaint { retained, noise_seed: r.random() }
}

/// Replaces each cuboid with uniform `[0, 1)` noise, cuboid by cuboid in
/// row-major order.
pub fn inpaint_with(crop: &Volume, cuboids: &[Cuboid], noise_seed: u64) -> Result<Volume> {
    let shape = crop.shape();
    if let Some(c) = cuboids.iter().find(|c| !c.fits(shape)) {
        return Err(Error::Invalid(format!("internal error: inpaint cuboid {c:?} exceeds crop {shape}")));
    }
    let mut out = crop.clone();
    let vox = out.voxels_mut();
    let mut r = rng::rng(noise_seed);
    for c in cuboids {
        c.for_each_index(shape, |i| vox[i] = r.random::<f32>());
    }
    Ok(out)
}

pub fn retained_mask(shape: Shape3, retained: &[Cuboid]) -> Vec<bool> {
    let mut mask = vec![false; shape.len()];
    for c in retained {
        c.for_each_index(shape, |i| mask[i] = true);
    }
    mask
}

pub fn retained_fraction(shape: Shape3, retained: &[Cuboid]) -> f64 {
    retained_mask(shape, retained).iter().filter(|&&m| m).count() as f64 / shape.len() as f64
}

/// Keeps the union of `retained` and fills every other voxel with uniform
/// noise in row-major order. Fails when the window covers more than `limit`
/// of the crop or the whole crop.
pub fn outpaint_with(crop: &Volume, retained: &[Cuboid], noise_seed: u64, limit: f64) -> Result<Volume> {
    let shape = crop.shape();
    if let Some(c) = retained.iter().find(|c| !c.fits(shape)) {
        return Err(Error::Invalid(format!("internal error: retained cuboid {c:?} exceeds crop {shape}")));
    }
    let mask = retained_mask(shape, retained);
    let kept = mask.iter().filter(|&&m| m).count();
    let fraction = kept as f64 / shape.len() as f64;
    if kept == shape.len() || fraction > limit {
        return Err(Error::OutpaintDegenerate { retained: fraction, limit });
    }
    let mut out = crop.clone();
    let mut r = rng::rng(noise_seed);
    for (v, keep) in out.voxels_mut().iter_mut().zip(mask) {
        if !keep {
            *v = r.random::<f32>();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{inpaint, outpaint, TransformConfig};
    use super::*;

    fn ramp(shape: Shape3) -> Volume {
        let n = shape.len();
        Volume::new(shape, (0..n).map(|i| i as f32 / n as f32).collect()).unwrap()
    }

    #[test]
    fn zero_size_cuboids_leave_crop_unchanged() {
        let cfg = TransformConfig { inpaint_fraction: [0.0, 0.0], ..Default::default() };
        let crop = ramp(Shape3::new(8, 8, 8));
        assert_eq!(inpaint(&crop, &cfg, 4).unwrap().0, crop);
    }

    #[test]
    fn ninety_percent_window_is_degenerate() {
        let shape = Shape3::new(10, 10, 10);
        let crop = ramp(shape);
        let window = [Cuboid { origin: [0, 0, 0], extent: [9, 10, 10] }];
        assert!((retained_fraction(shape, &window) - 0.9).abs() < 1e-12);
        let err = outpaint_with(&crop, &window, 1, 0.8).unwrap_err();
        assert!(err.to_string().starts_with("outpaint degenerate"), "{err}");
        let full = [Cuboid { origin: [0, 0, 0], extent: [10, 10, 10] }];
        assert!(outpaint_with(&crop, &full, 1, 1.0).is_err());
        let ok = [Cuboid { origin: [0, 0, 0], extent: [8, 10, 10] }];
        assert!(outpaint_with(&crop, &ok, 1, 0.8).is_ok());
    }

    #[test]
    fn outpaint_keeps_window_and_changes_the_rest() {
        let shape = Shape3::new(16, 16, 8);
        let crop = ramp(shape);
        let (out, rec) = outpaint(&crop, &TransformConfig::default(), 6).unwrap();
        let TransformStep::Outpaint { retained, .. } = &rec.steps[0] else { panic!() };
        let mask = retained_mask(shape, retained);
        for (i, keep) in mask.iter().enumerate() {
            if *keep {
                assert_eq!(out.voxels()[i].to_bits(), crop.voxels()[i].to_bits());
            }
        }
    }
}
