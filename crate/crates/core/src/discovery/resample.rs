use crate::error::{Error, Result};
use crate::types::{Coordinate, Shape3, Volume};

fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if dst == 1 || src == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Trilinear resampling with aligned corners. Resizing to the same shape is
/// the identity.
pub fn resize_trilinear(src: &[f32], src_shape: Shape3, dst_shape: Shape3) -> Vec<f32> {
    assert_eq!(src.len(), src_shape.len());
    if src_shape == dst_shape {
        return src.to_vec();
    }
    let [tz, ty, tx] = [0, 1, 2].map(|a| axis_taps(src_shape.0[a], dst_shape.0[a]));
    let at = |z: usize, y: usize, x: usize| src[src_shape.index(z, y, x)] as f64;
    let mut out = Vec::with_capacity(dst_shape.len());
    for &(z0, z1, fz) in &tz {
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let lerp = |a: f64, b: f64, f: f64| if f == 0.0 { a } else { a + (b - a) * f };
                let c00 = lerp(at(z0, y0, x0), at(z0, y0, x1), fx);
                let c01 = lerp(at(z0, y1, x0), at(z0, y1, x1), fx);
                let c10 = lerp(at(z1, y0, x0), at(z1, y0, x1), fx);
                let c11 = lerp(at(z1, y1, x0), at(z1, y1, x1), fx);
                let v = lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz);
                out.push((v as f32).clamp(0.0, 1.0));
            }
        }
    }
    out
}

pub fn resize_volume(v: &Volume, shape: Shape3) -> Volume {
    Volume::from_parts_unchecked(shape, resize_trilinear(v.voxels(), v.shape(), shape))
}

/// Region of `scale · extent` voxels centred on the coordinate, shifted to lie
/// inside `bounds`.
pub fn scaled_region(coord: &Coordinate, scale: f32, bounds: Shape3) -> Result<([usize; 3], Shape3)> {
    let center = coord.center();
    let mut origin = [0; 3];
    let mut size = [0; 3];
    for a in 0..3 {
        let s = ((scale as f64 * coord.extent.0[a] as f64).round() as usize).min(bounds.0[a]);
        if s < 2 {
            return Err(Error::Invalid(format!(
                "scaled crop degenerate at scale factor {scale}: axis {a} has {s} voxel(s)"
            )));
        }
        let start = (center[a] - s as f64 / 2.0).round().max(0.0) as usize;
        origin[a] = start.min(bounds.0[a] - s);
        size[a] = s;
    }
    Ok((origin, Shape3(size)))
}

/// Crops the scaled region around `coord` and resamples it to `canonical`.
pub fn crop_at(v: &Volume, coord: &Coordinate, scale: f32, canonical: Shape3) -> Result<Volume> {
    let (origin, size) = scaled_region(coord, scale, v.shape())?;
    let sub = v.sub_volume(origin, size)?;
    Ok(resize_volume(&sub, canonical))
}
