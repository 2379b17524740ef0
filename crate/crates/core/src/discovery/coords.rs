use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::types::{Coordinate, Shape3};

/// Intersection volume of two boxes divided by the volume of `a`.
pub fn overlap_fraction(a: &Coordinate, b: &Coordinate) -> f64 {
    let mut inter = 1usize;
    for ax in 0..3 {
        let lo = a.origin[ax].max(b.origin[ax]);
        let hi = (a.origin[ax] + a.extent.0[ax]).min(b.origin[ax] + b.extent.0[ax]);
        if hi <= lo {
            return 0.0;
        }
        inter *= hi - lo;
    }
    inter as f64 / a.extent.len() as f64
}

/// Draws `c` crop boxes of `extent` inside `ref_shape` by rejection sampling so
/// that every pairwise overlap stays at or below `max_overlap`.
pub fn sample_coordinates(
    ref_shape: Shape3,
    c: usize,
    extent: Shape3,
    seed: u64,
    max_overlap: f64,
    attempt_budget: usize,
) -> Result<Vec<Coordinate>> {
    if c == 0 {
        return Err(Error::config("c", "C must be ≥ 1"));
    }
    if let Some(a) = (0..3).find(|&a| extent.0[a] == 0 || extent.0[a] > ref_shape.0[a]) {
        return Err(Error::ShapeMismatch(format!(
            "crop extent {extent} does not fit reference shape {ref_shape} on axis {a}"
        )));
    }
    let mut r = rng::rng(seed);
    let mut coords: Vec<Coordinate> = Vec::with_capacity(c);
    let mut attempts = 0;
    while coords.len() < c {
        if attempts == attempt_budget {
            return Err(Error::OverlapUnsatisfiable { placed: coords.len(), requested: c });
        }
        attempts += 1;
        let origin = [0, 1, 2].map(|a| r.random_range(0..=ref_shape.0[a] - extent.0[a]));
        let cand = Coordinate { index: coords.len(), origin, extent };
        if coords.iter().all(|p| overlap_fraction(&cand, p) <= max_overlap) {
            coords.push(cand);
        }
    }
    Ok(coords)
}
