//! Seeded restoration transforms: non-linear intensity mapping, local voxel
//! shuffling, in-painting and out-painting. Each transform samples its
//! parameters into a [`TransformStep`]; applying a step is a pure function of
//! the step and the input crop, so a [`TransformRecord`] replays bit-exactly.

mod nonlinear;
mod paint;
mod shuffle;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::types::{Shape3, Volume};

pub use nonlinear::{bezier_lookup, nonlinear_with};
pub use paint::{inpaint_with, outpaint_with, retained_fraction};
pub use shuffle::shuffle_blocks;

/// Axis-aligned box `[origin, origin + extent)` in crop voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cuboid {
    pub origin: [usize; 3],
    pub extent: [usize; 3],
}

impl Cuboid {
    pub fn volume(&self) -> usize {
        self.extent.iter().product()
    }

    pub fn contains(&self, z: usize, y: usize, x: usize) -> bool {
        let p = [z, y, x];
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] < self.origin[a] + self.extent[a])
    }

    pub fn fits(&self, shape: Shape3) -> bool {
        (0..3).all(|a| self.origin[a] + self.extent[a] <= shape.0[a])
    }

    pub fn overlaps(&self, other: &Cuboid) -> bool {
        (0..3).all(|a| {
            self.origin[a] < other.origin[a] + other.extent[a] && other.origin[a] < self.origin[a] + self.extent[a]
        })
    }

    /// Visits every voxel index in row-major order.
    pub fn for_each_index(&self, shape: Shape3, mut f: impl FnMut(usize)) {
        for z in self.origin[0]..self.origin[0] + self.extent[0] {
            for y in self.origin[1]..self.origin[1] + self.extent[1] {
                for x in self.origin[2]..self.origin[2] + self.extent[2] {
                    f(shape.index(z, y, x));
                }
            }
        }
    }
}

/// One applied transform with everything needed to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "snake_case")]
pub enum TransformStep {
    Nonlinear { control_points: [[f64; 2]; 2], increasing: bool, samples: usize },
    LocalShuffle { blocks: Vec<Cuboid>, permutation_seeds: Vec<u64> },
    Inpaint { cuboids: Vec<Cuboid>, noise_seed: u64 },
    Outpaint { retained: Vec<Cuboid>, noise_seed: u64 },
}

impl TransformStep {
    pub fn name(&self) -> &'static str {
        match self {
            TransformStep::Nonlinear { .. } => "nonlinear",
            TransformStep::LocalShuffle { .. } => "local_shuffle",
            TransformStep::Inpaint { .. } => "inpaint",
            TransformStep::Outpaint { .. } => "outpaint",
        }
    }

    pub fn apply(&self, crop: &Volume) -> Result<Volume> {
        match self {
            TransformStep::Nonlinear { control_points, increasing, samples } => {
                Ok(nonlinear_with(crop, *control_points, *increasing, *samples))
            }
            TransformStep::LocalShuffle { blocks, permutation_seeds } => {
                shuffle_blocks(crop, blocks, permutation_seeds)
            }
            TransformStep::Inpaint { cuboids, noise_seed } => inpaint_with(crop, cuboids, *noise_seed),
            TransformStep::Outpaint { retained, noise_seed } => outpaint_with(crop, retained, *noise_seed, 1.0),
        }
    }
}

/// Ordered description of the transforms applied to a crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub seed: u64,
    pub steps: Vec<TransformStep>,
}

impl TransformRecord {
    pub fn replay(&self, crop: &Volume) -> Result<Volume> {
        self.steps.iter().try_fold(crop.clone(), |v, s| s.apply(&v))
    }

    pub fn step_names(&self) -> Vec<&'static str> {
        self.steps.iter().map(TransformStep::name).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformConfig {
    pub p_nonlinear: f64,
    pub p_shuffle: f64,
    pub p_paint: f64,
    /// Points sampled along the Bézier curve for the intensity lookup table.
    pub bezier_samples: usize,
    /// Inclusive range of shuffle block edge lengths, in voxels.
    pub shuffle_block_extent: [usize; 2],
    /// Inclusive range of the number of shuffle blocks.
    pub shuffle_block_count: [usize; 2],
    pub inpaint_count: [usize; 2],
    /// Inpaint cuboid edge as a fraction of the axis length.
    pub inpaint_fraction: [f64; 2],
    pub outpaint_count: [usize; 2],
    /// Retained-window cuboid edge as a fraction of the axis length.
    pub outpaint_fraction: [f64; 2],
    /// Largest retained fraction of the crop before out-painting is degenerate.
    pub max_outpaint_retained: f64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            p_nonlinear: 0.9,
            p_shuffle: 0.5,
            p_paint: 0.9,
            bezier_samples: 1000,
            shuffle_block_extent: [4, 8],
            shuffle_block_count: [10, 40],
            inpaint_count: [1, 5],
            inpaint_fraction: [0.1, 0.4],
            outpaint_count: [1, 3],
            outpaint_fraction: [0.25, 0.5],
            max_outpaint_retained: 0.8,
        }
    }
}

impl TransformConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_nonlinear", self.p_nonlinear), ("p_shuffle", self.p_shuffle), ("p_paint", self.p_paint)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("transforms.{name}"), "probability must lie in [0, 1]"));
            }
        }
        let ranges = [
            ("shuffle_block_extent", self.shuffle_block_extent),
            ("shuffle_block_count", self.shuffle_block_count),
            ("inpaint_count", self.inpaint_count),
            ("outpaint_count", self.outpaint_count),
        ];
        for (name, [lo, hi]) in ranges {
            if lo > hi {
                return Err(Error::config(format!("transforms.{name}"), "range minimum exceeds maximum"));
            }
        }
        if self.shuffle_block_extent[0] == 0 {
            return Err(Error::config("transforms.shuffle_block_extent", "blocks need at least one voxel per axis"));
        }
        for (name, [lo, hi]) in
            [("inpaint_fraction", self.inpaint_fraction), ("outpaint_fraction", self.outpaint_fraction)]
        {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(Error::config(format!("transforms.{name}"), "need 0 ≤ min ≤ max ≤ 1"));
            }
        }
        if !(self.max_outpaint_retained > 0.0 && self.max_outpaint_retained < 1.0) {
            return Err(Error::config("transforms.max_outpaint_retained", "must lie in (0, 1)"));
        }
        if self.bezier_samples < 2 {
            return Err(Error::config("transforms.bezier_samples", "need at least two samples"));
        }
        Ok(())
    }
}

fn single(seed: u64, step: TransformStep, crop: &Volume) -> Result<(Volume, TransformRecord)> {
    let out = step.apply(crop)?;
    Ok((out, TransformRecord { seed, steps: vec![step] }))
}

pub fn nonlinear_intensity(crop: &Volume, cfg: &TransformConfig, seed: u64) -> Result<(Volume, TransformRecord)> {
    single(seed, nonlinear::sample(&mut rng::rng(seed), cfg), crop)
}

pub fn local_shuffle(crop: &Volume, cfg: &TransformConfig, seed: u64) -> Result<(Volume, TransformRecord)> {
    let step = shuffle::sample(&mut rng::rng(seed), cfg, crop.shape())?;
    single(seed, step, crop)
}

pub fn inpaint(crop: &Volume, cfg: &TransformConfig, seed: u64) -> Result<(Volume, TransformRecord)> {
    single(seed, paint::sample_inpaint(&mut rng::rng(seed), cfg, crop.shape()), crop)
}

pub fn outpaint(crop: &Volume, cfg: &TransformConfig, seed: u64) -> Result<(Volume, TransformRecord)> {
    let step = paint::sample_outpaint(&mut rng::rng(seed), cfg, crop.shape());
    if let TransformStep::Outpaint { retained, noise_seed } = &step {
        let out = outpaint_with(crop, retained, *noise_seed, cfg.max_outpaint_retained)?;
        return Ok((out, TransformRecord { seed, steps: vec![step] }));
    }
    unreachable!("sample_outpaint returns an outpaint step")
}

/// Applies non-linear mapping with probability `p_nonlinear`, then local
/// shuffling with `p_shuffle`, then with probability `p_paint` exactly one of
/// in-painting or out-painting, chosen with equal odds.
pub fn compose(crop: &Volume, cfg: &TransformConfig, seed: u64) -> Result<(Volume, TransformRecord)> {
    let mut r = rng::rng(seed);
    let seeds: [u64; 3] = [r.random(), r.random(), r.random()];
    let do_nonlinear = r.random_bool(cfg.p_nonlinear);
    let do_shuffle = r.random_bool(cfg.p_shuffle);
    let do_paint = r.random_bool(cfg.p_paint);
    let use_inpaint = r.random_bool(0.5);

    let mut out = crop.clone();
    let mut steps = Vec::new();
    if do_nonlinear {
        let (v, rec) = nonlinear_intensity(&out, cfg, seeds[0])?;
        out = v;
        steps.extend(rec.steps);
    }
    if do_shuffle {
        let (v, rec) = local_shuffle(&out, cfg, seeds[1])?;
        out = v;
        steps.extend(rec.steps);
    }
    if do_paint {
        let (v, rec) = if use_inpaint { inpaint(&out, cfg, seeds[2])? } else { outpaint(&out, cfg, seeds[2])? };
        out = v;
        steps.extend(rec.steps);
    }
    Ok((out, TransformRecord { seed, steps }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_crop(seed: u64, shape: Shape3) -> Volume {
        let mut r = rng::rng(seed);
        Volume::new(shape, (0..shape.len()).map(|_| r.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn all_zero_probabilities_give_identity() {
        let cfg = TransformConfig { p_nonlinear: 0.0, p_shuffle: 0.0, p_paint: 0.0, ..Default::default() };
        let crop = random_crop(1, Shape3::new(16, 16, 8));
        let (out, rec) = compose(&crop, &cfg, 99).unwrap();
        assert_eq!(out, crop);
        assert!(rec.steps.is_empty());
    }

    #[test]
    fn compose_is_deterministic_and_replayable() {
        let cfg = TransformConfig::default();
        let crop = random_crop(2, Shape3::new(16, 16, 8));
        for seed in 0..20 {
            let (a, ra) = compose(&crop, &cfg, seed).unwrap();
            let (b, rb) = compose(&crop, &cfg, seed).unwrap();
            assert_eq!(a, b);
            assert_eq!(ra, rb);
            assert_eq!(ra.replay(&crop).unwrap(), a);
            let json = serde_json::to_string(&ra).unwrap();
            let back: TransformRecord = serde_json::from_str(&json).unwrap();
            assert_eq!(back, ra);
        }
    }

    #[test]
    fn compose_applies_steps_in_order() {
        let cfg = TransformConfig { p_nonlinear: 1.0, p_shuffle: 1.0, p_paint: 1.0, ..Default::default() };
        let crop = random_crop(3, Shape3::new(16, 16, 8));
        let (_, rec) = compose(&crop, &cfg, 5).unwrap();
        let names = rec.step_names();
        assert_eq!(&names[..2], &["nonlinear", "local_shuffle"]);
        assert!(names[2] == "inpaint" || names[2] == "outpaint");
    }

    #[test]
    fn config_validation() {
        assert!(TransformConfig { p_paint: 1.5, ..Default::default() }.validate().is_err());
        assert!(TransformConfig { inpaint_count: [3, 1], ..Default::default() }.validate().is_err());
        assert!(TransformConfig::default().validate().is_ok());
    }
}
