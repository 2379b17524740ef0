use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{Cuboid, TransformConfig, TransformStep};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::types::{Shape3, Volume};

/// Samples non-overlapping blocks; fewer than requested may be placed when
/// the crop fills up.
pub(super) fn sample(r: &mut Rng, cfg: &TransformConfig, shape: Shape3) -> Result<TransformStep> {
    let [elo, ehi] = cfg.shuffle_block_extent;
    if let Some(a) = (0..3).find(|&a| elo > shape.0[a]) {
        return Err(Error::Invalid(format!("shuffle block extent {elo} larger than crop axis {a} ({})", shape.0[a])));
    }
    let [clo, chi] = cfg.shuffle_block_count;
    let target = r.random_range(clo..=chi);
    let mut blocks: Vec<Cuboid> = Vec::with_capacity(target);
    let mut attempts = 0;
    while blocks.len() < target && attempts < 20 * target.max(1) {
        attempts += 1;
        let extent = [0, 1, 2].map(|a| r.random_range(elo..=ehi.min(shape.0[a])));
        let origin = [0, 1, 2].map(|a| r.random_range(0..=shape.0[a] - extent[a]));
        let b = Cuboid { origin, extent };
        if blocks.iter().all(|o| !o.overlaps(&b)) {
            blocks.push(b);
        }
    }
    let permutation_seeds = blocks.iter().map(|_| r.random()).collect();
    Ok(TransformStep::LocalShuffle { blocks, permutation_seeds })
}

/// Permutes the voxels inside each block independently.
pub fn shuffle_blocks(crop: &Volume, blocks: &[Cuboid], seeds: &[u64]) -> Result<Volume> {
    let shape = crop.shape();
    if blocks.len() != seeds.len() {
        return Err(Error::Invalid("one permutation seed per block is required".into()));
    }
    let mut out = crop.clone();
    let vox = out.voxels_mut();
    let mut idx = Vec::new();
    for (b, &seed) in blocks.iter().zip(seeds) {
        if !b.fits(shape) {
            return Err(Error::Invalid(format!("shuffle block {b:?} exceeds crop {shape}")));
        }
        idx.clear();
        b.for_each_index(shape, |i| idx.push(i));
        let mut values: Vec<f32> = idx.iter().map(|&i| vox[i]).collect();
        values.shuffle(&mut rng::rng(seed));
        for (&i, v) in idx.iter().zip(values) {
            vox[i] = v;
        }
    }
    Ok(out)
}
