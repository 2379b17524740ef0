//! Self-discovery: embed whole patient volumes with an auto-encoder, retrieve
//! the nearest neighbours of a reference patient, and crop all of them at a
//! shared set of coordinates whose index becomes the pseudo label.

mod autoencoder;
mod coords;
mod neighbors;
mod resample;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{load_volume, CorpusManifest, Split};
use crate::error::{Error, Result};
use crate::rng;
use crate::types::{Coordinate, PatternCrop, PretrainConfig, Shape3, Volume};

pub use autoencoder::{train_autoencoder, AeConfig, AeHistory, AutoEncoder};
pub use coords::{overlap_fraction, sample_coordinates};
pub use neighbors::{l2_distance, nearest_neighbors, DiscoveryIndex, Neighbor};
pub use resample::{crop_at, resize_trilinear, resize_volume, scaled_region};

/// Settings of the discovery stage beyond the shared pretraining ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscoveryConfig {
    /// Crop box at scale 1.0; defaults to the canonical crop shape.
    pub crop_extent: Option<Shape3>,
    pub max_overlap: f64,
    pub attempt_budget: usize,
    /// Number of reference patients; each adds (K + 1)·C·|scales| crops.
    pub rounds: usize,
    pub autoencoder: AeConfig,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            crop_extent: None,
            max_overlap: 0.25,
            attempt_budget: 10_000,
            rounds: 1,
            autoencoder: AeConfig::default(),
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.max_overlap) {
            return Err(Error::config("discovery.max_overlap", "must be in [0, 1]"));
        }
        if self.attempt_budget == 0 {
            return Err(Error::config("discovery.attempt_budget", "must be ≥ 1"));
        }
        if self.rounds == 0 {
            return Err(Error::config("discovery.rounds", "must be ≥ 1"));
        }
        self.autoencoder.validate()
    }
}

/// Crops every selected patient of `index` at every coordinate and scale, in
/// that nesting order.
pub fn extract_crops(
    index: &DiscoveryIndex,
    volumes: &[(String, Volume)],
    coords: &[Coordinate],
    canonical: Shape3,
    scale_factors: &[f32],
) -> Result<Vec<PatternCrop>> {
    let selected = index
        .selected_patients()
        .into_iter()
        .map(|id| {
            volumes
                .iter()
                .find(|(p, _)| p == id)
                .map(|(p, v)| (p.clone(), v.clone()))
                .ok_or_else(|| Error::Invalid(format!("no volume for patient {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    crop_patients(&selected, coords, canonical, scale_factors)
}

/// Crops the given patients at every coordinate and scale, in that nesting
/// order. Also used for held-out patients that never enter discovery.
pub fn crop_patients(
    volumes: &[(String, Volume)],
    coords: &[Coordinate],
    canonical: Shape3,
    scale_factors: &[f32],
) -> Result<Vec<PatternCrop>> {
    let per_patient: Vec<Vec<PatternCrop>> = volumes
        .par_iter()
        .map(|(id, v)| {
            let mut out = Vec::with_capacity(coords.len() * scale_factors.len());
            for c in coords {
                if !c.fits(v.shape()) {
                    return Err(Error::ShapeMismatch(format!(
                        "coordinate {} does not fit volume {} of {id}",
                        c.index,
                        v.shape()
                    )));
                }
                for &s in scale_factors {
                    out.push(PatternCrop::new(crop_at(v, c, s, canonical)?, id.as_str(), c.index, s));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_patient.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub reference_id: String,
    pub neighbors: Vec<Neighbor>,
}

/// Summary written next to the crop dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryReport {
    pub seed: u64,
    pub autoencoder: AeHistory,
    pub rounds: Vec<RoundReport>,
    pub coordinates: Vec<Coordinate>,
    pub crop_count: usize,
    pub label_histogram: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DiscoveryOutput {
    pub indices: Vec<DiscoveryIndex>,
    pub coordinates: Vec<Coordinate>,
    pub crops: Vec<PatternCrop>,
    pub report: DiscoveryReport,
}

/// Runs discovery over in-memory training volumes. Everything is a function
/// of the volumes, the configs and `seed`.
pub fn run_discovery(
    volumes: &[(String, Volume)],
    cfg: &PretrainConfig,
    dcfg: &DiscoveryConfig,
    seed: u64,
) -> Result<DiscoveryOutput> {
    dcfg.validate()?;
    let cfg = crate::validate_config(cfg.clone(), volumes.len())?;
    if dcfg.rounds > volumes.len() {
        return Err(Error::config("discovery.rounds", "more rounds than training patients"));
    }
    let root = rng::substream(seed, rng::DISCOVERY);
    let vols: Vec<Volume> = volumes.iter().map(|(_, v)| v.clone()).collect();
    let (mut ae, history) = train_autoencoder(&vols, &dcfg.autoencoder, rng::derive(root, &[0]))?;
    let latents = volumes.iter().map(|(id, v)| ae.embed(id, v)).collect::<Result<Vec<_>>>()?;

    let mut ids: Vec<&str> = volumes.iter().map(|(id, _)| id.as_str()).collect();
    ids.sort_unstable();
    rand::seq::SliceRandom::shuffle(&mut ids[..], &mut rng::rng(rng::derive(root, &[1])));
    let references = &ids[..dcfg.rounds];

    let ref_shape = volumes.iter().find(|(id, _)| id == references[0]).expect("reference volume").1.shape();
    let extent = dcfg.crop_extent.unwrap_or(cfg.canonical_crop_shape);
    let coordinates =
        sample_coordinates(ref_shape, cfg.c, extent, rng::derive(root, &[2]), dcfg.max_overlap, dcfg.attempt_budget)?;

    let mut indices = Vec::new();
    let mut crops = Vec::new();
    for &r in references {
        let index = nearest_neighbors(r, &latents, cfg.k)?;
        crops.extend(extract_crops(&index, volumes, &coordinates, cfg.canonical_crop_shape, &cfg.scale_factors)?);
        indices.push(index);
    }
    let mut label_histogram = vec![0; cfg.c];
    for c in &crops {
        label_histogram[c.pseudo_label()] += 1;
    }
    let report = DiscoveryReport {
        seed,
        autoencoder: history,
        rounds: indices
            .iter()
            .map(|i| RoundReport { reference_id: i.reference_id.clone(), neighbors: i.neighbors.clone() })
            .collect(),
        coordinates: coordinates.clone(),
        crop_count: crops.len(),
        label_histogram,
    };
    Ok(DiscoveryOutput { indices, coordinates, crops, report })
}

/// Loads one split of a manifest, in manifest order.
pub fn load_split(manifest: &CorpusManifest, split: Split) -> Result<Vec<(String, Volume)>> {
    let entries: Vec<_> = manifest.split(split).collect();
    if entries.is_empty() {
        return Err(Error::Invalid(format!("manifest has no {split:?} patients").to_lowercase()));
    }
    entries.par_iter().map(|e| Ok((e.patient_id.clone(), load_volume(&e.path)?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_ae() -> AeConfig {
        AeConfig {
            input_shape: Shape3::new(16, 16, 8),
            channels: vec![2, 4],
            latent_width: 8,
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e-3,
        }
    }

    fn corpus(n: usize) -> Vec<(String, Volume)> {
        (0..n)
            .map(|i| {
                let s = Shape3::new(24, 24, 12);
                let data = (0..s.len()).map(|j| ((j * (i + 3)) % 17) as f32 / 16.0).collect();
                (format!("p{i:03}"), Volume::new(s, data).unwrap())
            })
            .collect()
    }

    #[test]
    fn crop_count_and_labels() {
        let cfg = PretrainConfig {
            k: 4,
            c: 6,
            canonical_crop_shape: Shape3::new(8, 8, 4),
            scale_factors: vec![1.0],
            ..Default::default()
        };
        let dcfg = DiscoveryConfig { autoencoder: tiny_ae(), ..Default::default() };
        let out = run_discovery(&corpus(7), &cfg, &dcfg, 5).unwrap();
        assert_eq!(out.crops.len(), 30);
        assert_eq!(out.report.label_histogram, vec![5; 6]);
        for c in &out.crops {
            assert_eq!(c.data.shape(), Shape3::new(8, 8, 4));
            let coord = &out.coordinates[c.pseudo_label()];
            let v = &corpus(7).into_iter().find(|(id, _)| *id == c.patient_id).unwrap().1;
            assert_eq!(c.data, v.sub_volume(coord.origin, coord.extent).unwrap());
        }
        let again = run_discovery(&corpus(7), &cfg, &dcfg, 5).unwrap();
        assert_eq!(again.report, out.report);
    }

    #[test]
    fn multiple_scales_and_rounds_multiply_the_count() {
        let cfg = PretrainConfig {
            k: 2,
            c: 3,
            canonical_crop_shape: Shape3::new(8, 8, 4),
            scale_factors: vec![0.8, 1.0, 1.2],
            ..Default::default()
        };
        let dcfg = DiscoveryConfig { autoencoder: tiny_ae(), rounds: 2, ..Default::default() };
        let out = run_discovery(&corpus(5), &cfg, &dcfg, 1).unwrap();
        assert_eq!(out.crops.len(), 2 * 3 * 3 * 3);
        assert_ne!(out.indices[0].reference_id, out.indices[1].reference_id);
    }

    #[test]
    fn k_too_large_is_rejected() {
        let cfg = PretrainConfig { k: 7, c: 2, canonical_crop_shape: Shape3::new(8, 8, 4), ..Default::default() };
        let dcfg = DiscoveryConfig { autoencoder: tiny_ae(), ..Default::default() };
        assert!(run_discovery(&corpus(7), &cfg, &dcfg, 0).is_err());
    }
}
