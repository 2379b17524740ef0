//! Shared data model: volumes, latents, coordinates, crops, loss weights and
//! the pretraining configuration.
//!
//! Shapes are written as row-major axis triples `[d0, d1, d2]` with the last
//! axis varying fastest, so the default canonical crop `[64, 64, 32]` has 32
//! voxels along its innermost axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major 3D extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Shape3(pub [usize; 3]);

impl Shape3 {
    pub const fn new(d0: usize, d1: usize, d2: usize) -> Self {
        Shape3([d0, d1, d2])
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.0[1] + y) * self.0[2] + x
    }

    pub fn halved(&self, times: usize) -> Shape3 {
        Shape3(self.0.map(|a| a >> times))
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.0[0], self.0[1], self.0[2])
    }
}

/// A 3D scalar grid with intensities normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    shape: Shape3,
    voxels: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spacing: Option<[f32; 3]>,
}

impl Volume {
    pub fn new(shape: Shape3, voxels: Vec<f32>) -> Result<Self> {
        if shape.0.iter().any(|&a| a == 0) {
            return Err(Error::Invariant(format!("volume shape {shape} has an empty axis")));
        }
        if voxels.len() != shape.len() {
            return Err(Error::Invariant(format!("voxel count {} does not match shape {shape}", voxels.len())));
        }
        if let Some((i, v)) = voxels.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invariant(format!("voxel {i} has value {v} outside [0, 1]")));
        }
        Ok(Volume { shape, voxels, spacing: None })
    }

    pub fn zeros(shape: Shape3) -> Self {
        assert!(shape.0.iter().all(|&a| a > 0), "volume shape must be positive");
        Volume { shape, voxels: vec![0.0; shape.len()], spacing: None }
    }

    /// Min-max normalizes raw intensities into `[0, 1]`. A constant input maps to zeros.
    pub fn from_raw(shape: Shape3, raw: &[f32]) -> Result<Self> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("raw intensities must be finite".into()));
        }
        let lo = raw.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = raw.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let span = hi - lo;
        let voxels = raw.iter().map(|&v| if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 }).collect();
        Volume::new(shape, voxels)
    }

    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Self {
        self.spacing = Some(spacing);
        self
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn spacing(&self) -> Option<[f32; 3]> {
        self.spacing
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        self.voxels[self.shape.index(z, y, x)]
    }

    /// Copies the box `[origin, origin + extent)`.
    pub fn sub_volume(&self, origin: [usize; 3], extent: Shape3) -> Result<Volume> {
        for a in 0..3 {
            if extent.0[a] == 0 || origin[a] + extent.0[a] > self.shape.0[a] {
                return Err(Error::ShapeMismatch(format!(
                    "box at {origin:?} of extent {extent} exceeds volume {}",
                    self.shape
                )));
            }
        }
        let mut out = Vec::with_capacity(extent.len());
        for z in 0..extent.0[0] {
            for y in 0..extent.0[1] {
                let start = self.shape.index(origin[0] + z, origin[1] + y, origin[2]);
                out.extend_from_slice(&self.voxels[start..start + extent.0[2]]);
            }
        }
        Ok(Volume { shape: extent, voxels: out, spacing: self.spacing })
    }

    /// Mutable voxel access for transforms that keep values in range.
    pub(crate) fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    pub(crate) fn from_parts_unchecked(shape: Shape3, voxels: Vec<f32>) -> Self {
        debug_assert_eq!(voxels.len(), shape.len());
        Volume { shape, voxels, spacing: None }
    }
}

/// Flat latent embedding of one patient scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVector {
    pub patient_id: String,
    pub values: Vec<f32>,
}

/// One of the `C` fixed crop locations, in reference-volume voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coordinate {
    pub index: usize,
    pub origin: [usize; 3],
    pub extent: Shape3,
}

impl Coordinate {
    pub fn fits(&self, shape: Shape3) -> bool {
        (0..3).all(|a| self.extent.0[a] >= 1 && self.origin[a] + self.extent.0[a] <= shape.0[a])
    }

    pub fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.origin[a] as f64 + self.extent.0[a] as f64 / 2.0)
    }
}

/// A canonical-size crop labelled by the coordinate it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternCrop {
    pub data: Volume,
    pub patient_id: String,
    pub scale_factor: f32,
    coordinate_index: usize,
}

impl PatternCrop {
    pub fn new(data: Volume, patient_id: impl Into<String>, coordinate_index: usize, scale_factor: f32) -> Self {
        PatternCrop { data, patient_id: patient_id.into(), scale_factor, coordinate_index }
    }

    pub fn coordinate_index(&self) -> usize {
        self.coordinate_index
    }

    /// The pseudo label is the coordinate index.
    pub fn pseudo_label(&self) -> usize {
        self.coordinate_index
    }
}

/// Weights of the classification and restoration terms of the joint loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_rec: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_cls: 0.01, lambda_rec: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("loss_weights.lambda_cls", self.lambda_cls), ("loss_weights.lambda_rec", self.lambda_rec)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(name, "must be a finite non-negative number"));
            }
        }
        if self.lambda_cls == 0.0 && self.lambda_rec == 0.0 {
            return Err(Error::config("loss_weights", "loss weights both zero"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

/// Pretraining hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Nearest neighbours retrieved for the reference patient.
    pub k: usize,
    /// Number of coordinates, i.e. pseudo-label classes.
    pub c: usize,
    pub canonical_crop_shape: Shape3,
    pub scale_factors: Vec<f32>,
    pub loss_weights: LossWeights,
    pub warmup_epochs: usize,
    pub joint_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            k: 200,
            c: 44,
            canonical_crop_shape: Shape3::new(64, 64, 32),
            scale_factors: vec![0.8, 1.0, 1.2],
            loss_weights: LossWeights::default(),
            warmup_epochs: 20,
            joint_epochs: 100,
            learning_rate: 0.001,
            batch_size: 8,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

/// Checks every configuration invariant against a corpus of `corpus_size` patients.
pub fn validate_config(config: PretrainConfig, corpus_size: usize) -> Result<PretrainConfig> {
    if config.k < 1 {
        return Err(Error::config("k", "K must be ≥ 1"));
    }
    if config.k + 1 > corpus_size {
        return Err(Error::config(
            "k",
            format!("K must be ≤ corpus size − 1 (K = {}, corpus size = {corpus_size})", config.k),
        ));
    }
    if config.c < 1 {
        return Err(Error::config("c", "C must be ≥ 1"));
    }
    if config.canonical_crop_shape.0.iter().any(|&a| a == 0) {
        return Err(Error::config("canonical_crop_shape", "every axis must be ≥ 1"));
    }
    if config.scale_factors.is_empty() {
        return Err(Error::config("scale_factors", "at least one scale factor is required"));
    }
    if config.scale_factors.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::config("scale_factors", "scale factors must be finite and > 0"));
    }
    config.loss_weights.validate()?;
    if !config.learning_rate.is_finite() || config.learning_rate <= 0.0 {
        return Err(Error::config("learning_rate", "learning rate must be > 0"));
    }
    if config.batch_size == 0 {
        return Err(Error::config("batch_size", "batch size must be ≥ 1"));
    }
    Ok(config)
}
