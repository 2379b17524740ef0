//! Desk-scale target tasks built from held-out phantom patients.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataio::{PhantomPatient, Split};
use crate::discovery::crop_at;
use crate::error::{Error, Result};
use crate::rng;
use crate::types::{Coordinate, Shape3, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Segmentation,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Classification => "classification",
            TaskKind::Segmentation => "segmentation",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" | "cls" => Ok(TaskKind::Classification),
            "segmentation" | "seg" => Ok(TaskKind::Segmentation),
            other => Err(Error::config("task_kind", format!("unknown task_kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Mask(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSample {
    pub id: String,
    pub patient_id: String,
    pub volume: Volume,
    pub target: Target,
}

impl TargetSample {
    pub fn label(&self) -> Option<usize> {
        match self.target {
            Target::Class(c) => Some(c),
            Target::Mask(_) => None,
        }
    }

    pub fn mask(&self) -> Option<&[bool]> {
        match &self.target {
            Target::Mask(m) => Some(m),
            Target::Class(_) => None,
        }
    }
}

/// A target dataset split at patient level into a training pool and a test
/// set. Only `label_budget` samples of the pool are used for fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTask {
    pub kind: TaskKind,
    /// Class count; 1 for segmentation.
    pub num_classes: usize,
    pub input_shape: Shape3,
    pub train: Vec<TargetSample>,
    pub test: Vec<TargetSample>,
    pub label_budget: usize,
}

impl TargetTask {
    pub fn validate(&self) -> Result<()> {
        if self.label_budget == 0 || self.train.is_empty() {
            return Err(Error::Invalid("empty label budget".into()));
        }
        if self.label_budget > self.train.len() {
            return Err(Error::Invalid(format!(
                "label budget {} exceeds the {} training samples",
                self.label_budget,
                self.train.len()
            )));
        }
        if self.test.is_empty() {
            return Err(Error::Invalid("target task has no test samples".into()));
        }
        for s in self.train.iter().chain(&self.test) {
            if s.volume.shape() != self.input_shape {
                return Err(Error::ShapeMismatch(format!("sample {} has shape {:?}", s.id, s.volume.shape())));
            }
            match (&s.target, self.kind) {
                (Target::Class(c), TaskKind::Classification) if *c < self.num_classes => {}
                (Target::Mask(m), TaskKind::Segmentation) if m.len() == self.input_shape.len() => {}
                _ => return Err(Error::Invalid(format!("sample {} has a target incompatible with the task", s.id))),
            }
        }
        Ok(())
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for s in self.train.iter().chain(&self.test) {
            if let Some(c) = s.label() {
                h[c] += 1;
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyTargetConfig {
    pub cls_crops_per_coordinate: usize,
    pub seg_crops_per_patient: usize,
    /// Maximum per-axis shift of a crop, in voxels.
    pub jitter: usize,
    /// Fraction of held-out patients reserved for testing.
    pub test_fraction: f64,
    /// Fraction of the training pool that receives labels.
    pub label_fraction: f64,
}

impl Default for ToyTargetConfig {
    fn default() -> Self {
        ToyTargetConfig {
            cls_crops_per_coordinate: 2,
            seg_crops_per_patient: 8,
            jitter: 3,
            test_fraction: 1.0 / 3.0,
            label_fraction: 0.1,
        }
    }
}

impl ToyTargetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cls_crops_per_coordinate == 0 || self.seg_crops_per_patient == 0 {
            return Err(Error::config("targets", "crops per patient must be ≥ 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("targets.test_fraction", "must lie in (0, 1)"));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::config("targets.label_fraction", "empty label budget: must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Number of labeled samples for a pool of `n`: `ceil(fraction · n)`.
pub fn label_budget(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction) - 1e-9).ceil().max(0.0) as usize
}

fn jittered(r: &mut rng::Rng, origin: [i64; 3], extent: Shape3, bounds: Shape3, jitter: usize) -> [usize; 3] {
    let j = jitter as i64;
    [0, 1, 2].map(|a| {
        let hi = bounds.0[a] as i64 - extent.0[a] as i64;
        (origin[a] + r.random_range(-j..=j)).clamp(0, hi.max(0)) as usize
    })
}

fn centroid(mask: &[bool], shape: Shape3) -> Option<[f64; 3]> {
    let [_, h, w] = shape.0;
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        sum[0] += (i / (h * w)) as f64;
        sum[1] += (i / w % h) as f64;
        sum[2] += (i % w) as f64;
        n += 1;
    }
    (n > 0).then(|| sum.map(|s| s / n as f64))
}

fn crop_mask(mask: &[bool], shape: Shape3, origin: [usize; 3], extent: Shape3) -> Vec<bool> {
    let mut out = Vec::with_capacity(extent.len());
    for z in 0..extent.0[0] {
        for y in 0..extent.0[1] {
            let start = shape.index(origin[0] + z, origin[1] + y, origin[2]);
            out.extend_from_slice(&mask[start..start + extent.0[2]]);
        }
    }
    out
}

/// Builds the classification task (which coordinate region a crop came from)
/// and the segmentation task (the target organ) from the held-out patients.
pub fn make_toy_targets(
    patients: &[PhantomPatient],
    coordinates: &[Coordinate],
    canonical: Shape3,
    cfg: &ToyTargetConfig,
    seed: u64,
) -> Result<(TargetTask, TargetTask)> {
    cfg.validate()?;
    if coordinates.is_empty() {
        return Err(Error::Invalid("no coordinates for the classification task".into()));
    }
    let mut held: Vec<&PhantomPatient> = patients.iter().filter(|p| p.split == Split::Heldout).collect();
    if held.len() < 2 {
        return Err(Error::Invalid(format!("need at least 2 held-out patients, found {}", held.len())));
    }
    held.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    let root = rng::substream(seed, rng::TARGETS);
    let mut order = held.clone();
    order.shuffle(&mut rng::rng(rng::derive(root, &[0])));
    let n_test = ((held.len() as f64 * cfg.test_fraction).round() as usize).clamp(1, held.len() - 1);
    let test_ids: Vec<&str> = order[..n_test].iter().map(|p| p.patient_id.as_str()).collect();

    let mut cls = (Vec::new(), Vec::new());
    let mut seg = (Vec::new(), Vec::new());
    for (pi, p) in held.iter().enumerate() {
        let shape = p.volume.shape();
        let mut r = rng::rng(rng::derive(root, &[1, pi as u64]));
        let is_test = test_ids.contains(&p.patient_id.as_str());
        for coord in coordinates {
            if !coord.fits(shape) {
                return Err(Error::Invalid(format!(
                    "coordinate {} does not fit patient {}",
                    coord.index, p.patient_id
                )));
            }
            for k in 0..cfg.cls_crops_per_coordinate {
                let origin = jittered(&mut r, coord.origin.map(|o| o as i64), coord.extent, shape, cfg.jitter);
                let moved = Coordinate { origin, ..*coord };
                let sample = TargetSample {
                    id: format!("{}_c{:02}_{k}", p.patient_id, coord.index),
                    patient_id: p.patient_id.clone(),
                    volume: crop_at(&p.volume, &moved, 1.0, canonical)?,
                    target: Target::Class(coord.index),
                };
                if is_test {
                    cls.1.push(sample)
                } else {
                    cls.0.push(sample)
                }
            }
        }
        let c = centroid(&p.target_mask, shape)
            .ok_or_else(|| Error::Invalid(format!("patient {} has an empty target organ", p.patient_id)))?;
        if (0..3).any(|a| canonical.0[a] > shape.0[a]) {
            return Err(Error::ShapeMismatch(format!("crop {:?} exceeds volume {:?}", canonical.0, shape.0)));
        }
        let centre = [0, 1, 2].map(|a| (c[a] - canonical.0[a] as f64 / 2.0).round() as i64);
        for k in 0..cfg.seg_crops_per_patient {
            let origin = jittered(&mut r, centre, canonical, shape, cfg.jitter);
            let mask = crop_mask(&p.target_mask, shape, origin, canonical);
            if !mask.contains(&true) {
                return Err(Error::Invalid(format!("segmentation crop {k} of {} misses the organ", p.patient_id)));
            }
            let sample = TargetSample {
                id: format!("{}_s{k}", p.patient_id),
                patient_id: p.patient_id.clone(),
                volume: p.volume.sub_volume(origin, canonical)?,
                target: Target::Mask(mask),
            };
            if is_test {
                seg.1.push(sample)
            } else {
                seg.0.push(sample)
            }
        }
    }
    let task = |kind, num_classes, (train, test): (Vec<TargetSample>, Vec<TargetSample>)| {
        let t = TargetTask {
            kind,
            num_classes,
            input_shape: canonical,
            label_budget: label_budget(train.len(), cfg.label_fraction),
            train,
            test,
        };
        t.validate().map(|_| t)
    };
    let c = coordinates.iter().map(|c| c.index).max().unwrap() + 1;
    Ok((task(TaskKind::Classification, c, cls)?, task(TaskKind::Segmentation, 1, seg)?))
}
