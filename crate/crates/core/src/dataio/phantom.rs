//! Synthetic anatomy. Every patient shares one primitive layout (a body
//! ellipsoid, a set of ellipsoids and rods, and one target organ painted
//! last); patients differ by seeded jitter of positions, sizes and
//! intensities plus additive noise.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::manifest::{CorpusManifest, ManifestEntry, Split};
use crate::dataio::sgvol::save_volume;
use crate::error::{Error, Result};
use crate::rng;
use crate::types::{Shape3, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub n_patients: usize,
    pub base_shape: Shape3,
    pub n_structures: usize,
    /// Semi-axis range of the primitives, in voxels.
    pub radius_range: [f32; 2],
    /// Per-patient displacement scale, in voxels.
    pub deformation: f32,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f32,
    pub heldout_fraction: f32,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            n_patients: 30,
            base_shape: Shape3::new(64, 64, 32),
            n_structures: 14,
            radius_range: [3.0, 8.0],
            deformation: 1.5,
            noise: 0.02,
            heldout_fraction: 0.3,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::config("phantom.n_patients", "must be ≥ 1"));
        }
        let [lo, hi] = self.radius_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config("phantom.radius_range", "need 0 < min ≤ max"));
        }
        if !(self.deformation >= 0.0 && self.deformation.is_finite()) {
            return Err(Error::config("phantom.deformation", "deformation magnitude must be ≥ 0"));
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return Err(Error::config("phantom.noise", "noise level must lie in [0, 0.5]"));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(Error::config("phantom.heldout_fraction", "must lie in [0, 1)"));
        }
        let smallest = 2.0 * lo;
        if let Some(a) = self.base_shape.0.iter().position(|&a| (a as f32) < smallest) {
            return Err(Error::config(
                "phantom.base_shape",
                format!("axis {a} ({}) is smaller than the smallest structure ({smallest})", self.base_shape.0[a]),
            ));
        }
        Ok(())
    }

    pub fn patient_id(index: usize) -> String {
        format!("p{index:03}")
    }

    /// Patient indices flagged as held out.
    pub fn heldout_indices(&self) -> Vec<usize> {
        let n_heldout = (self.n_patients as f32 * self.heldout_fraction).round() as usize;
        let mut order: Vec<usize> = (0..self.n_patients).collect();
        order.shuffle(&mut rng::rng(rng::substream(self.seed, "split")));
        let mut held: Vec<usize> = order[..n_heldout.min(self.n_patients.saturating_sub(1))].to_vec();
        held.sort_unstable();
        held
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Ellipsoid,
    /// Cylinder along `axis`; radii are `[radius, radius, half_length]` in the
    /// rod's own frame.
    Rod {
        axis: usize,
    },
}

#[derive(Debug, Clone, Copy)]
struct Primitive {
    kind: Kind,
    center: [f32; 3],
    radii: [f32; 3],
    intensity: f32,
}

impl Primitive {
    /// Soft coverage in `[0, 1]`, with a one-voxel ramp at the boundary.
    #[inline]
    fn alpha(&self, p: [f32; 3]) -> f32 {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let sd = match self.kind {
            Kind::Ellipsoid => {
                let q = (0..3).map(|a| (d[a] / self.radii[a]).powi(2)).sum::<f32>().sqrt();
                let rmin = self.radii.iter().copied().fold(f32::INFINITY, f32::min);
                (1.0 - q) * rmin
            }
            Kind::Rod { axis } => {
                let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                let radial = (d[u] * d[u] + d[v] * d[v]).sqrt();
                (self.radii[0] - radial).min(self.radii[2] - d[axis].abs())
            }
        };
        (0.5 + sd).clamp(0.0, 1.0)
    }

    fn bounds(&self, shape: Shape3) -> [(usize, usize); 3] {
        let reach = match self.kind {
            Kind::Ellipsoid => self.radii,
            Kind::Rod { axis } => {
                let mut r = [self.radii[0]; 3];
                r[axis] = self.radii[2];
                r
            }
        };
        [0, 1, 2].map(|a| {
            let lo = (self.center[a] - reach[a] - 1.0).floor().max(0.0) as usize;
            let hi = ((self.center[a] + reach[a] + 2.0).ceil().max(0.0) as usize).min(shape.0[a]);
            (lo.min(hi), hi)
        })
    }
}

#[derive(Debug, Clone)]
struct Layout {
    body: Primitive,
    structures: Vec<Primitive>,
    target: Primitive,
}

fn layout(spec: &PhantomSpec) -> Layout {
    let mut r = rng::rng(rng::substream(spec.seed, "layout"));
    let dims = spec.base_shape.0.map(|a| a as f32);
    let [lo, hi] = spec.radius_range;
    let body = Primitive {
        kind: Kind::Ellipsoid,
        center: dims.map(|a| a / 2.0),
        radii: dims.map(|a| 0.46 * a),
        intensity: 0.2,
    };
    let structures = (0..spec.n_structures)
        .map(|_| {
            let center = dims.map(|a| r.random_range(0.12..0.88) * a);
            let intensity = r.random_range(0.4..1.0);
            if r.random_bool(0.5) {
                let radii = [0; 3].map(|_| r.random_range(lo..=hi));
                Primitive { kind: Kind::Ellipsoid, center, radii, intensity }
            } else {
                let axis = r.random_range(0..3);
                let radius = r.random_range(lo..=(lo + hi) / 2.0);
                let half = r.random_range(lo..=hi) * 1.5;
                Primitive { kind: Kind::Rod { axis }, center, radii: [radius, radius, half], intensity }
            }
        })
        .collect();
    let target = Primitive {
        kind: Kind::Ellipsoid,
        center: dims.map(|a| r.random_range(0.3..0.7) * a),
        radii: [0; 3].map(|_| r.random_range(0.8..=1.0) * hi),
        intensity: 0.85,
    };
    Layout { body, structures, target }
}

fn jitter(p: &Primitive, r: &mut rng::Rng, deformation: f32) -> Primitive {
    let mut n = || -> f32 { StandardNormal.sample(r) };
    let center = p.center.map(|c| c + deformation * n());
    let radii = p.radii.map(|x| (x * (1.0 + 0.05 * deformation * n())).max(0.5));
    let intensity = (p.intensity + 0.02 * deformation * n()).clamp(0.05, 1.0);
    Primitive { kind: p.kind, center, radii, intensity }
}

/// One rendered patient.
#[derive(Debug, Clone)]
pub struct PhantomPatient {
    pub patient_id: String,
    pub volume: Volume,
    /// Voxels covered by the target organ.
    pub target_mask: Vec<bool>,
    pub split: Split,
}

fn paint(values: &mut [f32], shape: Shape3, p: &Primitive, mut mask: Option<&mut [bool]>) {
    let b = p.bounds(shape);
    for z in b[0].0..b[0].1 {
        for y in b[1].0..b[1].1 {
            for x in b[2].0..b[2].1 {
                let a = p.alpha([z as f32, y as f32, x as f32]);
                if a > 0.0 {
                    let i = shape.index(z, y, x);
                    values[i] = values[i] * (1.0 - a) + p.intensity * a;
                    if let Some(m) = mask.as_deref_mut() {
                        m[i] = a >= 0.5;
                    }
                }
            }
        }
    }
}

/// Renders patient `index`; a pure function of `(spec, index)`.
pub fn render_patient(spec: &PhantomSpec, index: usize) -> Result<PhantomPatient> {
    spec.validate()?;
    if index >= spec.n_patients {
        return Err(Error::Invalid(format!("patient index {index} out of range")));
    }
    Ok(render_with_layout(spec, &layout(spec), index, &spec.heldout_indices()))
}

fn render_with_layout(spec: &PhantomSpec, lay: &Layout, index: usize, heldout: &[usize]) -> PhantomPatient {
    let shape = spec.base_shape;
    let mut r = rng::rng(rng::derive(spec.seed, &[index as u64]));
    let d = spec.deformation;
    let body = jitter(&lay.body, &mut r, d * 0.25);
    let structures: Vec<Primitive> = lay.structures.iter().map(|p| jitter(p, &mut r, d)).collect();
    let target = jitter(&lay.target, &mut r, d);

    let mut values = vec![0.0f32; shape.len()];
    let mut mask = vec![false; shape.len()];
    paint(&mut values, shape, &body, None);
    for p in &structures {
        paint(&mut values, shape, p, None);
    }
    paint(&mut values, shape, &target, Some(&mut mask));
    if spec.noise > 0.0 {
        for v in values.iter_mut() {
            let n: f32 = StandardNormal.sample(&mut r);
            *v += spec.noise * n;
        }
    }
    for v in values.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    let split = if heldout.contains(&index) { Split::Heldout } else { Split::Train };
    PhantomPatient {
        patient_id: PhantomSpec::patient_id(index),
        volume: Volume::from_parts_unchecked(shape, values),
        target_mask: mask,
        split,
    }
}

/// Renders every patient of the corpus in memory.
pub fn generate_phantoms(spec: &PhantomSpec) -> Result<Vec<PhantomPatient>> {
    spec.validate()?;
    let lay = layout(spec);
    let heldout = spec.heldout_indices();
    Ok((0..spec.n_patients).into_par_iter().map(|i| render_with_layout(spec, &lay, i, &heldout)).collect())
}

/// Writes the corpus to `out_dir` as `volumes/<id>.sgvol`, `manifest.csv`
/// and `phantom.json`.
pub fn generate_phantom_corpus(spec: &PhantomSpec, out_dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    let out_dir = out_dir.as_ref();
    let vol_dir = out_dir.join("volumes");
    fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
    let patients = generate_phantoms(spec)?;
    patients.par_iter().try_for_each(|p| save_volume(&p.volume, vol_dir.join(format!("{}.sgvol", p.patient_id))))?;
    let manifest = CorpusManifest {
        entries: patients
            .iter()
            .map(|p| ManifestEntry {
                patient_id: p.patient_id.clone(),
                path: Path::new("volumes").join(format!("{}.sgvol", p.patient_id)),
                shape: p.volume.shape(),
                split: p.split,
            })
            .collect(),
        corpus_seed: Some(spec.seed),
    };
    manifest.save(out_dir.join("manifest.csv"))?;
    let spec_path = out_dir.join("phantom.json");
    fs::write(&spec_path, serde_json::to_vec_pretty(spec)?).map_err(|e| Error::io(&spec_path, e))?;
    Ok(manifest)
}
