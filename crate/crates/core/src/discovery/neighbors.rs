use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::LatentVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub patient_id: String,
    pub distance: f64,
}

/// Latents of every patient plus the ranked neighbours of one reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryIndex {
    pub reference_id: String,
    pub latents: BTreeMap<String, LatentVector>,
    pub neighbors: Vec<Neighbor>,
}

impl DiscoveryIndex {
    /// Reference first, then neighbours by rank.
    pub fn selected_patients(&self) -> Vec<&str> {
        std::iter::once(self.reference_id.as_str())
            .chain(self.neighbors.iter().map(|n| n.patient_id.as_str()))
            .collect()
    }
}

pub fn l2_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
}

/// The `k` latents closest to the reference in Euclidean distance, ties
/// broken by ascending patient id. The reference itself is excluded.
pub fn nearest_neighbors(reference_id: &str, latents: &[LatentVector], k: usize) -> Result<DiscoveryIndex> {
    let map: BTreeMap<String, LatentVector> = latents.iter().map(|l| (l.patient_id.clone(), l.clone())).collect();
    if map.len() != latents.len() {
        return Err(Error::Invalid("duplicate patient id among latents".into()));
    }
    let reference = map
        .get(reference_id)
        .ok_or_else(|| Error::Invalid(format!("reference patient {reference_id} has no latent")))?;
    if k < 1 || k > latents.len() - 1 {
        return Err(Error::Invalid(format!("K out of range: K = {k}, must be in 1..={}", latents.len() - 1)));
    }
    let width = reference.values.len();
    let mut ranked = Vec::with_capacity(latents.len() - 1);
    for (id, l) in &map {
        if id == reference_id {
            continue;
        }
        if l.values.len() != width {
            return Err(Error::ShapeMismatch(format!(
                "latent of {id} has length {}, expected {width}",
                l.values.len()
            )));
        }
        let distance = l2_distance(&reference.values, &l.values);
        if !distance.is_finite() {
            return Err(Error::Invariant(format!("non-finite distance to {id}")));
        }
        ranked.push(Neighbor { patient_id: id.clone(), distance });
    }
    ranked.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.patient_id.cmp(&b.patient_id)));
    ranked.truncate(k);
    Ok(DiscoveryIndex { reference_id: reference_id.to_string(), latents: map, neighbors: ranked })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(id: &str, v: &[f32]) -> LatentVector {
        LatentVector { patient_id: id.into(), values: v.to_vec() }
    }

    #[test]
    fn hand_example() {
        let l = [lat("r", &[0.0, 0.0]), lat("a", &[3.0, 4.0]), lat("b", &[6.0, 8.0])];
        let idx = nearest_neighbors("r", &l, 2).unwrap();
        assert_eq!(
            idx.neighbors,
            vec![
                Neighbor { patient_id: "a".into(), distance: 5.0 },
                Neighbor { patient_id: "b".into(), distance: 10.0 }
            ]
        );
        assert_eq!(idx.selected_patients(), ["r", "a", "b"]);
    }

    #[test]
    fn ties_go_to_smaller_id_and_k_is_checked() {
        let l = [lat("r", &[0.0]), lat("z", &[1.0]), lat("m", &[-1.0]), lat("a", &[2.0])];
        let idx = nearest_neighbors("r", &l, 2).unwrap();
        let ids: Vec<_> = idx.neighbors.iter().map(|n| n.patient_id.as_str()).collect();
        assert_eq!(ids, ["m", "z"]);
        assert!(nearest_neighbors("r", &l, 4).is_err());
        assert!(nearest_neighbors("r", &l, 0).is_err());
        assert!(nearest_neighbors("q", &l, 1).is_err());
    }

    #[test]
    fn identical_latents_are_at_distance_zero() {
        let l = [lat("r", &[0.5, 0.25]), lat("s", &[0.5, 0.25])];
        assert_eq!(nearest_neighbors("r", &l, 1).unwrap().neighbors[0].distance, 0.0);
    }
}
