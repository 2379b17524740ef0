//! Crop dataset: a directory holding `crops.csv` with columns
//! `crop_id,patient_id,coordinate_index,pseudo_label,scale_factor` and one
//! SGVOL file per crop under `crops/`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::sgvol::{decode_volume, save_volume};
use crate::error::{Error, Result};
use crate::types::PatternCrop;

const HEADER: [&str; 5] = ["crop_id", "patient_id", "coordinate_index", "pseudo_label", "scale_factor"];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    crop_id: String,
    patient_id: String,
    coordinate_index: usize,
    pseudo_label: usize,
    scale_factor: f32,
}

pub fn save_crop_dataset(crops: &[PatternCrop], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let crop_dir = dir.join("crops");
    fs::create_dir_all(&crop_dir).map_err(|e| Error::io(&crop_dir, e))?;
    if let Some(first) = crops.first() {
        if let Some(bad) = crops.iter().find(|c| c.data.shape() != first.data.shape()) {
            return Err(Error::Invariant(format!(
                "crop shapes differ: {} vs {}",
                first.data.shape(),
                bad.data.shape()
            )));
        }
    }
    let mut w = csv::Writer::from_path(dir.join("crops.csv"))?;
    w.write_record(HEADER)?;
    for (i, c) in crops.iter().enumerate() {
        let crop_id = format!("crop_{i:06}");
        save_volume(&c.data, crop_dir.join(format!("{crop_id}.sgvol")))?;
        w.write_record([
            crop_id,
            c.patient_id.clone(),
            c.coordinate_index().to_string(),
            c.pseudo_label().to_string(),
            c.scale_factor.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir, e))
}

pub fn load_crop_dataset(dir: impl AsRef<Path>) -> Result<Vec<PatternCrop>> {
    let dir = dir.as_ref();
    let csv_path = dir.join("crops.csv");
    let file = fs::File::open(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let header = r.headers().map_err(|e| Error::CorruptCropDataset(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::CorruptCropDataset("unexpected header".into()));
    }
    let mut crops: Vec<PatternCrop> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::CorruptCropDataset(e.to_string()))?;
        if rec.len() != HEADER.len() {
            return Err(Error::CorruptCropDataset(format!(
                "record {line} has {} fields, expected {}",
                rec.len(),
                HEADER.len()
            )));
        }
        let row: Row =
            rec.deserialize(Some(&header)).map_err(|e| Error::CorruptCropDataset(format!("record {line}: {e}")))?;
        if row.pseudo_label != row.coordinate_index {
            return Err(Error::CorruptCropDataset(format!(
                "record {line}: pseudo_label {} differs from coordinate_index {}",
                row.pseudo_label, row.coordinate_index
            )));
        }
        if !(row.scale_factor > 0.0 && row.scale_factor.is_finite()) {
            return Err(Error::CorruptCropDataset(format!("record {line}: bad scale factor")));
        }
        let path = dir.join("crops").join(format!("{}.sgvol", row.crop_id));
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let data = decode_volume(&bytes).map_err(|e| Error::CorruptCropDataset(format!("{}: {e}", row.crop_id)))?;
        if let Some(first) = crops.first() {
            if first.data.shape() != data.shape() {
                return Err(Error::CorruptCropDataset(format!("{}: shape differs from the first crop", row.crop_id)));
            }
        }
        crops.push(PatternCrop::new(data, row.patient_id, row.coordinate_index, row.scale_factor));
    }
    Ok(crops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Shape3, Volume};
    use rand::Rng;

    fn dataset(c: usize, per_class: usize) -> Vec<PatternCrop> {
        let mut rng = crate::rng::rng(5);
        let shape = Shape3::new(4, 4, 2);
        (0..c * per_class)
            .map(|i| {
                let v = Volume::new(shape, (0..shape.len()).map(|_| rng.random::<f32>()).collect()).unwrap();
                PatternCrop::new(v, format!("p{:03}", i / c), i % c, 1.0)
            })
            .collect()
    }

    #[test]
    fn empty_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        save_crop_dataset(&[], dir.path()).unwrap();
        assert!(load_crop_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn six_classes_twenty_each() {
        let dir = tempfile::tempdir().unwrap();
        let crops = dataset(6, 20);
        save_crop_dataset(&crops, dir.path()).unwrap();
        let back = load_crop_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 120);
        let mut hist = [0usize; 6];
        for c in &back {
            hist[c.pseudo_label()] += 1;
        }
        assert_eq!(hist, [20; 6]);
        assert_eq!(back, crops);
    }

    #[test]
    fn corrupted_record_length_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_crop_dataset(&dataset(2, 2), dir.path()).unwrap();
        let p = dir.path().join("crops.csv");
        let text = fs::read_to_string(&p).unwrap().replacen(",1\n", "\n", 1);
        fs::write(&p, text).unwrap();
        let err = load_crop_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.starts_with("corrupt crop dataset"), "{err}");
    }

    #[test]
    fn mismatched_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_crop_dataset(&dataset(2, 1), dir.path()).unwrap();
        let p = dir.path().join("crops.csv");
        let text = fs::read_to_string(&p).unwrap().replace("p000,1,1,", "p000,1,0,");
        fs::write(&p, text).unwrap();
        assert!(matches!(load_crop_dataset(dir.path()), Err(Error::CorruptCropDataset(_))));
    }
}
