use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use semgen::config::SemgenConfig;
use semgen::dataio::load_crop_dataset;
use semgen::transforms::{compose, inpaint, local_shuffle, nonlinear_intensity, outpaint, TransformRecord};
use semgen::{rng, Error, Result, Volume};
use serde::Serialize;

const ZOOM: u32 = 4;
const PANELS: [&str; 6] = ["original", "nonlinear", "local_shuffle", "inpaint", "outpaint", "composed"];

#[derive(Serialize)]
struct PreviewRow {
    crop: usize,
    records: Vec<(String, TransformRecord)>,
}

/// Middle slice along the first axis.
fn mid_slice(v: &Volume) -> (Vec<f32>, u32, u32) {
    let [d, h, w] = v.shape().0;
    let z = d / 2;
    let slice = (0..h * w).map(|i| v.at(z, i / w, i % w)).collect();
    (slice, w as u32, h as u32)
}

/// Writes `preview.png` (one row per crop, one column per transformation)
/// and `preview.json` with the transform records.
pub fn write_preview(cfg: &SemgenConfig, crops: &Path, count: usize, out: &Path) -> Result<Vec<PathBuf>> {
    let dataset = load_crop_dataset(crops)?;
    let chosen: Vec<_> = dataset.iter().take(count).collect();
    if chosen.is_empty() {
        return Err(Error::Invalid("no crops to preview".into()));
    }
    let root = rng::substream(cfg.pretrain.seed, rng::TRANSFORMS);
    let t = &cfg.options.transforms;
    let (_, pw, ph) = mid_slice(&chosen[0].data);
    let mut img = GrayImage::new(pw * ZOOM * PANELS.len() as u32, ph * ZOOM * chosen.len() as u32);
    let mut rows = Vec::new();
    for (row, crop) in chosen.iter().enumerate() {
        let seed = rng::derive(root, &[row as u64]);
        let results = [
            nonlinear_intensity(&crop.data, t, seed)?,
            local_shuffle(&crop.data, t, seed)?,
            inpaint(&crop.data, t, seed)?,
            outpaint(&crop.data, t, seed)?,
            compose(&crop.data, t, seed)?,
        ];
        let mut panels = vec![crop.data.clone()];
        let mut records = Vec::new();
        for (name, (v, r)) in PANELS[1..].iter().zip(results) {
            panels.push(v);
            records.push((name.to_string(), r));
        }
        for (col, v) in panels.iter().enumerate() {
            let (slice, w, h) = mid_slice(v);
            for y in 0..h * ZOOM {
                for x in 0..w * ZOOM {
                    let val = slice[((y / ZOOM) * w + x / ZOOM) as usize];
                    let px = (val.clamp(0.0, 1.0) * 255.0).round() as u8;
                    img.put_pixel(col as u32 * pw * ZOOM + x, row as u32 * ph * ZOOM + y, Luma([px]));
                }
            }
        }
        rows.push(PreviewRow { crop: row, records });
    }
    let png = out.join("preview.png");
    img.save(&png).map_err(|e| Error::Invalid(format!("{}: {e}", png.display())))?;
    let json = out.join("preview.json");
    std::fs::write(&json, serde_json::to_vec_pretty(&rows)?)
        .map_err(|e| Error::Io { path: json.clone(), source: e })?;
    Ok(vec![png, json])
}
