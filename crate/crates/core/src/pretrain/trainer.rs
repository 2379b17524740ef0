use std::fmt;
use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::{cross_entropy_with_grad, restoration_with_grad};
use crate::error::{Error, Result};
use crate::network::{
    Adam, DecoderMode, ModelConfig, ModelWeights, Parameters, SemanticGenesisNet, Tensor, WeightSidecar,
};
use crate::rng;
use crate::transforms::{compose, TransformConfig};
use crate::types::{PatternCrop, PretrainConfig, Shape3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Warmup,
    Joint,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Warmup => "warmup",
            Stage::Joint => "joint",
        })
    }
}

/// Mean losses over one epoch. `loss_total` follows the stage: during warmup
/// only the classification term counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub loss_cls: f64,
    pub loss_rec: f64,
    pub loss_total: f64,
    /// Training accuracy on the transformed crops seen this epoch.
    pub accuracy: f64,
}

pub const LOG_HEADER: &str = "epoch,stage,loss_cls,loss_rec,loss_total";

impl EpochRecord {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{}", self.epoch, self.stage, self.loss_cls, self.loss_rec, self.loss_total)
    }
}

/// Where the loop stands between epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub stage: Stage,
    pub running_cls: f64,
    pub running_rec: f64,
    pub optimizer: Adam<f32>,
    pub root_seed: u64,
}

impl TrainState {
    pub fn new(cfg: &PretrainConfig) -> Self {
        TrainState {
            epoch: 0,
            stage: if cfg.warmup_epochs > 0 { Stage::Warmup } else { Stage::Joint },
            running_cls: 0.0,
            running_rec: 0.0,
            optimizer: Adam::new(cfg.learning_rate),
            root_seed: cfg.seed,
        }
    }

    pub fn stage_for(epoch: usize, cfg: &PretrainConfig) -> Stage {
        if epoch < cfg.warmup_epochs {
            Stage::Warmup
        } else {
            Stage::Joint
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainOptions {
    pub transforms: TransformConfig,
    /// Keep only the newest this many per-epoch checkpoints; 0 keeps all.
    pub keep_checkpoints: usize,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        PretrainOptions { transforms: TransformConfig::default(), keep_checkpoints: 3 }
    }
}

pub struct PretrainResult {
    pub model: SemanticGenesisNet<f32>,
    pub log: Vec<EpochRecord>,
    pub weights: ModelWeights,
    /// Mean restoration loss over the dataset right before the first joint
    /// update, with the first joint epoch's transforms.
    pub joint_start_loss_rec: Option<f64>,
}

/// Stacks volumes into an `[N, 1, D, H, W]` tensor.
pub fn stack(volumes: &[&[f32]], shape: Shape3) -> Tensor<f32> {
    let s = shape.0;
    let data = volumes.iter().flat_map(|v| v.iter().copied()).collect();
    Tensor::from_vec(&[volumes.len(), 1, s[0], s[1], s[2]], data)
}

fn check_dataset(crops: &[PatternCrop], model: &ModelConfig) -> Result<()> {
    if crops.is_empty() {
        return Err(Error::Invalid("pretraining dataset is empty".into()));
    }
    for c in crops {
        if c.pseudo_label() >= model.num_classes {
            return Err(Error::Invalid(format!(
                "label {} out of range for C = {}",
                c.pseudo_label(),
                model.num_classes
            )));
        }
        if c.data.shape() != model.input_shape {
            return Err(Error::ShapeMismatch(format!(
                "crop of {} has shape {}, model expects {}",
                c.patient_id,
                c.data.shape(),
                model.input_shape
            )));
        }
    }
    Ok(())
}

fn sidecar(model: &ModelConfig, stage: Stage, rec: &EpochRecord) -> WeightSidecar {
    WeightSidecar {
        config_hash: model.config_hash(),
        stage: stage.to_string(),
        epoch: rec.epoch,
        loss_cls: Some(rec.loss_cls),
        loss_rec: Some(rec.loss_rec),
    }
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Runs the warmup stage (classification only) followed by the joint stage.
/// `out_dir`, when given, receives `log.csv`, `checkpoints/epoch_NNN.sgw` and
/// `weights.sgw`. `on_epoch` observes the model after every epoch.
pub fn pretrain(
    crops: &[PatternCrop],
    model_config: &ModelConfig,
    cfg: &PretrainConfig,
    opts: &PretrainOptions,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord, &SemanticGenesisNet<f32>),
) -> Result<PretrainResult> {
    cfg.loss_weights.validate()?;
    opts.transforms.validate()?;
    if cfg.warmup_epochs > 0 && cfg.loss_weights.lambda_cls == 0.0 {
        return Err(Error::config("loss_weights.lambda_cls", "warmup stage has zero effective loss"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size", "batch size must be ≥ 1"));
    }
    let mut model_config = model_config.clone();
    model_config.seed = rng::substream(cfg.seed, rng::INIT);
    check_dataset(crops, &model_config)?;
    let mut model = SemanticGenesisNet::<f32>::build(&model_config)?;
    let decoder_names = model.decoder_param_names();

    let mut log_file = match out_dir {
        Some(dir) => {
            let ck = dir.join("checkpoints");
            fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
            let path = dir.join("log.csv");
            let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
            Some((f, path))
        }
        None => None,
    };
    let mut written: Vec<PathBuf> = Vec::new();

    let shuffle_root = rng::substream(cfg.seed, rng::SHUFFLING);
    let transform_root = rng::substream(cfg.seed, rng::TRANSFORMS);
    let shape = model_config.input_shape;
    let w = cfg.loss_weights;
    let mut state = TrainState::new(cfg);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..crops.len()).collect();
    let mut joint_start_loss_rec = None;

    for epoch in 0..cfg.warmup_epochs + cfg.joint_epochs {
        state.epoch = epoch;
        state.stage = TrainState::stage_for(epoch, cfg);
        state.running_cls = 0.0;
        state.running_rec = 0.0;
        let joint = state.stage == Stage::Joint;
        order.sort_unstable();
        order.shuffle(&mut rng::rng(rng::derive(shuffle_root, &[epoch as u64])));
        let mut correct = 0usize;
        let transformed_batch = |idx: &[usize]| -> Result<Tensor<f32>> {
            let transformed = idx
                .par_iter()
                .map(|&i| {
                    let seed = rng::derive(transform_root, &[epoch as u64, i as u64]);
                    compose(&crops[i].data, &opts.transforms, seed).map(|(v, _)| v)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(stack(&transformed.iter().map(|v| v.voxels()).collect::<Vec<_>>(), shape))
        };
        let originals_batch =
            |idx: &[usize]| stack(&idx.iter().map(|&i| crops[i].data.voxels()).collect::<Vec<_>>(), shape);

        if epoch == cfg.warmup_epochs {
            let mut total = 0.0;
            for idx in order.chunks(cfg.batch_size) {
                let out = model.forward(&transformed_batch(idx)?)?;
                let recon = out.reconstruction.expect("inference evaluates the decoder");
                total += restoration_with_grad(&originals_batch(idx), &recon)?.0 * idx.len() as f64;
            }
            joint_start_loss_rec = Some(total / crops.len() as f64);
        }

        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = transformed_batch(idx)?;
            let labels: Vec<usize> = idx.iter().map(|&i| crops[i].pseudo_label()).collect();

            model.zero_grads();
            let mode = if joint { DecoderMode::Train } else { DecoderMode::Eval };
            let out = model.forward_train(&x, mode)?;
            let (l_cls, mut d_logits) = cross_entropy_with_grad(&out.logits, &labels)?;
            let originals = originals_batch(idx);
            let recon = out.reconstruction.as_ref().expect("decoder evaluated");
            let (l_rec, mut d_recon) = restoration_with_grad(&originals, recon)?;
            if !(l_cls.is_finite() && l_rec.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            for (row, &label) in out.logits.data.chunks(model_config.num_classes).zip(&labels) {
                correct += (argmax(row) == label) as usize;
            }

            let lc = w.lambda_cls as f32;
            d_logits.data.iter_mut().for_each(|g| *g *= lc);
            if joint {
                let lr = w.lambda_rec as f32;
                d_recon.data.iter_mut().for_each(|g| *g *= lr);
                model.backward(Some(&d_recon), &d_logits);
                state.optimizer.step(model.named_params_mut());
            } else {
                model.backward(None, &d_logits);
                let params = model.named_params_mut().into_iter().filter(|(n, _)| !decoder_names.contains(n)).collect();
                state.optimizer.step(params);
            }
            state.running_cls += l_cls * idx.len() as f64;
            state.running_rec += l_rec * idx.len() as f64;
        }

        let n = crops.len() as f64;
        let (loss_cls, loss_rec) = (state.running_cls / n, state.running_rec / n);
        let loss_total =
            if joint { w.lambda_cls * loss_cls + w.lambda_rec * loss_rec } else { w.lambda_cls * loss_cls };
        if !loss_total.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let rec =
            EpochRecord { epoch, stage: state.stage, loss_cls, loss_rec, loss_total, accuracy: correct as f64 / n };

        if let Some((f, path)) = log_file.as_mut() {
            writeln!(f, "{}", rec.csv_line()).and_then(|_| f.flush()).map_err(|e| Error::io(&*path, e))?;
            let dir = out_dir.expect("log implies output directory");
            let ck = dir.join("checkpoints").join(format!("epoch_{epoch:03}.sgw"));
            ModelWeights::capture(&model, sidecar(&model_config, state.stage, &rec)).save(&ck)?;
            written.push(ck);
            if opts.keep_checkpoints > 0 && written.len() > opts.keep_checkpoints {
                let old = written.remove(0);
                for p in [crate::network::weights::sidecar_path(&old), old] {
                    fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
                }
            }
        }
        on_epoch(&rec, &model);
        log.push(rec);
    }

    let last = log.last().cloned().unwrap_or(EpochRecord {
        epoch: 0,
        stage: state.stage,
        loss_cls: f64::NAN,
        loss_rec: f64::NAN,
        loss_total: f64::NAN,
        accuracy: 0.0,
    });
    let mut side = sidecar(&model_config, state.stage, &last);
    if log.is_empty() {
        side.loss_cls = None;
        side.loss_rec = None;
    }
    let weights = ModelWeights::capture(&model, side);
    if let Some(dir) = out_dir {
        weights.save(dir.join("weights.sgw"))?;
    }
    Ok(PretrainResult { model, log, weights, joint_start_loss_rec })
}

/// Predicted pseudo labels for untransformed crops.
pub fn classify(model: &mut SemanticGenesisNet<f32>, crops: &[PatternCrop], batch_size: usize) -> Result<Vec<usize>> {
    let shape = model.config.input_shape;
    let c = model.config.num_classes;
    let mut out = Vec::with_capacity(crops.len());
    for chunk in crops.chunks(batch_size.max(1)) {
        let x = stack(&chunk.iter().map(|p| p.data.voxels()).collect::<Vec<_>>(), shape);
        model.check_input(&x)?;
        let (_, bottleneck) = model.encoder.forward(&x, false);
        let logits = model.head.forward(&bottleneck, false);
        out.extend(logits.data.chunks(c).map(argmax));
    }
    Ok(out)
}

/// Fraction of crops whose predicted label equals the pseudo label.
pub fn accuracy(model: &mut SemanticGenesisNet<f32>, crops: &[PatternCrop], batch_size: usize) -> Result<f64> {
    if crops.is_empty() {
        return Err(Error::Invalid("no crops to evaluate".into()));
    }
    let pred = classify(model, crops, batch_size)?;
    Ok(pred.iter().zip(crops).filter(|(p, c)| **p == c.pseudo_label()).count() as f64 / crops.len() as f64)
}

/// Reads a `log.csv` written by [`pretrain`].
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != LOG_HEADER {
        return Err(Error::Invalid(format!("{}: unexpected log header", path.display())));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row[i].parse().map_err(|_| Error::Invalid(format!("{}: bad number {:?}", path.display(), &row[i])))
        };
        let stage = match &row[1] {
            "warmup" => Stage::Warmup,
            "joint" => Stage::Joint,
            s => return Err(Error::Invalid(format!("{}: unknown stage {s:?}", path.display()))),
        };
        out.push(EpochRecord {
            epoch: num(0)? as usize,
            stage,
            loss_cls: num(2)?,
            loss_rec: num(3)?,
            loss_total: num(4)?,
            accuracy: f64::NAN,
        });
    }
    Ok(out)
}
