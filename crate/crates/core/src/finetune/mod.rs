//! Fine-tuning on target tasks: the encoder alone for classification, the
//! encoder and decoder for segmentation.

pub mod metrics;
pub mod stats;
pub mod targets;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use metrics::{auc_binary, auc_macro_ovr, dice, iou};
pub use stats::{summarize, t_test, Summary, TTest};
pub use targets::{label_budget, make_toy_targets, Target, TargetSample, TargetTask, TaskKind, ToyTargetConfig};

use crate::error::{Error, Result};
use crate::network::{
    split_for_target, ClassifierNet, ModelConfig, ModelWeights, Parameters, SegmenterNet, SemanticGenesisNet,
    TargetKind, TargetModel, Tensor,
};
use crate::pretrain::losses::{cross_entropy_with_grad, softmax};
use crate::pretrain::stack;
use crate::rng;

/// Smoothing term of the soft Dice loss.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Hidden widths of the fresh classification head; the class count is appended.
    pub head_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig { epochs: 40, learning_rate: 1e-3, batch_size: 2, head_hidden: vec![64], seed: 0 }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("finetune.epochs", "must be ≥ 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("finetune.learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("finetune.batch_size", "must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init<'a> {
    Scratch,
    Pretrained(&'a ModelWeights),
}

impl Init<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Init::Scratch => "scratch",
            Init::Pretrained(_) => "pretrained",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub kind: TaskKind,
    pub init: String,
    pub seed: u64,
    pub labeled_ids: Vec<String>,
    pub epoch_losses: Vec<f64>,
    pub auc: Option<f64>,
    pub accuracy: Option<f64>,
    pub iou: Option<f64>,
    pub dice: Option<f64>,
}

impl FinetuneReport {
    /// AUC for classification, IoU for segmentation.
    pub fn primary_metric(&self) -> f64 {
        match self.kind {
            TaskKind::Classification => self.auc.unwrap_or(f64::NAN),
            TaskKind::Segmentation => self.iou.unwrap_or(f64::NAN),
        }
    }

    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        [("auc", self.auc), ("accuracy", self.accuracy), ("iou", self.iou), ("dice", self.dice)]
            .into_iter()
            .filter_map(|(n, v)| v.map(|v| (n, v)))
            .collect()
    }
}

/// Mean soft Dice loss `1 − (2Σpg + s)/(Σp + Σg + s)` over the batch, with its
/// gradient with respect to the probabilities.
pub fn dice_loss_with_grad(probs: &Tensor<f32>, masks: &[&[bool]]) -> (f64, Tensor<f32>) {
    let n = probs.batch();
    let mut grad = Tensor::zeros(&probs.shape);
    let mut total = 0.0;
    for (b, mask) in masks.iter().enumerate().take(n) {
        let p = probs.sample(b);
        let (mut inter, mut sum) = (0.0, 0.0);
        for (&pv, &g) in p.iter().zip(mask.iter()) {
            let g = g as u8 as f64;
            inter += pv as f64 * g;
            sum += pv as f64 + g;
        }
        let num = 2.0 * inter + DICE_SMOOTH;
        let den = sum + DICE_SMOOTH;
        total += 1.0 - num / den;
        for (gv, &m) in grad.sample_mut(b).iter_mut().zip(mask.iter()) {
            let g = m as u8 as f64;
            *gv = (-(2.0 * g * den - num) / (den * den) / n as f64) as f32;
        }
    }
    (total / n as f64, grad)
}

fn build_target(
    task: &TargetTask,
    init: Init,
    model_config: &ModelConfig,
    cfg: &FinetuneConfig,
) -> Result<TargetModel<f32>> {
    if model_config.input_shape != task.input_shape {
        return Err(Error::ShapeMismatch(format!(
            "model input {:?} differs from task input {:?}",
            model_config.input_shape.0, task.input_shape.0
        )));
    }
    let mc = ModelConfig { seed: rng::substream(cfg.seed, rng::INIT), ..model_config.clone() };
    let mut net = SemanticGenesisNet::<f32>::build(&mc)?;
    if let Init::Pretrained(w) = init {
        w.check_hash(&mc.config_hash())?;
        w.restore_into(&mut net, &["encoder", "decoder"])?;
    }
    let kind = match task.kind {
        TaskKind::Classification => {
            let mut widths = cfg.head_hidden.clone();
            widths.push(task.num_classes);
            TargetKind::Classification { head_widths: widths }
        }
        TaskKind::Segmentation => TargetKind::Segmentation,
    };
    split_for_target(net, kind, rng::substream(cfg.seed, "target_head"))
}

/// Indices of the training samples that receive labels for `seed`.
pub fn labeled_indices(task: &TargetTask, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..task.train.len()).collect();
    idx.shuffle(&mut rng::rng(rng::derive(rng::substream(seed, rng::TARGETS), &[2])));
    idx.truncate(task.label_budget);
    idx.sort_unstable();
    idx
}

fn volumes<'a>(samples: &[&'a TargetSample]) -> Vec<&'a [f32]> {
    samples.iter().map(|s| s.volume.voxels()).collect()
}

fn train_step(model: &mut TargetModel<f32>, batch: &[&TargetSample], shape: crate::types::Shape3) -> Result<f64> {
    let x = stack(&volumes(batch), shape);
    let loss = match model {
        TargetModel::Classifier(net) => {
            net.zero_grads();
            let logits = net.forward(&x, true);
            let labels: Vec<usize> = batch.iter().map(|s| s.label().unwrap()).collect();
            let (loss, d) = cross_entropy_with_grad(&logits, &labels)?;
            net.backward(&d);
            loss
        }
        TargetModel::Segmenter(net) => {
            net.zero_grads();
            let probs = net.forward(&x, true);
            let masks: Vec<&[bool]> = batch.iter().map(|s| s.mask().unwrap()).collect();
            let (loss, d) = dice_loss_with_grad(&probs, &masks);
            net.backward(&d);
            loss
        }
    };
    Ok(loss)
}

fn evaluate_classifier(net: &mut ClassifierNet<f32>, task: &TargetTask, batch: usize) -> (Option<f64>, f64) {
    let c = task.num_classes;
    let mut probs = Vec::with_capacity(task.test.len() * c);
    for chunk in task.test.chunks(batch) {
        let refs: Vec<&TargetSample> = chunk.iter().collect();
        probs.extend(softmax(&net.forward(&stack(&volumes(&refs), task.input_shape), false)));
    }
    let labels: Vec<usize> = task.test.iter().map(|s| s.label().unwrap()).collect();
    let correct = probs
        .chunks(c)
        .zip(&labels)
        .filter(|(row, &l)| (0..c).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))) == Some(l))
        .count();
    (auc_macro_ovr(&probs, &labels, c), correct as f64 / labels.len() as f64)
}

/// Binary masks predicted by thresholding the probabilities at 0.5.
pub fn predict_masks(net: &mut SegmenterNet<f32>, samples: &[TargetSample], batch: usize) -> Vec<Vec<bool>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch) {
        let refs: Vec<&TargetSample> = chunk.iter().collect();
        let probs = net.forward(&stack(&volumes(&refs), net.input_shape), false);
        for b in 0..chunk.len() {
            out.push(probs.sample(b).iter().map(|&p| p >= 0.5).collect());
        }
    }
    out
}

/// Fine-tunes a fresh or pretrained model on the task's labeled budget and
/// evaluates it on the task's test set.
pub fn finetune(
    task: &TargetTask,
    init: Init,
    model_config: &ModelConfig,
    cfg: &FinetuneConfig,
) -> Result<FinetuneReport> {
    cfg.validate()?;
    task.validate()?;
    let mut model = build_target(task, init, model_config, cfg)?;
    let labeled = labeled_indices(task, cfg.seed);
    let mut adam = crate::network::Adam::<f32>::new(cfg.learning_rate);
    let shuffle_root = rng::substream(cfg.seed, rng::SHUFFLING);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order = labeled.clone();
        order.shuffle(&mut rng::rng(rng::derive(shuffle_root, &[epoch as u64])));
        let (mut sum, mut count) = (0.0, 0usize);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TargetSample> = chunk.iter().map(|&i| &task.train[i]).collect();
            let loss = train_step(&mut model, &batch, task.input_shape)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            match &mut model {
                TargetModel::Classifier(net) => adam.step(net.named_params_mut()),
                TargetModel::Segmenter(net) => adam.step(net.named_params_mut()),
            }
            sum += loss * batch.len() as f64;
            count += batch.len();
        }
        epoch_losses.push(sum / count as f64);
    }
    let mut report = FinetuneReport {
        kind: task.kind,
        init: init.name().to_string(),
        seed: cfg.seed,
        labeled_ids: labeled.iter().map(|&i| task.train[i].id.clone()).collect(),
        epoch_losses,
        auc: None,
        accuracy: None,
        iou: None,
        dice: None,
    };
    match &mut model {
        TargetModel::Classifier(net) => {
            let (auc, acc) = evaluate_classifier(net, task, cfg.batch_size);
            report.auc = auc;
            report.accuracy = Some(acc);
        }
        TargetModel::Segmenter(net) => {
            let preds = predict_masks(net, &task.test, cfg.batch_size);
            let n = preds.len() as f64;
            let truth = task.test.iter().map(|s| s.mask().unwrap());
            let (i, d) = preds.iter().zip(truth).fold((0.0, 0.0), |(i, d), (p, t)| (i + iou(p, t), d + dice(p, t)));
            report.iou = Some(i / n);
            report.dice = Some(d / n);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitSummary {
    pub init: String,
    pub values: Vec<f64>,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub test: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub kind: TaskKind,
    pub metric: String,
    pub seeds: Vec<u64>,
    pub inits: Vec<InitSummary>,
    pub tests: Vec<PairwiseTest>,
    pub reports: Vec<FinetuneReport>,
}

impl Comparison {
    /// CSV rows `seed,init,metric,value`.
    pub fn csv(&self) -> String {
        let mut out = String::from("seed,init,metric,value\n");
        for r in &self.reports {
            for (name, v) in r.metrics() {
                out.push_str(&format!("{},{},{},{}\n", r.seed, r.init, name, v));
            }
        }
        out
    }

    pub fn mean(&self, init: &str) -> Option<f64> {
        self.inits.iter().find(|s| s.init == init).map(|s| s.summary.mean)
    }

    pub fn test(&self, a: &str, b: &str) -> Option<&TTest> {
        self.tests.iter().find(|t| t.a == a && t.b == b).map(|t| &t.test)
    }
}

/// Fine-tunes every named initialization for seeds `base.seed .. base.seed + n_seeds`
/// and compares their primary metrics pairwise.
pub fn compare_inits(
    task: &TargetTask,
    inits: &[(&str, Init)],
    model_config: &ModelConfig,
    base: &FinetuneConfig,
    n_seeds: usize,
) -> Result<Comparison> {
    if n_seeds == 0 || inits.is_empty() {
        return Err(Error::Invalid("compare_inits needs at least one seed and one initialization".into()));
    }
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|s| base.seed + s).collect();
    let mut reports = Vec::new();
    let mut summaries = Vec::new();
    for (name, init) in inits {
        let mut values = Vec::with_capacity(n_seeds);
        for &seed in &seeds {
            let mut r = finetune(task, *init, model_config, &FinetuneConfig { seed, ..base.clone() })?;
            r.init = name.to_string();
            values.push(r.primary_metric());
            reports.push(r);
        }
        summaries.push(InitSummary { init: name.to_string(), summary: summarize(&values), values });
    }
    let mut tests = Vec::new();
    for i in 0..summaries.len() {
        for j in i + 1..summaries.len() {
            tests.push(PairwiseTest {
                a: summaries[i].init.clone(),
                b: summaries[j].init.clone(),
                test: t_test(&summaries[i].values, &summaries[j].values),
            });
        }
    }
    let metric = match task.kind {
        TaskKind::Classification => "auc",
        TaskKind::Segmentation => "iou",
    };
    Ok(Comparison { kind: task.kind, metric: metric.into(), seeds, inits: summaries, tests, reports })
}
