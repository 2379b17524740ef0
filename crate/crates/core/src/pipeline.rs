//! Directory-level pipeline stages. Each stage reads the previous stage's
//! output directory and writes its own artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SemgenConfig;
use crate::dataio::{
    generate_phantom_corpus, generate_phantoms, load_crop_dataset, save_crop_dataset, CorpusManifest, PhantomSpec,
    Split,
};
use crate::discovery::{load_split, run_discovery, DiscoveryOutput, DiscoveryReport};
use crate::error::{Error, Result};
use crate::finetune::{
    compare_inits, finetune, make_toy_targets, Comparison, FinetuneReport, Init, TargetTask, TaskKind,
};
use crate::network::ModelWeights;
use crate::pretrain::{pretrain, PretrainResult};

pub const MANIFEST: &str = "manifest.csv";
pub const PHANTOM_SPEC: &str = "phantom.json";
pub const DISCOVERY_REPORT: &str = "discovery.json";
pub const WEIGHTS: &str = "weights.sgw";
pub const LOG: &str = "log.csv";

fn write_json(path: &Path, value: &impl Serialize) -> Result<PathBuf> {
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the phantom corpus described by `spec` to `out`.
pub fn gen_synthetic(spec: &PhantomSpec, out: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    generate_phantom_corpus(spec, out)?;
    Ok(vec![out.join(MANIFEST), out.join(PHANTOM_SPEC), out.join("volumes")])
}

/// Corpus directory for `spec` under `cache`, generated on first use.
pub fn cached_corpus(spec: &PhantomSpec, cache: &Path) -> Result<PathBuf> {
    let key = crate::network::model::hex(&Sha256::digest(serde_json::to_vec(spec)?.as_slice()));
    let dir = cache.join(format!("phantom-{}", &key[..16]));
    if !dir.join(MANIFEST).is_file() {
        gen_synthetic(spec, &dir)?;
    }
    Ok(dir)
}

/// Discovery over the training split of the corpus in `corpus`. Writes the
/// crop dataset and `discovery.json` to `out`.
pub fn discover(cfg: &SemgenConfig, corpus: &Path, out: &Path) -> Result<DiscoveryOutput> {
    let manifest = CorpusManifest::load(corpus.join(MANIFEST))?;
    let train = load_split(&manifest, Split::Train)?;
    let found = run_discovery(&train, &cfg.pretrain, &cfg.discovery, cfg.pretrain.seed)?;
    create_dir(out)?;
    save_crop_dataset(&found.crops, out)?;
    write_json(&out.join(DISCOVERY_REPORT), &found.report)?;
    Ok(found)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub epochs: usize,
    pub joint_start_loss_rec: Option<f64>,
    pub final_loss_cls: Option<f64>,
    pub final_loss_rec: Option<f64>,
    pub config_hash: String,
}

/// Pretrains on the crop dataset in `crops`; writes `log.csv`, per-epoch
/// checkpoints, `weights.sgw` and `pretrain.json` to `out`.
pub fn pretrain_stage(cfg: &SemgenConfig, crops: &Path, out: &Path) -> Result<PretrainResult> {
    let dataset = load_crop_dataset(crops)?;
    create_dir(out)?;
    let result = pretrain(&dataset, &cfg.model_config(), &cfg.pretrain, &cfg.options, Some(out), |_, _| {})?;
    let last = result.log.last();
    let summary = PretrainSummary {
        epochs: result.log.len(),
        joint_start_loss_rec: result.joint_start_loss_rec,
        final_loss_cls: last.map(|r| r.loss_cls),
        final_loss_rec: last.map(|r| r.loss_rec),
        config_hash: cfg.model_config().config_hash(),
    };
    write_json(&out.join("pretrain.json"), &summary)?;
    Ok(result)
}

/// Rebuilds the toy target tasks from a corpus directory (its phantom spec)
/// and a discovery directory (its coordinates).
pub fn load_targets(cfg: &SemgenConfig, corpus: &Path, discovery: &Path) -> Result<(TargetTask, TargetTask)> {
    let spec: PhantomSpec = read_json(&corpus.join(PHANTOM_SPEC))?;
    let report: DiscoveryReport = read_json(&discovery.join(DISCOVERY_REPORT))?;
    let patients = generate_phantoms(&spec)?;
    make_toy_targets(&patients, &report.coordinates, cfg.pretrain.canonical_crop_shape, &cfg.targets, cfg.finetune.seed)
}

pub fn select_task(tasks: (TargetTask, TargetTask), kind: TaskKind) -> TargetTask {
    match kind {
        TaskKind::Classification => tasks.0,
        TaskKind::Segmentation => tasks.1,
    }
}

/// Loads weights from a file or from a pretraining output directory.
pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    if path.is_dir() {
        ModelWeights::load(path.join(WEIGHTS))
    } else {
        ModelWeights::load(path)
    }
}

/// One fine-tuning run; writes `metrics.csv` (seed,init,metric,value) and
/// `metrics.json` to `out`.
pub fn finetune_stage(
    cfg: &SemgenConfig,
    task: &TargetTask,
    weights: Option<&Path>,
    out: &Path,
) -> Result<FinetuneReport> {
    let loaded = weights.map(load_weights).transpose()?;
    let init = loaded.as_ref().map_or(Init::Scratch, Init::Pretrained);
    let report = finetune(task, init, &cfg.model_config(), &cfg.finetune)?;
    create_dir(out)?;
    let mut csv = String::from("seed,init,metric,value\n");
    for (name, v) in report.metrics() {
        csv.push_str(&format!("{},{},{},{}\n", report.seed, report.init, name, v));
    }
    let p = out.join("metrics.csv");
    fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
    write_json(&out.join("metrics.json"), &report)?;
    Ok(report)
}

/// Compares named initializations (`None` = scratch) over `n_seeds` seeds;
/// writes `comparison.csv` and `summary.json` to `out`.
pub fn evaluate_stage(
    cfg: &SemgenConfig,
    task: &TargetTask,
    inits: &[(String, Option<PathBuf>)],
    n_seeds: usize,
    out: &Path,
) -> Result<Comparison> {
    let loaded: Vec<(String, Option<ModelWeights>)> = inits
        .iter()
        .map(|(n, p)| Ok((n.clone(), p.as_deref().map(load_weights).transpose()?)))
        .collect::<Result<_>>()?;
    let refs: Vec<(&str, Init)> =
        loaded.iter().map(|(n, w)| (n.as_str(), w.as_ref().map_or(Init::Scratch, Init::Pretrained))).collect();
    let cmp = compare_inits(task, &refs, &cfg.model_config(), &cfg.finetune, n_seeds)?;
    create_dir(out)?;
    let p = out.join("comparison.csv");
    fs::write(&p, cmp.csv()).map_err(|e| Error::io(&p, e))?;
    write_json(&out.join("summary.json"), &cmp)?;
    Ok(cmp)
}
