mod preview;
mod record;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use semgen::config::SemgenConfig;
use semgen::finetune::TaskKind;
use semgen::pipeline;
use semgen::{Error, Result};

use record::RunRecord;

/// Self-supervised pretraining for 3D volumes: discovery, classification and
/// restoration of anatomical patterns, plus fine-tuning on target tasks.
#[derive(Debug, Parser)]
#[command(name = "semgen", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Root seed for every stage; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config; defaults to the built-in desk recipe.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "semgen-out")]
    out: PathBuf,
    /// Worker threads for data-parallel steps (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic phantom corpus.
    GenSynthetic,
    /// Discover recurring patterns and write the pseudo-labelled crop dataset.
    Discover {
        /// Corpus directory; defaults to a cached corpus under $SEMGEN_CACHE.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Pretrain with self-classification and self-restoration.
    Pretrain {
        /// Crop dataset written by `discover`.
        #[arg(long)]
        crops: PathBuf,
    },
    /// Fine-tune one initialization on a target task.
    Finetune {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Output directory of `discover` (for the coordinates).
        #[arg(long)]
        discovery: PathBuf,
        /// classification | segmentation
        #[arg(long, value_parser = parse_task)]
        task: TaskKind,
        /// Pretrained weights (file or `pretrain` output directory); scratch if absent.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Compare initializations over several seeds.
    Evaluate {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        discovery: PathBuf,
        #[arg(long, value_parser = parse_task)]
        task: TaskKind,
        /// `NAME` for scratch or `NAME=WEIGHTS`; repeatable.
        #[arg(long = "init", value_name = "NAME[=WEIGHTS]", required = true)]
        inits: Vec<String>,
        #[arg(long, default_value_t = 5)]
        n_seeds: usize,
    },
    /// Render each transformation applied to a few crops.
    TransformPreview {
        #[arg(long)]
        crops: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
    /// Render loss curves and metric tables from run directories.
    Report {
        /// Directories holding `log.csv` or `comparison.csv`; repeatable.
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenSynthetic => "gen-synthetic",
            Command::Discover { .. } => "discover",
            Command::Pretrain { .. } => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::Evaluate { .. } => "evaluate",
            Command::TransformPreview { .. } => "transform-preview",
            Command::Report { .. } => "report",
        }
    }
}

fn parse_task(s: &str) -> std::result::Result<TaskKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(common: &Common) -> Result<SemgenConfig> {
    let cfg = match &common.config {
        Some(p) => SemgenConfig::load(p)?,
        None => SemgenConfig::desk(),
    };
    let cfg = match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_corpus(cfg: &SemgenConfig, corpus: &Option<PathBuf>) -> Result<PathBuf> {
    if let Some(c) = corpus {
        return Ok(c.clone());
    }
    match std::env::var_os("SEMGEN_CACHE") {
        Some(cache) => pipeline::cached_corpus(&cfg.phantom, Path::new(&cache)),
        None => Err(Error::Invalid("no corpus: pass --corpus or set SEMGEN_CACHE".into())),
    }
}

fn parse_init(s: &str) -> (String, Option<PathBuf>) {
    match s.split_once('=') {
        Some((name, path)) => (name.to_string(), Some(PathBuf::from(path))),
        None => (s.to_string(), None),
    }
}

fn run(cli: &Cli, rec: &mut RunRecord) -> Result<()> {
    let out = &cli.common.out;
    if let Some(n) = cli.common.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Invalid(format!("--workers: {e}")))?;
    }
    let cfg = load_config(&cli.common)?;
    rec.config_hash = Some(cfg.hash());
    rec.seed = Some(cfg.pretrain.seed);
    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    let artifacts = match &cli.command {
        Command::GenSynthetic => pipeline::gen_synthetic(&cfg.phantom, out)?,
        Command::Discover { corpus } => {
            let corpus = resolve_corpus(&cfg, corpus)?;
            let found = pipeline::discover(&cfg, &corpus, out)?;
            eprintln!("discovered {} crops in {} classes", found.crops.len(), cfg.pretrain.c);
            vec![out.join("crops.csv"), out.join("crops"), out.join(pipeline::DISCOVERY_REPORT)]
        }
        Command::Pretrain { crops } => {
            let res = pipeline::pretrain_stage(&cfg, crops, out)?;
            if let Some(last) = res.log.last() {
                eprintln!("epoch {} loss_cls {:.4} loss_rec {:.3}", last.epoch, last.loss_cls, last.loss_rec);
            }
            vec![
                out.join(pipeline::LOG),
                out.join("checkpoints"),
                out.join(pipeline::WEIGHTS),
                out.join("pretrain.json"),
            ]
        }
        Command::Finetune { corpus, discovery, task, weights } => {
            let corpus = resolve_corpus(&cfg, corpus)?;
            let task = pipeline::select_task(pipeline::load_targets(&cfg, &corpus, discovery)?, *task);
            let r = pipeline::finetune_stage(&cfg, &task, weights.as_deref(), out)?;
            for (name, v) in r.metrics() {
                eprintln!("{name} {v:.4}");
            }
            vec![out.join("metrics.csv"), out.join("metrics.json")]
        }
        Command::Evaluate { corpus, discovery, task, inits, n_seeds } => {
            let corpus = resolve_corpus(&cfg, corpus)?;
            let task = pipeline::select_task(pipeline::load_targets(&cfg, &corpus, discovery)?, *task);
            let inits: Vec<_> = inits.iter().map(|s| parse_init(s)).collect();
            let cmp = pipeline::evaluate_stage(&cfg, &task, &inits, *n_seeds, out)?;
            for s in &cmp.inits {
                eprintln!("{} {} {:.4} ± {:.4}", s.init, cmp.metric, s.summary.mean, s.summary.sd);
            }
            for t in &cmp.tests {
                eprintln!("{} vs {}: t = {:?}", t.a, t.b, t.test.t);
            }
            vec![out.join("comparison.csv"), out.join("summary.json")]
        }
        Command::TransformPreview { crops, count } => preview::write_preview(&cfg, crops, *count, out)?,
        Command::Report { runs } => report::write_report(runs, out)?,
    };
    rec.artifacts = artifacts;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let mut rec = RunRecord::start(cli.command.name());
    let result = run(&cli, &mut rec);
    if cli.common.out.is_dir() {
        if let Err(e) = rec.finish(&cli.common.out, result.as_ref().err()) {
            eprintln!("error: {e}");
        }
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
