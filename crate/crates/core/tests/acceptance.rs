//! Acceptance suite. Each test prints one `PASS`/`FAIL` line to stderr
//! (bypassing output capture) and then asserts its criterion.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng as _;
use semgen::config::SemgenConfig;
use semgen::dataio::{generate_phantoms, Split};
use semgen::discovery::{crop_patients, nearest_neighbors};
use semgen::finetune::{compare_inits, Comparison, Init, TaskKind};
use semgen::network::{checksum_with_prefix, DecoderMode, ModelConfig, Parameters, SemanticGenesisNet, Tensor};
use semgen::pipeline;
use semgen::pretrain::losses::{cross_entropy_with_grad, restoration_with_grad};
use semgen::pretrain::{accuracy, loss_cls, loss_rec, loss_total, pretrain, PretrainOptions, PretrainResult, Stage};
use semgen::transforms::{
    compose, inpaint, local_shuffle, nonlinear_intensity, outpaint, TransformConfig, TransformStep,
};
use semgen::{rng, LatentVector, LossWeights, PatternCrop, PretrainConfig, Shape3, Volume};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "acceptance {id} [{status}] {name}: {detail}");
}

fn random_crop(r: &mut rng::Rng, shape: Shape3) -> Volume {
    Volume::new(shape, (0..shape.len()).map(|_| r.random::<f32>()).collect()).unwrap()
}

fn bits(v: &Volume) -> Vec<u32> {
    v.voxels().iter().map(|x| x.to_bits()).collect()
}

// ---------------------------------------------------------------- 1

fn check_transforms(crop: &Volume, cfg: &TransformConfig, seed: u64, failures: &mut Vec<String>) {
    let shape = crop.shape();
    let mut fail = |m: String| failures.push(format!("seed {seed}: {m}"));

    let (out, rec) = inpaint(crop, cfg, seed).unwrap();
    let TransformStep::Inpaint { cuboids, .. } = &rec.steps[0] else { unreachable!() };
    let mut covered = vec![false; shape.len()];
    for c in cuboids {
        c.for_each_index(shape, |i| covered[i] = true);
    }
    if (0..shape.len()).any(|i| !covered[i] && crop.voxels()[i].to_bits() != out.voxels()[i].to_bits()) {
        fail("inpaint changed a voxel outside its cuboids".into());
    }
    if rec.replay(crop).unwrap() != out {
        fail("inpaint replay differs".into());
    }

    let (out, rec) = outpaint(crop, cfg, seed).unwrap();
    let TransformStep::Outpaint { retained, .. } = &rec.steps[0] else { unreachable!() };
    let mut kept = vec![false; shape.len()];
    for c in retained {
        c.for_each_index(shape, |i| kept[i] = true);
    }
    if (0..shape.len()).any(|i| kept[i] && crop.voxels()[i].to_bits() != out.voxels()[i].to_bits()) {
        fail("outpaint changed a retained voxel".into());
    }
    if rec.replay(crop).unwrap() != out {
        fail("outpaint replay differs".into());
    }

    let (out, rec) = local_shuffle(crop, cfg, seed).unwrap();
    let TransformStep::LocalShuffle { blocks, .. } = &rec.steps[0] else { unreachable!() };
    let mut inside = vec![false; shape.len()];
    for b in blocks {
        let mut idx = Vec::new();
        b.for_each_index(shape, |i| idx.push(i));
        let mut a: Vec<u32> = idx.iter().map(|&i| crop.voxels()[i].to_bits()).collect();
        let mut o: Vec<u32> = idx.iter().map(|&i| out.voxels()[i].to_bits()).collect();
        a.sort_unstable();
        o.sort_unstable();
        if a != o {
            fail("local_shuffle changed a block multiset".into());
        }
        idx.iter().for_each(|&i| inside[i] = true);
    }
    if (0..shape.len()).any(|i| !inside[i] && crop.voxels()[i].to_bits() != out.voxels()[i].to_bits()) {
        fail("local_shuffle changed a voxel outside its blocks".into());
    }
    if rec.replay(crop).unwrap() != out {
        fail("local_shuffle replay differs".into());
    }

    let (out, rec) = nonlinear_intensity(crop, cfg, seed).unwrap();
    let TransformStep::Nonlinear { increasing, .. } = rec.steps[0] else { unreachable!() };
    let mut order: Vec<usize> = (0..shape.len()).collect();
    order.sort_by(|&a, &b| crop.voxels()[a].total_cmp(&crop.voxels()[b]));
    let monotone = order.windows(2).all(|w| {
        let (x0, x1) = (crop.voxels()[w[0]], crop.voxels()[w[1]]);
        let (y0, y1) = (out.voxels()[w[0]], out.voxels()[w[1]]);
        if x0 == x1 {
            y0 == y1
        } else if increasing {
            y0 <= y1
        } else {
            y0 >= y1
        }
    });
    if !monotone {
        fail("nonlinear mapping is not pointwise monotone".into());
    }
    // pointwise: permuting the input permutes the output identically
    let perm: Vec<f32> = crop.voxels().iter().rev().copied().collect();
    let out_perm = rec.replay(&Volume::new(shape, perm).unwrap()).unwrap();
    if out_perm.voxels().iter().rev().map(|v| v.to_bits()).collect::<Vec<_>>() != bits(&out) {
        fail("nonlinear mapping depends on voxel position".into());
    }
    if rec.replay(crop).unwrap() != out {
        fail("nonlinear replay differs".into());
    }

    let (out, rec) = compose(crop, cfg, seed).unwrap();
    if bits(&rec.replay(crop).unwrap()) != bits(&out) {
        fail("composed replay differs".into());
    }
}

#[test]
fn transform_invariant_suite() {
    let start = Instant::now();
    let cfg = TransformConfig::default();
    let shape = Shape3::new(32, 32, 16);
    let mut r = rng::rng(2024);
    let mut failures = Vec::new();
    for seed in 0..1000u64 {
        let crop = random_crop(&mut r, shape);
        check_transforms(&crop, &cfg, seed, &mut failures);
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(120);
    report(
        1,
        "transform invariants",
        pass,
        &format!("1000 crops × 5 transforms, {} failures, {:.1} s", failures.len(), elapsed.as_secs_f64()),
    );
    assert!(pass, "{:?}", &failures[..failures.len().min(5)]);
}

// ---------------------------------------------------------------- 2

fn brute_force_neighbors(reference: &str, latents: &[LatentVector], k: usize) -> Vec<(String, f64)> {
    let r = latents.iter().find(|l| l.patient_id == reference).unwrap();
    let mut all: Vec<(String, f64)> = latents
        .iter()
        .filter(|l| l.patient_id != reference)
        .map(|l| {
            let s: f64 = r.values.iter().zip(&l.values).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
            (l.patient_id.clone(), s.sqrt())
        })
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

#[test]
fn discovery_oracle() {
    let mut r = rng::rng(77);
    let mut agree = 0;
    for case in 0..100 {
        let n = r.random_range(2..=200usize);
        let dim = r.random_range(1..=64usize);
        let coarse = case % 2 == 0;
        let latents: Vec<LatentVector> = (0..n)
            .map(|i| LatentVector {
                patient_id: format!("p{:05}", (i * 7919) % 100_003),
                values: (0..dim)
                    .map(|_| if coarse { r.random_range(0..3) as f32 } else { r.random_range(-1.0f32..1.0) })
                    .collect(),
            })
            .collect();
        let k = r.random_range(1..n.max(2)).min(n - 1).max(1);
        let reference = latents[r.random_range(0..n)].patient_id.clone();
        let got: Vec<(String, f64)> = nearest_neighbors(&reference, &latents, k)
            .unwrap()
            .neighbors
            .into_iter()
            .map(|x| (x.patient_id, x.distance))
            .collect();
        agree += (got == brute_force_neighbors(&reference, &latents, k)) as usize;
    }
    let pass = agree == 100;
    report(2, "discovery oracle", pass, &format!("{agree}/100 instances agree with brute-force sort"));
    assert!(pass);
}

// ---------------------------------------------------------------- 3

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

#[test]
fn loss_oracles() {
    let mut r = rng::rng(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(1..=8usize);
        let c = r.random_range(2..=10usize);
        let len = r.random_range(1..=300usize);
        let mut p = Vec::with_capacity(n * c);
        let mut y = vec![0.0; n * c];
        for b in 0..n {
            let raw: Vec<f64> = (0..c).map(|_| r.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            p.extend(raw.iter().map(|v| v / s));
            y[b * c + r.random_range(0..c)] = 1.0;
        }
        let mut cls = 0.0;
        for b in 0..n {
            for k in 0..c {
                if y[b * c + k] == 1.0 {
                    cls += -(p[b * c + k].max(1e-7)).ln();
                }
            }
        }
        cls /= n as f64;
        let x: Vec<f64> = (0..n * len).map(|_| r.random()).collect();
        let xr: Vec<f64> = (0..n * len).map(|_| r.random()).collect();
        let mut recl = 0.0;
        for b in 0..n {
            let mut s = 0.0;
            for i in 0..len {
                let d = x[b * len + i] - xr[b * len + i];
                s += d * d;
            }
            recl += s.sqrt();
        }
        recl /= n as f64;
        let w = LossWeights { lambda_cls: r.random(), lambda_rec: r.random() };
        let lc = loss_cls(&p, &y, n, c).unwrap();
        let lr = loss_rec(&x, &xr, n).unwrap();
        worst = worst.max(rel(lc, cls)).max(rel(lr, recl));
        worst = worst.max(rel(loss_total(lc, lr, w), w.lambda_cls * cls + w.lambda_rec * recl));
    }
    let h1 = (loss_cls(&[0.75, 0.25], &[1.0, 0.0], 1, 2).unwrap() - (-(0.75f64).ln())).abs();
    let h2 = (0..3)
        .map(|i| {
            let c = [2usize, 6, 44][i];
            (loss_cls(&vec![1.0 / c as f64; c], &(0..c).map(|k| (k == 0) as u8 as f64).collect::<Vec<_>>(), 1, c)
                .unwrap()
                - (c as f64).ln())
            .abs()
        })
        .fold(0.0, f64::max);
    let h3 = (loss_total(2.0, 0.5, LossWeights { lambda_cls: 0.01, lambda_rec: 1.0 }) - 0.52).abs();
    let pass = worst <= 1e-6 && h1 <= 1e-9 && h2 <= 1e-9 && h3 <= 1e-9;
    report(
        3,
        "loss oracles",
        pass,
        &format!("max relative error {worst:.2e} over 100 batches; hand examples off by {h1:.1e}, {h2:.1e}, {h3:.1e}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4

#[test]
fn gradient_check() {
    let cfg = ModelConfig {
        depth: 2,
        base_width: 2,
        fc_widths: vec![16, 3],
        seed: 9,
        ..ModelConfig::new(Shape3::new(8, 8, 4), 3)
    };
    let mut m = SemanticGenesisNet::<f64>::build(&cfg).unwrap();
    let mut r = rng::rng(31);
    let n = 2;
    let x = Tensor::from_vec(&[n, 1, 8, 8, 4], (0..n * 256).map(|_| r.random::<f64>()).collect());
    let target = Tensor::from_vec(&[n, 1, 8, 8, 4], (0..n * 256).map(|_| r.random::<f64>()).collect());
    let labels = [1usize, 2];
    let w = LossWeights { lambda_cls: 0.01, lambda_rec: 1.0 };
    let loss = |m: &mut SemanticGenesisNet<f64>| {
        let out = m.forward(&x).unwrap();
        let (lc, _) = cross_entropy_with_grad(&out.logits, &labels).unwrap();
        let (lr, _) = restoration_with_grad(&target, out.reconstruction.as_ref().unwrap()).unwrap();
        loss_total(lc, lr, w)
    };

    m.zero_grads();
    let out = m.forward_train(&x, DecoderMode::Train).unwrap();
    let (_, mut gl) = cross_entropy_with_grad(&out.logits, &labels).unwrap();
    let (_, mut gr) = restoration_with_grad(&target, out.reconstruction.as_ref().unwrap()).unwrap();
    gl.data.iter_mut().for_each(|v| *v *= w.lambda_cls);
    gr.data.iter_mut().for_each(|v| *v *= w.lambda_rec);
    m.backward(Some(&gr), &gl);
    let grads: Vec<Vec<f64>> = m.named_params().into_iter().map(|(_, p)| p.grad.clone()).collect();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let pi = r.random_range(0..grads.len());
        let i = r.random_range(0..grads[pi].len());
        let orig = m.named_params()[pi].1.value[i];
        m.named_params_mut()[pi].1.value[i] = orig + h;
        let lp = loss(&mut m);
        m.named_params_mut()[pi].1.value[i] = orig - h;
        let lm = loss(&mut m);
        m.named_params_mut()[pi].1.value[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        let a = grads[pi][i];
        let e = if (a - fd).abs() < 1e-9 { 0.0 } else { (a - fd).abs() / a.abs().max(fd.abs()) };
        worst = worst.max(e);
    }
    let pass = worst < 1e-4;
    report(4, "gradient check", pass, &format!("max relative error {worst:.2e} over 20 probes"));
    assert!(pass);
}

// ---------------------------------------------------------------- 5

#[test]
fn warmup_semantics() {
    let default_warmup = PretrainConfig::default().warmup_epochs;
    let shape = Shape3::new(8, 8, 4);
    let mut r = rng::rng(3);
    let crops: Vec<PatternCrop> =
        (0..9).map(|i| PatternCrop::new(random_crop(&mut r, shape), format!("p{i}"), i % 3, 1.0)).collect();
    let model = ModelConfig { depth: 2, base_width: 2, fc_widths: vec![8, 3], ..ModelConfig::new(shape, 3) };
    let cfg = PretrainConfig {
        k: 1,
        c: 3,
        canonical_crop_shape: shape,
        scale_factors: vec![1.0],
        joint_epochs: 3,
        batch_size: 4,
        ..PretrainConfig::default()
    };
    let initial =
        SemanticGenesisNet::<f32>::build(&ModelConfig { seed: rng::substream(cfg.seed, rng::INIT), ..model.clone() })
            .unwrap();
    let dec0 = checksum_with_prefix(&initial, "decoder");
    let mut seen = Vec::new();
    pretrain(&crops, &model, &cfg, &PretrainOptions::default(), None, |rec, m| {
        seen.push((rec.epoch, rec.stage, checksum_with_prefix(m, "decoder")))
    })
    .unwrap();
    let frozen = seen.iter().filter(|s| s.1 == Stage::Warmup).all(|s| s.2 == dec0);
    let first_joint = seen.iter().find(|s| s.1 == Stage::Joint).map(|s| s.0);
    let moved = seen.iter().filter(|s| s.1 == Stage::Joint).all(|s| s.2 != dec0);
    let pass = default_warmup == 20 && frozen && first_joint == Some(cfg.warmup_epochs) && moved;
    report(
        5,
        "warmup semantics",
        pass,
        &format!(
            "default warmup {default_warmup}; decoder checksum constant over warmup: {frozen}; first joint epoch {first_joint:?}"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6, 7, 8

struct DeskRun {
    _dir: tempfile::TempDir,
    corpus: PathBuf,
    discovery: PathBuf,
    pretrain_a: PathBuf,
    pretrain_b: PathBuf,
    result: PretrainResult,
    heldout_accuracy: f64,
    elapsed: Duration,
}

fn desk_config() -> SemgenConfig {
    SemgenConfig::desk()
}

fn run_pipeline(cfg: &SemgenConfig, corpus: &Path, discovery: &Path, out: &Path) -> PretrainResult {
    pipeline::discover(cfg, corpus, discovery).unwrap();
    pipeline::pretrain_stage(cfg, discovery, out).unwrap()
}

fn desk_run() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = desk_config();
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        let start = Instant::now();
        pipeline::gen_synthetic(&cfg.phantom, &corpus).unwrap();
        let discovery = dir.path().join("discovery");
        let pretrain_a = dir.path().join("pretrain_a");
        let mut result = run_pipeline(&cfg, &corpus, &discovery, &pretrain_a);
        let elapsed = start.elapsed();

        let report: semgen::discovery::DiscoveryReport =
            serde_json::from_slice(&std::fs::read(discovery.join(pipeline::DISCOVERY_REPORT)).unwrap()).unwrap();
        let held: Vec<(String, Volume)> = generate_phantoms(&cfg.phantom)
            .unwrap()
            .into_iter()
            .filter(|p| p.split == Split::Heldout)
            .map(|p| (p.patient_id, p.volume))
            .collect();
        let held_crops =
            crop_patients(&held, &report.coordinates, cfg.pretrain.canonical_crop_shape, &cfg.pretrain.scale_factors)
                .unwrap();
        let heldout_accuracy = accuracy(&mut result.model, &held_crops, 8).unwrap();

        let pretrain_b = dir.path().join("pretrain_b");
        run_pipeline(&cfg, &corpus, &dir.path().join("discovery_b"), &pretrain_b);
        DeskRun { corpus, discovery, pretrain_a, pretrain_b, result, heldout_accuracy, elapsed, _dir: dir }
    })
}

#[test]
fn desk_pretraining_sanity() {
    let run = desk_run();
    let last = run.result.log.last().unwrap();
    let start = run.result.joint_start_loss_rec.unwrap();
    let ratio = last.loss_rec / start;
    let pass = run.heldout_accuracy >= 0.90 && ratio <= 0.5 && last.stage == Stage::Joint;
    report(
        6,
        "desk pretraining sanity",
        pass,
        &format!(
            "held-out accuracy {:.3}; l_rec {:.2} -> {:.2} (ratio {:.3}); {} epochs in {:.0} s",
            run.heldout_accuracy,
            start,
            last.loss_rec,
            ratio,
            run.result.log.len(),
            run.elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

fn transfer_comparison(run: &DeskRun) -> Comparison {
    let cfg = desk_config();
    let seg = pipeline::select_task(
        pipeline::load_targets(&cfg, &run.corpus, &run.discovery).unwrap(),
        TaskKind::Segmentation,
    );
    let crops = semgen::dataio::load_crop_dataset(&run.discovery).unwrap();
    let rest_cfg = PretrainConfig {
        warmup_epochs: 0,
        joint_epochs: cfg.pretrain.warmup_epochs + cfg.pretrain.joint_epochs,
        loss_weights: LossWeights { lambda_cls: 0.0, lambda_rec: cfg.pretrain.loss_weights.lambda_rec },
        ..cfg.pretrain.clone()
    };
    let restoration = pretrain(&crops, &cfg.model_config(), &rest_cfg, &cfg.options, None, |_, _| {}).unwrap();
    let inits = [
        ("scratch", Init::Scratch),
        ("combined", Init::Pretrained(&run.result.weights)),
        ("restoration", Init::Pretrained(&restoration.weights)),
    ];
    compare_inits(&seg, &inits, &cfg.model_config(), &cfg.finetune, 5).unwrap()
}

#[test]
fn transfer_direction() {
    let cmp = transfer_comparison(desk_run());
    let mean = |n| cmp.mean(n).unwrap();
    let t = |a, b| cmp.test(a, b).and_then(|t| t.t).map_or("undefined".to_string(), |t| format!("{t:.3}"));
    let pass = mean("combined") >= mean("scratch") && mean("combined") >= mean("restoration");
    let sd = |n: &str| cmp.inits.iter().find(|s| s.init == n).unwrap().summary.sd;
    report(
        7,
        "transfer direction",
        pass,
        &format!(
            "IoU scratch {:.4}±{:.4}, combined {:.4}±{:.4}, restoration-only {:.4}±{:.4}; t(scratch, combined) {}, t(combined, restoration) {}",
            mean("scratch"),
            sd("scratch"),
            mean("combined"),
            sd("combined"),
            mean("restoration"),
            sd("restoration"),
            t("scratch", "combined"),
            t("combined", "restoration"),
        ),
    );
    assert!(pass);
}

#[test]
fn pipeline_determinism() {
    let run = desk_run();
    let a = std::fs::read(run.pretrain_a.join(pipeline::LOG)).unwrap();
    let b = std::fs::read(run.pretrain_b.join(pipeline::LOG)).unwrap();
    let pass = a == b && !a.is_empty();
    report(8, "determinism", pass, &format!("log.csv {} bytes, identical: {}", a.len(), a == b));
    assert!(pass);
}
