use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semgen::dataio::{generate_phantoms, PhantomSpec, Split};
use semgen::discovery::sample_coordinates;
use semgen::finetune::{
    auc_binary, compare_inits, dice, finetune, iou, labeled_indices, make_toy_targets, t_test, FinetuneConfig, Init,
    Target, TargetSample, TargetTask, TaskKind, ToyTargetConfig,
};
use semgen::network::{
    checksum_with_prefix, split_for_target, ModelConfig, ModelWeights, SemanticGenesisNet, TargetKind, TargetModel,
    WeightSidecar,
};
use semgen::{Error, Shape3, Volume};

const SHAPE: Shape3 = Shape3([8, 8, 4]);

fn tiny_model() -> ModelConfig {
    ModelConfig { depth: 2, base_width: 2, fc_widths: vec![8, 3], ..ModelConfig::new(SHAPE, 3) }
}

fn tiny_seg_task(budget: usize) -> TargetTask {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let mut make = |i: usize| {
        let mask: Vec<bool> = (0..SHAPE.len()).map(|_| r.random::<f32>() < 0.3).collect();
        let v: Vec<f32> = mask.iter().map(|&m| if m { 0.8 } else { 0.2 } + r.random::<f32>() * 0.1).collect();
        TargetSample {
            id: format!("s{i}"),
            patient_id: format!("p{i}"),
            volume: Volume::new(SHAPE, v).unwrap(),
            target: Target::Mask(mask),
        }
    };
    let train = (0..6).map(&mut make).collect();
    let test = (6..9).map(&mut make).collect();
    TargetTask { kind: TaskKind::Segmentation, num_classes: 1, input_shape: SHAPE, train, test, label_budget: budget }
}

fn weights_of(net: &SemanticGenesisNet<f32>) -> ModelWeights {
    let side = WeightSidecar {
        config_hash: net.config.config_hash(),
        stage: "joint".into(),
        epoch: 0,
        loss_cls: None,
        loss_rec: None,
    };
    ModelWeights::capture(net, side)
}

fn iou_oracle(p: &[bool], t: &[bool]) -> f64 {
    let mut inter = 0.0;
    let mut union = 0.0;
    for i in 0..p.len() {
        if p[i] && t[i] {
            inter += 1.0;
        }
        if p[i] || t[i] {
            union += 1.0;
        }
    }
    if union == 0.0 {
        1.0
    } else {
        inter / union
    }
}

fn dice_oracle(p: &[bool], t: &[bool]) -> f64 {
    let inter = (0..p.len()).filter(|&i| p[i] && t[i]).count() as f64;
    let total = (p.iter().filter(|&&b| b).count() + t.iter().filter(|&&b| b).count()) as f64;
    if total == 0.0 {
        1.0
    } else {
        2.0 * inter / total
    }
}

/// Probability that a random positive outranks a random negative, ties halved.
fn auc_oracle(s: &[f64], y: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                pairs += 1.0;
                wins += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

proptest! {
    #[test]
    fn overlap_metrics_match_loop_oracles(p in prop::collection::vec(any::<bool>(), 1..300), seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<bool> = p.iter().map(|_| r.random()).collect();
        prop_assert!((iou(&p, &t) - iou_oracle(&p, &t)).abs() < 1e-12);
        prop_assert!((dice(&p, &t) - dice_oracle(&p, &t)).abs() < 1e-12);
    }

    #[test]
    fn auc_matches_pair_counting(scores in prop::collection::vec(0u8..10, 2..60), seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<f64> = scores.iter().map(|&v| v as f64 / 10.0).collect();
        let y: Vec<bool> = s.iter().map(|_| r.random()).collect();
        match auc_binary(&s, &y) {
            Some(a) => prop_assert!((a - auc_oracle(&s, &y)).abs() < 1e-12),
            None => prop_assert!(y.iter().all(|&b| b) || y.iter().all(|&b| !b)),
        }
    }
}

#[test]
fn metric_fixed_points() {
    let m = [true, false, true, true];
    assert_eq!(iou(&m, &m), 1.0);
    assert_eq!(iou(&m, &m.map(|b| !b)), 0.0);
    assert_eq!(auc_binary(&[0.1, 0.2, 0.3, 0.4], &[false, false, true, true]), Some(1.0));
    assert_eq!(auc_binary(&[0.1, 0.2, 0.3, 0.4], &[true, true, false, false]), Some(0.0));
}

#[test]
fn t_statistic_examples() {
    assert_eq!(t_test(&[0.7, 0.8, 0.9], &[0.7, 0.8, 0.9]).t, Some(0.0));
    let c = t_test(&[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0]);
    assert_eq!(c.mean_difference, 1.0);
    // pooled two-sample formula by hand: means 5 and 2, variances 4 and 1,
    // pooled variance 2.5, se = sqrt(2.5 · 2/3)
    let a = [3.0, 5.0, 7.0];
    let b = [1.0, 2.0, 3.0];
    let want = 3.0 / (2.5f64 * 2.0 / 3.0).sqrt();
    assert!((t_test(&a, &b).t.unwrap() - want).abs() < 1e-12);
}

#[test]
fn transferred_parameters_are_unchanged_by_the_split() {
    let pre = SemanticGenesisNet::<f32>::build(&ModelConfig { seed: 1, ..tiny_model() }).unwrap();
    let w = weights_of(&pre);
    let mut fresh = SemanticGenesisNet::<f32>::build(&ModelConfig { seed: 2, ..tiny_model() }).unwrap();
    assert_ne!(checksum_with_prefix(&fresh, "encoder"), checksum_with_prefix(&pre, "encoder"));
    w.restore_into(&mut fresh, &["encoder", "decoder"]).unwrap();
    match split_for_target(fresh.clone(), TargetKind::Segmentation, 9).unwrap() {
        TargetModel::Segmenter(s) => {
            assert_eq!(checksum_with_prefix(&s, "encoder"), checksum_with_prefix(&pre, "encoder"));
            assert_eq!(checksum_with_prefix(&s, "decoder"), checksum_with_prefix(&pre, "decoder"));
        }
        _ => unreachable!(),
    }
    match split_for_target(fresh, TargetKind::Classification { head_widths: vec![4, 2] }, 9).unwrap() {
        TargetModel::Classifier(c) => {
            assert_eq!(checksum_with_prefix(&c, "encoder"), checksum_with_prefix(&pre, "encoder"))
        }
        _ => unreachable!(),
    }
}

#[test]
fn scratch_and_pretrained_share_the_split_and_are_deterministic() {
    let task = tiny_seg_task(2);
    let pre = SemanticGenesisNet::<f32>::build(&ModelConfig { seed: 1, ..tiny_model() }).unwrap();
    let w = weights_of(&pre);
    let cfg = FinetuneConfig { epochs: 3, ..FinetuneConfig::default() };
    let a = finetune(&task, Init::Scratch, &tiny_model(), &cfg).unwrap();
    let b = finetune(&task, Init::Pretrained(&w), &tiny_model(), &cfg).unwrap();
    assert_eq!(a.labeled_ids, b.labeled_ids);
    assert_eq!(a.labeled_ids.len(), 2);
    assert_ne!(a.epoch_losses, b.epoch_losses);
    assert_eq!(a, finetune(&task, Init::Scratch, &tiny_model(), &cfg).unwrap());
    assert!(a.iou.is_some() && a.dice.is_some() && a.auc.is_none());
    assert_ne!(labeled_indices(&task, 0), labeled_indices(&task, 1));
}

#[test]
fn incompatible_weights_and_empty_budget_fail() {
    let other = ModelConfig { base_width: 4, ..tiny_model() };
    let w = weights_of(&SemanticGenesisNet::<f32>::build(&other).unwrap());
    let cfg = FinetuneConfig { epochs: 1, ..FinetuneConfig::default() };
    let err = finetune(&tiny_seg_task(2), Init::Pretrained(&w), &tiny_model(), &cfg).unwrap_err();
    assert!(matches!(err, Error::IncompatibleWeights(_)), "{err}");
    let err = finetune(&tiny_seg_task(0), Init::Scratch, &tiny_model(), &cfg).unwrap_err().to_string();
    assert!(err.contains("empty label budget"), "{err}");
}

#[test]
fn classification_finetune_reports_auc() {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let mut make = |i: usize| {
        let label = i % 3;
        // a bright quadrant whose position encodes the class
        let v: Vec<f32> = (0..SHAPE.len())
            .map(|i| {
                let (y, x) = (i / 4 % 8, i % 4);
                let bright = match label {
                    0 => y < 4 && x < 2,
                    1 => y < 4 && x >= 2,
                    _ => y >= 4,
                };
                (if bright { 0.8 } else { 0.2 }) + r.random::<f32>() * 0.1
            })
            .collect();
        TargetSample {
            id: format!("s{i}"),
            patient_id: format!("p{}", i / 3),
            volume: Volume::new(SHAPE, v).unwrap(),
            target: Target::Class(label),
        }
    };
    let task = TargetTask {
        kind: TaskKind::Classification,
        num_classes: 3,
        input_shape: SHAPE,
        train: (0..9).map(&mut make).collect(),
        test: (9..15).map(&mut make).collect(),
        label_budget: 9,
    };
    let cfg = FinetuneConfig { epochs: 30, learning_rate: 1e-2, head_hidden: vec![8], ..FinetuneConfig::default() };
    let cmp = compare_inits(&task, &[("scratch", Init::Scratch)], &tiny_model(), &cfg, 2).unwrap();
    assert_eq!(cmp.reports.len(), 2);
    assert!(cmp.mean("scratch").unwrap() > 0.9, "{:?}", cmp.inits);
    assert!(cmp.csv().starts_with("seed,init,metric,value\n0,scratch,auc,"));
}

#[test]
fn toy_targets_respect_the_split_and_are_reproducible() {
    let spec = PhantomSpec::default();
    let patients = generate_phantoms(&spec).unwrap();
    let canonical = Shape3::new(32, 32, 16);
    let coords = sample_coordinates(spec.base_shape, 6, canonical, 1, 0.25, 10_000).unwrap();
    let cfg = ToyTargetConfig::default();
    let (cls, seg) = make_toy_targets(&patients, &coords, canonical, &cfg, 4).unwrap();

    let train_ids: Vec<&str> =
        patients.iter().filter(|p| p.split == Split::Train).map(|p| p.patient_id.as_str()).collect();
    for s in cls.train.iter().chain(&cls.test).chain(&seg.train).chain(&seg.test) {
        assert!(!train_ids.contains(&s.patient_id.as_str()), "{} was used for pretraining", s.patient_id);
    }
    for s in cls.test.iter().chain(&seg.test) {
        assert!(!cls.train.iter().any(|t| t.patient_id == s.patient_id));
    }
    for s in seg.train.iter().chain(&seg.test) {
        assert!(s.mask().unwrap().contains(&true), "{} has an empty mask", s.id);
    }

    let n_held = patients.len() - train_ids.len();
    let mut counts = vec![0usize; 6];
    for s in cls.train.iter().chain(&cls.test) {
        counts[s.label().unwrap()] += 1;
    }
    assert_eq!(counts, vec![n_held * cfg.cls_crops_per_coordinate; 6]);
    assert_eq!(cls.label_histogram(), counts);
    assert_eq!(seg.train.len() + seg.test.len(), n_held * cfg.seg_crops_per_patient);
    assert_eq!(seg.label_budget, (seg.train.len() as f64 * 0.1).ceil() as usize);

    let (cls2, seg2) = make_toy_targets(&patients, &coords, canonical, &cfg, 4).unwrap();
    assert_eq!(cls, cls2);
    assert_eq!(seg, seg2);
}
