//! Evaluation metrics for the target tasks.

/// Area under the ROC curve of `scores` for the binary labels `positive`,
/// counting ties as one half. `None` when either class is absent.
pub fn auc_binary(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // midranks of tied groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if positive[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Macro-averaged one-vs-rest AUC over the classes that have both positive
/// and negative samples. `probs` is row-major `[N, C]`.
pub fn auc_macro_ovr(probs: &[f64], labels: &[usize], c: usize) -> Option<f64> {
    let mut aucs = Vec::new();
    for k in 0..c {
        let scores: Vec<f64> = probs.chunks(c).map(|row| row[k]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        if let Some(a) = auc_binary(&scores, &pos) {
            aucs.push(a);
        }
    }
    (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
}

fn counts(pred: &[bool], truth: &[bool]) -> (usize, usize, usize) {
    assert_eq!(pred.len(), truth.len(), "mask lengths differ");
    let mut tp = 0;
    let mut p = 0;
    let mut t = 0;
    for (&a, &b) in pred.iter().zip(truth) {
        tp += (a && b) as usize;
        p += a as usize;
        t += b as usize;
    }
    (tp, p, t)
}

/// Intersection over union; two empty masks score 1.
pub fn iou(pred: &[bool], truth: &[bool]) -> f64 {
    let (tp, p, t) = counts(pred, truth);
    let union = p + t - tp;
    if union == 0 {
        1.0
    } else {
        tp as f64 / union as f64
    }
}

/// Dice coefficient; two empty masks score 1.
pub fn dice(pred: &[bool], truth: &[bool]) -> f64 {
    let (tp, p, t) = counts(pred, truth);
    if p + t == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (p + t) as f64
    }
}
