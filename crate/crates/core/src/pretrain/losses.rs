//! Classification cross-entropy, restoration L2 and their weighted sum, plus
//! the gradient forms used during training.

use crate::error::{Error, Result};
use crate::network::{Real, Tensor};
use crate::types::LossWeights;

/// Probability floor applied before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Categorical cross-entropy `-(1/N) Σ_b Σ_c Y_bc log P_bc` over row-major
/// `N×C` probabilities and one-hot labels.
pub fn loss_cls(probs: &[f64], onehot: &[f64], n: usize, c: usize) -> Result<f64> {
    if n == 0 || c == 0 || probs.len() != n * c || onehot.len() != n * c {
        return Err(Error::ShapeMismatch(format!(
            "loss_cls expects {n}×{c} inputs, got {} and {}",
            probs.len(),
            onehot.len()
        )));
    }
    let mut total = 0.0;
    for (b, (p, y)) in probs.chunks(c).zip(onehot.chunks(c)).enumerate() {
        let ones = y.iter().filter(|&&v| v == 1.0).count();
        if ones != 1 || y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Invalid(format!("row {b} of Y is not one-hot")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-5 || p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invalid(format!("row {b} of P is not a probability vector (sum {sum})")));
        }
        for (&pv, &yv) in p.iter().zip(y) {
            if yv == 1.0 {
                total -= pv.clamp(PROB_EPS, 1.0).ln();
            }
        }
    }
    Ok(total / n as f64)
}

/// Mean over the batch of the (unsquared) Euclidean norm of each sample's
/// voxel difference. Inputs are `N` samples of `len` voxels each.
pub fn loss_rec(originals: &[f64], reconstructions: &[f64], n: usize) -> Result<f64> {
    if n == 0 || originals.len() != reconstructions.len() || originals.len() % n != 0 {
        return Err(Error::ShapeMismatch(format!(
            "loss_rec expects equal shapes divisible by N = {n}, got {} and {}",
            originals.len(),
            reconstructions.len()
        )));
    }
    let len = originals.len() / n;
    let total: f64 = originals
        .chunks(len)
        .zip(reconstructions.chunks(len))
        .map(|(x, r)| x.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .sum();
    Ok(total / n as f64)
}

pub fn loss_total(l_cls: f64, l_rec: f64, w: LossWeights) -> f64 {
    w.lambda_cls * l_cls + w.lambda_rec * l_rec
}

/// Row-wise softmax of `[N, C]` logits, computed in `f64`.
pub fn softmax(logits: &Tensor<impl Real>) -> Vec<f64> {
    let c = logits.shape[1];
    let mut out = Vec::with_capacity(logits.data.len());
    for row in logits.data.chunks(c) {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    out
}

/// Cross-entropy of softmax(`logits`) against integer labels, with the
/// gradient with respect to the logits. Matches [`loss_cls`] including the
/// probability floor (a floored probability contributes no gradient).
pub fn cross_entropy_with_grad<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (n, c) = (logits.shape[0], logits.shape[1]);
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{} labels for {n} logit rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Invalid(format!("label {bad} out of range for {c} classes")));
    }
    let probs = softmax(logits);
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&logits.shape);
    let inv_n = 1.0 / n as f64;
    for b in 0..n {
        let p_true = probs[b * c + labels[b]];
        loss -= p_true.clamp(PROB_EPS, 1.0).ln();
        if p_true >= PROB_EPS {
            for k in 0..c {
                let y = if k == labels[b] { 1.0 } else { 0.0 };
                grad.data[b * c + k] = T::from_f64((probs[b * c + k] - y) * inv_n);
            }
        }
    }
    Ok((loss * inv_n, grad))
}

/// Restoration loss with its gradient with respect to the reconstructions.
pub fn restoration_with_grad<T: Real>(originals: &Tensor<T>, recon: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if originals.shape != recon.shape {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", originals.shape, recon.shape)));
    }
    let n = originals.batch();
    let mut grad = Tensor::zeros(&recon.shape);
    let mut total = 0.0;
    for b in 0..n {
        let (x, r) = (originals.sample(b), recon.sample(b));
        let norm = x.iter().zip(r).map(|(a, c)| (c.as_f64() - a.as_f64()).powi(2)).sum::<f64>().sqrt();
        total += norm;
        if norm > 0.0 {
            let scale = 1.0 / (n as f64 * norm);
            for ((g, a), c) in grad.sample_mut(b).iter_mut().zip(x).zip(r) {
                *g = T::from_f64((c.as_f64() - a.as_f64()) * scale);
            }
        }
    }
    Ok((total / n as f64, grad))
}
