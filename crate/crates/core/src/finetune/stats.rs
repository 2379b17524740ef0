use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single value.
    pub sd: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
    Summary { n, mean, sd }
}

/// Independent two-sample Student t-test with pooled variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub mean_difference: f64,
    /// `None` when both samples have zero spread but different means.
    pub t: Option<f64>,
    pub df: usize,
    pub p_value: Option<f64>,
}

pub fn t_test(a: &[f64], b: &[f64]) -> TTest {
    let (sa, sb) = (summarize(a), summarize(b));
    let df = (sa.n + sb.n).saturating_sub(2);
    let diff = sa.mean - sb.mean;
    let pooled = if df > 0 {
        (((sa.n - 1) as f64 * sa.sd.powi(2) + (sb.n - 1) as f64 * sb.sd.powi(2)) / df as f64).sqrt()
    } else {
        0.0
    };
    let se = pooled * (1.0 / sa.n as f64 + 1.0 / sb.n as f64).sqrt();
    let t = if se > 0.0 {
        Some(diff / se)
    } else if diff == 0.0 {
        Some(0.0)
    } else {
        None
    };
    let p_value = match (t, df) {
        (Some(t), df) if df > 0 => StudentsT::new(0.0, 1.0, df as f64).ok().map(|d| 2.0 * (1.0 - d.cdf(t.abs()))),
        _ => None,
    };
    TTest { mean_difference: diff, t, df, p_value }
}
