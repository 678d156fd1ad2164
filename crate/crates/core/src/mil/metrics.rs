//! Binary classification metrics and percentile-bootstrap confidence intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MilError;

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize), MilError> {
    if scores.len() != labels.len() {
        return Err(MilError::Metric(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MilError::Metric("non-finite score".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.iter().filter(|&&l| l == 0).count();
    if pos + neg != labels.len() {
        return Err(MilError::Metric("labels must be 0 or 1".into()));
    }
    if pos == 0 || neg == 0 {
        return Err(MilError::Metric("both classes are required".into()));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve by the trapezoid rule. Tied scores form a single
/// ROC step, so ties count one half, as in the pairwise-ranking definition.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, MilError> {
    let (pos, neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let (tp0, fp0) = (tp, fp);
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // trapezoid between consecutive ROC points, in counts
        area += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
    }
    Ok(area / (pos * neg) as f64)
}

/// ROC points `[fpr, tpr]` from (0, 0) to (1, 1), one per distinct score,
/// thresholds descending.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<[f64; 2]>, MilError> {
    let (pos, neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![[0.0, 0.0]];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push([fp as f64 / neg as f64, tp as f64 / pos as f64]);
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// A case is called positive when its score exceeds `threshold`.
pub fn binary_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<BinaryMetrics, MilError> {
    let (pos, neg) = check(scores, labels)?;
    let mut tp = 0usize;
    let mut tn = 0usize;
    for (&s, &l) in scores.iter().zip(labels) {
        let called = s > threshold;
        match (called, l) {
            (true, 1) => tp += 1,
            (false, 0) => tn += 1,
            _ => {}
        }
    }
    Ok(BinaryMetrics {
        accuracy: (tp + tn) as f64 / scores.len() as f64,
        auc: roc_auc(scores, labels)?,
        sensitivity: tp as f64 / pos as f64,
        specificity: tn as f64 / neg as f64,
    })
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub const MIN_BOOTSTRAP_CASES: usize = 10;

/// Percentile bootstrap interval of `metric` at confidence `level`.
/// Resamples that miss a class are redrawn.
pub fn bootstrap_ci<F>(
    scores: &[f64],
    labels: &[u8],
    metric: F,
    level: f64,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64), MilError>
where
    F: Fn(&[f64], &[u8]) -> Result<f64, MilError>,
{
    check(scores, labels)?;
    let n = scores.len();
    if n < MIN_BOOTSTRAP_CASES {
        return Err(MilError::Metric(format!("bootstrap needs at least {MIN_BOOTSTRAP_CASES} cases, got {n}")));
    }
    if !(level > 0.0 && level < 1.0) || resamples == 0 {
        return Err(MilError::Metric("level must lie in (0, 1) and resamples be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(resamples);
    let mut s = vec![0.0; n];
    let mut l = vec![0u8; n];
    while values.len() < resamples {
        let mut attempts = 0;
        loop {
            for j in 0..n {
                let i = rng.random_range(0..n);
                s[j] = scores[i];
                l[j] = labels[i];
            }
            if l.contains(&0) && l.contains(&1) {
                break;
            }
            attempts += 1;
            if attempts > 10_000 {
                return Err(MilError::Metric("could not draw a two-class resample".into()));
            }
        }
        values.push(metric(&s, &l)?);
    }
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile(&values, tail), quantile(&values, 1.0 - tail)))
}
