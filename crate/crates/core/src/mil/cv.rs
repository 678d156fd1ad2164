//! Stratified k-fold cross-validation with pooled metrics and bootstrap CIs.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{binary_metrics, bootstrap_ci, BinaryMetrics, MIN_BOOTSTRAP_CASES};
use super::train::{train, TrainConfig};
use super::{Bag, MilError};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub bootstrap_resamples: usize,
    pub ci_level: f64,
    pub threshold: f64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 5, seed: 0, bootstrap_resamples: 2000, ci_level: 0.95, threshold: 0.5 }
    }
}

/// Point estimates plus `[lo, hi]` intervals keyed by metric name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub ci: BTreeMap<String, [f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePrediction {
    pub id: String,
    pub label: u8,
    pub p_pos: f64,
    pub fold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_cases: usize,
    pub test_cases: usize,
    pub metrics: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub pooled: MetricSummary,
    pub predictions: Vec<CasePrediction>,
}

/// Fold index for every case. Each class is shuffled and dealt round-robin,
/// so every fold sees both classes in near-equal proportion.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<usize>, MilError> {
    if k < 2 {
        return Err(MilError::InvalidConfig("cross-validation needs at least two folds".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; labels.len()];
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(MilError::InvalidConfig(format!(
                "class {class} has {} cases, fewer than {k} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            assignment[i] = j % k;
        }
    }
    Ok(assignment)
}

pub fn summarize(scores: &[f64], labels: &[u8], cv: &CvConfig, seed: u64) -> Result<MetricSummary, MilError> {
    let m = binary_metrics(scores, labels, cv.threshold)?;
    let mut ci = BTreeMap::new();
    if scores.len() >= MIN_BOOTSTRAP_CASES && cv.bootstrap_resamples > 0 {
        let t = cv.threshold;
        let pick: [(&str, fn(&BinaryMetrics) -> f64); 4] = [
            ("accuracy", |m| m.accuracy),
            ("auc", |m| m.auc),
            ("sensitivity", |m| m.sensitivity),
            ("specificity", |m| m.specificity),
        ];
        for (i, (name, f)) in pick.into_iter().enumerate() {
            let (lo, hi) = bootstrap_ci(
                scores,
                labels,
                |s, l| binary_metrics(s, l, t).map(|m| f(&m)),
                cv.ci_level,
                cv.bootstrap_resamples,
                seed.wrapping_add(i as u64),
            )?;
            ci.insert(name.to_string(), [lo, hi]);
        }
    }
    Ok(MetricSummary { accuracy: m.accuracy, auc: m.auc, sensitivity: m.sensitivity, specificity: m.specificity, ci })
}

/// Train on k−1 folds, score the held-out fold, repeat for every fold.
pub fn cross_validate<T: Real>(dataset: &[Bag], train_cfg: &TrainConfig, cv: &CvConfig) -> Result<CvReport, MilError> {
    let labels: Vec<u8> = dataset.iter().map(|b| b.label).collect();
    let assignment = stratified_folds(&labels, cv.folds, cv.seed)?;
    let mut predictions = Vec::with_capacity(dataset.len());
    let mut folds = Vec::with_capacity(cv.folds);
    for fold in 0..cv.folds {
        let train_set: Vec<Bag> =
            dataset.iter().zip(&assignment).filter(|(_, &f)| f != fold).map(|(b, _)| b.clone()).collect();
        let cfg = TrainConfig { seed: train_cfg.seed.wrapping_add(fold as u64), ..train_cfg.clone() };
        let model = train::<T>(&train_set, &cfg)?.model;
        let mut scores = Vec::new();
        let mut fold_labels = Vec::new();
        for (bag, _) in dataset.iter().zip(&assignment).filter(|(_, &f)| f == fold) {
            let (q, _) = model.predict(bag)?;
            let p_pos = q[1].as_f64();
            scores.push(p_pos);
            fold_labels.push(bag.label);
            predictions.push(CasePrediction { id: bag.id.clone(), label: bag.label, p_pos, fold });
        }
        let metrics = summarize(&scores, &fold_labels, cv, cv.seed.wrapping_add(1000 * (fold as u64 + 1)))?;
        log::info!("fold {fold}: accuracy {:.3} auc {:.3}", metrics.accuracy, metrics.auc);
        folds.push(FoldReport { fold, train_cases: train_set.len(), test_cases: scores.len(), metrics });
    }
    let scores: Vec<f64> = predictions.iter().map(|p| p.p_pos).collect();
    let pooled_labels: Vec<u8> = predictions.iter().map(|p| p.label).collect();
    let pooled = summarize(&scores, &pooled_labels, cv, cv.seed)?;
    Ok(CvReport { folds, pooled, predictions })
}
