//! Attention-based multiple-instance learning over CT slices.
//!
//! A case is a bag of K axial slices. Each slice passes through a small CNN to
//! a feature vector h_k; a learned attention scorer weights the slices, the
//! weighted sum z feeds a two-class head, and training penalises abrupt
//! changes in attention between neighbouring slices.

pub mod adam;
pub mod augment;
pub mod checkpoint;
pub mod cnn;
pub mod cv;
pub mod gradcam;
pub mod metrics;
pub mod model;
pub mod train;

use thiserror::Error;

pub use adam::{Adam, AdamParams};
pub use augment::{augment_bag, AugmentParams};
pub use checkpoint::{load_checkpoint, model_version, save_checkpoint, CheckpointError};
pub use cnn::{conv2d_forward, ArchSpec, Conv, FeatureExtractor};
pub use cv::{cross_validate, stratified_folds, CasePrediction, CvConfig, CvReport, FoldReport, MetricSummary};
pub use gradcam::{predict_with_heatmap, PredictionResult};
pub use metrics::{binary_metrics, bootstrap_ci, roc_auc, roc_curve, BinaryMetrics};
pub use model::{
    attention_smoothness, cross_entropy, loss_components, softmax, AttentionOutput, AttentionParams, AwAggregation,
    BagForward, ClassifierHead, LossComponents, MilModel, ModelConfig,
};
pub use train::{train, EpochLoss, TrainConfig, TrainOutcome};

use crate::volume::ClassifierInput;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MilError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("invalid bag: {0}")]
    InvalidBag(String),
    #[error("bag slices are {found}px, the model expects {expected}px")]
    BagShape { expected: usize, found: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training data contains a single class; both labels are required")]
    SingleClass,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("metric input: {0}")]
    Metric(String),
}

/// One case as the classifier sees it: K slices of `size × size` values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub id: String,
    /// 0 = negative, 1 = positive.
    pub label: u8,
    pub slices: usize,
    pub size: usize,
    pub data: Vec<f32>,
}

impl Bag {
    pub fn new(id: impl Into<String>, label: u8, slices: usize, size: usize, data: Vec<f32>) -> Result<Self, MilError> {
        if label > 1 {
            return Err(MilError::InvalidBag(format!("label {label} is not 0 or 1")));
        }
        if slices == 0 || size == 0 {
            return Err(MilError::InvalidBag("a bag needs at least one non-empty slice".into()));
        }
        if data.len() != slices * size * size {
            return Err(MilError::InvalidBag(format!(
                "{} values for {slices} slices of {size}×{size}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MilError::InvalidBag("non-finite intensity".into()));
        }
        Ok(Self { id: id.into(), label, slices, size, data })
    }

    pub fn from_input(id: impl Into<String>, label: u8, input: &ClassifierInput) -> Result<Self, MilError> {
        Self::new(id, label, input.slices, input.size, input.data.clone())
    }

    pub fn slice(&self, k: usize) -> &[f32] {
        let plane = self.size * self.size;
        &self.data[k * plane..(k + 1) * plane]
    }

    /// The same bag with its slices reordered.
    pub fn permuted(&self, order: &[usize]) -> Bag {
        let data = order.iter().flat_map(|&k| self.slice(k).iter().copied()).collect();
        Bag { data, slices: order.len(), ..self.clone() }
    }
}
