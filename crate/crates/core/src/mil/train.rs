//! Mini-batch training with Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamParams};
use super::augment::augment_bag;
use super::model::{AwAggregation, MilModel, ModelConfig};
use super::{Bag, MilError};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Weight of the attention-smoothness penalty.
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: bool,
    #[serde(default)]
    pub adam: AdamParams,
    #[serde(default)]
    pub aw_aggregation: AwAggregation,
}

impl TrainConfig {
    /// Small backbone and a learning rate that converges on desk-scale data.
    pub fn toy() -> Self {
        Self {
            model: ModelConfig::toy(),
            lambda: 1.0,
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 4,
            seed: 0,
            augment: true,
            adam: AdamParams::default(),
            aw_aggregation: AwAggregation::Mean,
        }
    }

    /// D = 512 features, learning rate 1e-5, 100 epochs.
    pub fn full_scale() -> Self {
        Self { model: ModelConfig::full_scale(), learning_rate: 1e-5, epochs: 100, ..Self::toy() }
    }

    pub fn validate(&self) -> Result<(), MilError> {
        self.model.validate()?;
        let bad = |why: &str| Err(MilError::InvalidConfig(why.into()));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub cross_entropy: f64,
    pub smoothness: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: MilModel<T>,
    pub history: Vec<EpochLoss>,
}

/// Train a fresh model. With zero epochs the returned model is the seeded
/// initialisation. Both classes must be present.
pub fn train<T: Real>(dataset: &[Bag], cfg: &TrainConfig) -> Result<TrainOutcome<T>, MilError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(MilError::EmptyDataset);
    }
    if !(dataset.iter().any(|b| b.label == 0) && dataset.iter().any(|b| b.label == 1)) {
        return Err(MilError::SingleClass);
    }
    let mut model = MilModel::<T>::init(&cfg.model, cfg.seed)?;
    if let Some(b) = dataset.iter().find(|b| b.size != cfg.model.arch.input_size) {
        return Err(MilError::BagShape { expected: cfg.model.arch.input_size, found: b.size });
    }
    let mut opt = Adam::new(&model, cfg.learning_rate, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11_0f_5eed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut ce, mut aw, mut total) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let augmented: Vec<Bag>;
            let batch: Vec<&Bag> = if cfg.augment {
                augmented = chunk.iter().map(|&i| augment_bag(&dataset[i], &mut rng).0).collect();
                augmented.iter().collect()
            } else {
                chunk.iter().map(|&i| &dataset[i]).collect()
            };
            let (loss, grads) = model.loss_and_gradient(&batch, cfg.lambda, cfg.aw_aggregation)?;
            opt.step(&mut model, &grads);
            let w = chunk.len() as f64;
            ce += loss.cross_entropy * w;
            aw += loss.smoothness * w;
            total += loss.total * w;
        }
        let n = dataset.len() as f64;
        let record = EpochLoss { epoch, cross_entropy: ce / n, smoothness: aw / n, total: total / n };
        log::info!(
            "epoch {epoch}: ce {:.4} aw {:.6} total {:.4}",
            record.cross_entropy,
            record.smoothness,
            record.total
        );
        history.push(record);
    }
    Ok(TrainOutcome { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mil::ArchSpec;

    fn tiny() -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                arch: ArchSpec { input_size: 8, stem_pool: 1, channels: vec![2], feature_dim: 3 },
                attention_dim: 4,
            },
            epochs: 3,
            batch_size: 2,
            ..TrainConfig::toy()
        }
    }

    fn bag(label: u8, v: f32) -> Bag {
        Bag::new("b", label, 2, 8, vec![v; 128]).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let cfg = TrainConfig { epochs: 0, ..tiny() };
        let out = train::<f64>(&[bag(0, 0.1), bag(1, 0.9)], &cfg).unwrap();
        assert_eq!(out.model, MilModel::init(&cfg.model, cfg.seed).unwrap());
        assert!(out.history.is_empty());
    }

    #[test]
    fn single_class_is_rejected() {
        let err = train::<f64>(&[bag(1, 0.1), bag(1, 0.9)], &tiny()).unwrap_err();
        assert_eq!(err, MilError::SingleClass);
        assert_eq!(train::<f64>(&[], &tiny()).unwrap_err(), MilError::EmptyDataset);
    }

    #[test]
    fn loss_curve_is_recorded_and_reproducible() {
        let data = [bag(0, 0.1), bag(1, 0.9), bag(0, 0.2), bag(1, 0.8)];
        let a = train::<f64>(&data, &tiny()).unwrap();
        let b = train::<f64>(&data, &tiny()).unwrap();
        assert_eq!(a.history.len(), 3);
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        for e in &a.history {
            assert!((e.total - (e.cross_entropy + e.smoothness)).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_config() {
        let cfg = TrainConfig { batch_size: 0, ..tiny() };
        assert!(matches!(train::<f64>(&[bag(0, 0.1), bag(1, 0.9)], &cfg), Err(MilError::InvalidConfig(_))));
    }
}
