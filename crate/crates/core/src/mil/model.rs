//! Attention-MIL model: per-slice features, tanh attention pooling,
//! a linear two-class head, the loss with its attention-smoothness penalty,
//! and the analytic backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::cnn::{ArchSpec, FeatureExtractor, SliceCache};
use super::{Bag, MilError};
use crate::scalar::Real;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: ArchSpec,
    /// Hidden width L of the attention scorer.
    pub attention_dim: usize,
}

impl ModelConfig {
    pub fn toy() -> Self {
        Self { arch: ArchSpec::toy(), attention_dim: 128 }
    }

    pub fn full_scale() -> Self {
        Self { arch: ArchSpec::full_scale(), attention_dim: 128 }
    }

    pub fn validate(&self) -> Result<(), MilError> {
        self.arch.validate()?;
        if self.attention_dim == 0 {
            return Err(MilError::InvalidArch("attention dimension must be at least 1".into()));
        }
        Ok(())
    }
}

/// Scores s_k = wᵀ tanh(V h_k); weights are the softmax of s over slices.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    /// `L × D`, row-major.
    pub v: Vec<T>,
    /// Length L.
    pub w: Vec<T>,
    pub hidden: usize,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput<T> {
    /// tanh(V h_k), `K × L`.
    pub hidden: Vec<T>,
    /// Pre-softmax scores.
    pub scores: Vec<T>,
    pub weights: Vec<T>,
    /// Pooled bag embedding z = Σ a_k h_k.
    pub embedding: Vec<T>,
}

fn xavier<T: Real, R: Rng>(fan_in: usize, fan_out: usize, n: usize, rng: &mut R) -> Vec<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).unwrap();
    (0..n).map(|_| T::lit(dist.sample(rng))).collect()
}

pub fn softmax<T: Real>(s: &[T]) -> Vec<T> {
    let m = s.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = s.iter().map(|&v| (v - m).exp()).collect();
    let total: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / total).collect()
}

impl<T: Real> AttentionParams<T> {
    pub fn zeros(feature_dim: usize, hidden: usize) -> Self {
        Self { v: vec![T::zero(); hidden * feature_dim], w: vec![T::zero(); hidden], hidden, feature_dim }
    }

    pub fn init<R: Rng>(feature_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            v: xavier(feature_dim, hidden, hidden * feature_dim, rng),
            w: xavier(hidden, 1, hidden, rng),
            hidden,
            feature_dim,
        }
    }

    /// Pre-softmax scores and the tanh hidden layer for `K × D` features.
    pub fn scores(&self, features: &[T], k: usize) -> (Vec<T>, Vec<T>) {
        let (d, l) = (self.feature_dim, self.hidden);
        let mut hidden = Vec::with_capacity(k * l);
        let mut scores = Vec::with_capacity(k);
        for h in features.chunks_exact(d).take(k) {
            let mut s = T::zero();
            for j in 0..l {
                let row = &self.v[j * d..(j + 1) * d];
                let u = row.iter().zip(h).map(|(&a, &b)| a * b).sum::<T>().tanh();
                hidden.push(u);
                s += self.w[j] * u;
            }
            scores.push(s);
        }
        (hidden, scores)
    }

    /// Attention weights and the pooled embedding for a bag of `k` feature rows.
    pub fn pool(&self, features: &[T], k: usize) -> AttentionOutput<T> {
        let d = self.feature_dim;
        let (hidden, scores) = self.scores(features, k);
        let weights = softmax(&scores);
        let mut embedding = vec![T::zero(); d];
        for (h, &a) in features.chunks_exact(d).zip(&weights) {
            for (z, &v) in embedding.iter_mut().zip(h) {
                *z += a * v;
            }
        }
        AttentionOutput { hidden, scores, weights, embedding }
    }
}

/// Linear map from the bag embedding to two class logits; `W` is `2 × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ClassifierHead<T> {
    pub fn zeros(feature_dim: usize) -> Self {
        Self { weights: vec![T::zero(); 2 * feature_dim], bias: vec![T::zero(); 2] }
    }

    pub fn logits(&self, z: &[T]) -> [T; 2] {
        let d = z.len();
        std::array::from_fn(|c| {
            self.bias[c] + self.weights[c * d..(c + 1) * d].iter().zip(z).map(|(&a, &b)| a * b).sum::<T>()
        })
    }
}

/// Sum of squared differences between consecutive attention weights.
pub fn attention_smoothness<T: Real>(a: &[T]) -> T {
    a.windows(2).map(|p| (p[1] - p[0]) * (p[1] - p[0])).sum()
}

/// Per-bag cross-entropy −log q_y with the probability clamped.
pub fn cross_entropy<T: Real>(q: &[T; 2], label: u8) -> T {
    let eps = T::lit(PROB_CLAMP);
    -(q[label as usize].max(eps).min(T::one() - eps)).ln()
}

/// How the smoothness penalty is combined across the bags of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AwAggregation {
    /// Average the per-bag penalties, like the cross-entropy.
    #[default]
    Mean,
    /// Sum the per-bag penalties.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub cross_entropy: f64,
    pub smoothness: f64,
    pub total: f64,
}

/// Batch loss from per-bag class probabilities and attention weights.
pub fn loss_components<T: Real>(
    probs: &[[T; 2]],
    labels: &[u8],
    attention: &[Vec<T>],
    lambda: f64,
    aggregation: AwAggregation,
) -> LossComponents {
    let n = probs.len().max(1) as f64;
    let ce = probs.iter().zip(labels).map(|(q, &y)| cross_entropy(q, y).as_f64()).sum::<f64>() / n;
    let aw_sum: f64 = attention.iter().map(|a| attention_smoothness(a).as_f64()).sum();
    let aw = match aggregation {
        AwAggregation::Mean => aw_sum / n,
        AwAggregation::Sum => aw_sum,
    };
    LossComponents { cross_entropy: ce, smoothness: aw, total: ce + lambda * aw }
}

/// Everything the backward pass needs from one bag's forward pass.
#[derive(Debug, Clone)]
pub struct BagForward<T> {
    pub slices: usize,
    /// `K × D` slice features.
    pub features: Vec<T>,
    pub caches: Vec<SliceCache<T>>,
    pub attention: AttentionOutput<T>,
    pub logits: [T; 2],
    pub probs: [T; 2],
}

impl<T: Real> BagForward<T> {
    /// Combined activation pattern of every slice; equal patterns mean the
    /// network is a single smooth function between the two inputs.
    pub fn activation_pattern(&self) -> Vec<u64> {
        self.caches.iter().map(|c| c.activation_pattern()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilModel<T> {
    pub config: ModelConfig,
    pub features: FeatureExtractor<T>,
    pub attention: AttentionParams<T>,
    pub head: ClassifierHead<T>,
}

impl<T: Real> MilModel<T> {
    /// All-zero parameters; also the shape of a gradient accumulator.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.arch.feature_dim;
        Self {
            config: config.clone(),
            features: FeatureExtractor::zeros(&config.arch),
            attention: AttentionParams::zeros(d, config.attention_dim),
            head: ClassifierHead::zeros(d),
        }
    }

    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, MilError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.arch.feature_dim;
        let features = FeatureExtractor::init(&config.arch, &mut rng);
        let attention = AttentionParams::init(d, config.attention_dim, &mut rng);
        let head = ClassifierHead { weights: xavier(d, 2, 2 * d, &mut rng), bias: vec![T::zero(); 2] };
        Ok(Self { config: config.clone(), features, attention, head })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Parameter tensors in a fixed order with stable names.
    pub fn tensors(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (i, c) in self.features.blocks.iter().enumerate() {
            out.push((format!("conv{i}.weight"), c.weights.as_slice()));
            out.push((format!("conv{i}.bias"), c.bias.as_slice()));
        }
        out.push(("projection.weight".into(), self.features.projection.weights.as_slice()));
        out.push(("projection.bias".into(), self.features.projection.bias.as_slice()));
        out.push(("attention.V".into(), self.attention.v.as_slice()));
        out.push(("attention.w".into(), self.attention.w.as_slice()));
        out.push(("head.weight".into(), self.head.weights.as_slice()));
        out.push(("head.bias".into(), self.head.bias.as_slice()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for c in self.features.convs_mut() {
            out.push(c.weights.as_mut_slice());
            out.push(c.bias.as_mut_slice());
        }
        out.push(self.attention.v.as_mut_slice());
        out.push(self.attention.w.as_mut_slice());
        out.push(self.head.weights.as_mut_slice());
        out.push(self.head.bias.as_mut_slice());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_bag(&self, bag: &Bag) -> Result<(), MilError> {
        if bag.size != self.config.arch.input_size {
            return Err(MilError::BagShape { expected: self.config.arch.input_size, found: bag.size });
        }
        Ok(())
    }

    pub fn forward(&self, bag: &Bag) -> Result<BagForward<T>, MilError> {
        self.check_bag(bag)?;
        let k = bag.slices;
        let d = self.config.arch.feature_dim;
        let mut features = Vec::with_capacity(k * d);
        let mut caches = Vec::with_capacity(k);
        for s in 0..k {
            let (h, cache) = self.features.forward_slice(bag.slice(s));
            features.extend(h);
            caches.push(cache);
        }
        let attention = self.attention.pool(&features, k);
        let logits = self.head.logits(&attention.embedding);
        let p = softmax(&logits);
        Ok(BagForward { slices: k, features, caches, attention, logits, probs: [p[0], p[1]] })
    }

    /// Class probabilities and attention weights.
    pub fn predict(&self, bag: &Bag) -> Result<([T; 2], Vec<T>), MilError> {
        let f = self.forward(bag)?;
        Ok((f.probs, f.attention.weights))
    }

    /// Back-propagate through the head and attention pooling.
    ///
    /// `dlogits` is the upstream gradient on the logits and `dweights` an
    /// extra gradient on the attention weights. Head/attention parameter
    /// gradients go into `grads` when given; returns d/dh for every slice.
    pub fn backward_to_features(
        &self,
        fwd: &BagForward<T>,
        dlogits: [T; 2],
        dweights: Option<&[T]>,
        mut grads: Option<&mut MilModel<T>>,
    ) -> Vec<T> {
        let d = self.config.arch.feature_dim;
        let l = self.attention.hidden;
        let k = fwd.slices;
        let att = &fwd.attention;

        let mut dz = vec![T::zero(); d];
        for c in 0..2 {
            let row = &self.head.weights[c * d..(c + 1) * d];
            for (g, &w) in dz.iter_mut().zip(row) {
                *g += w * dlogits[c];
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            for c in 0..2 {
                g.head.bias[c] += dlogits[c];
                for (gw, &z) in g.head.weights[c * d..(c + 1) * d].iter_mut().zip(&att.embedding) {
                    *gw += dlogits[c] * z;
                }
            }
        }

        let mut dh = vec![T::zero(); k * d];
        let mut da: Vec<T> = (0..k)
            .map(|i| fwd.features[i * d..(i + 1) * d].iter().zip(&dz).map(|(&a, &b)| a * b).sum())
            .collect();
        if let Some(extra) = dweights {
            da.iter_mut().zip(extra).for_each(|(a, &e)| *a += e);
        }
        for i in 0..k {
            let a = att.weights[i];
            for (g, &z) in dh[i * d..(i + 1) * d].iter_mut().zip(&dz) {
                *g += a * z;
            }
        }
        // softmax backward
        let mean: T = att.weights.iter().zip(&da).map(|(&a, &g)| a * g).sum();
        let ds: Vec<T> = att.weights.iter().zip(&da).map(|(&a, &g)| a * (g - mean)).collect();

        let mut dpre = vec![T::zero(); l];
        for i in 0..k {
            let u = &att.hidden[i * l..(i + 1) * l];
            for j in 0..l {
                dpre[j] = ds[i] * self.attention.w[j] * (T::one() - u[j] * u[j]);
            }
            let h = &fwd.features[i * d..(i + 1) * d];
            if let Some(g) = grads.as_deref_mut() {
                for j in 0..l {
                    g.attention.w[j] += ds[i] * u[j];
                    let row = &mut g.attention.v[j * d..(j + 1) * d];
                    for (gv, &hv) in row.iter_mut().zip(h) {
                        *gv += dpre[j] * hv;
                    }
                }
            }
            let dhi = &mut dh[i * d..(i + 1) * d];
            for j in 0..l {
                let row = &self.attention.v[j * d..(j + 1) * d];
                for (g, &v) in dhi.iter_mut().zip(row) {
                    *g += dpre[j] * v;
                }
            }
        }
        dh
    }

    /// Full backward pass for one bag, accumulating into `grads`.
    pub fn backward(&self, fwd: &BagForward<T>, dlogits: [T; 2], dweights: Option<&[T]>, grads: &mut MilModel<T>) {
        let d = self.config.arch.feature_dim;
        let dh = self.backward_to_features(fwd, dlogits, dweights, Some(grads));
        for (i, cache) in fwd.caches.iter().enumerate() {
            self.features.backward_slice(cache, &dh[i * d..(i + 1) * d], &mut grads.features);
        }
    }

    /// Loss of a batch and its gradient with respect to every parameter.
    pub fn loss_and_gradient(
        &self,
        batch: &[&Bag],
        lambda: f64,
        aggregation: AwAggregation,
    ) -> Result<(LossComponents, MilModel<T>), MilError> {
        let n = batch.len();
        if n == 0 {
            return Err(MilError::EmptyDataset);
        }
        let mut grads = self.zeros_like();
        let mut probs = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let inv_n = T::lit(1.0 / n as f64);
        let aw_scale = T::lit(lambda)
            * match aggregation {
                AwAggregation::Mean => inv_n,
                AwAggregation::Sum => T::one(),
            };
        let eps = T::lit(PROB_CLAMP);
        for bag in batch {
            let fwd = self.forward(bag)?;
            let y = bag.label as usize;
            let qy = fwd.probs[y];
            // the clamp has zero derivative where it is active
            let dlogits = if qy > eps && qy < T::one() - eps {
                std::array::from_fn(|c| (fwd.probs[c] - if c == y { T::one() } else { T::zero() }) * inv_n)
            } else {
                [T::zero(); 2]
            };
            let a = &fwd.attention.weights;
            let k = a.len();
            let two = T::lit(2.0);
            let daw: Vec<T> = (0..k)
                .map(|i| {
                    let mut g = T::zero();
                    if i > 0 {
                        g += two * (a[i] - a[i - 1]);
                    }
                    if i + 1 < k {
                        g -= two * (a[i + 1] - a[i]);
                    }
                    g * aw_scale
                })
                .collect();
            self.backward(&fwd, dlogits, Some(&daw), &mut grads);
            probs.push(fwd.probs);
            weights.push(fwd.attention.weights);
        }
        let labels: Vec<u8> = batch.iter().map(|b| b.label).collect();
        Ok((loss_components(&probs, &labels, &weights, lambda, aggregation), grads))
    }

    /// Loss only, for finite-difference checks and evaluation.
    pub fn loss(&self, batch: &[&Bag], lambda: f64, aggregation: AwAggregation) -> Result<LossComponents, MilError> {
        let mut probs = Vec::with_capacity(batch.len());
        let mut weights = Vec::with_capacity(batch.len());
        for bag in batch {
            let (q, a) = self.predict(bag)?;
            probs.push(q);
            weights.push(a);
        }
        let labels: Vec<u8> = batch.iter().map(|b| b.label).collect();
        Ok(loss_components(&probs, &labels, &weights, lambda, aggregation))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_is_stable_for_large_scores() {
        let a = softmax(&[1000.0f64, 1000.0, 1000.0 + 2f64.ln()]);
        assert!((a[2] - 0.5).abs() < 1e-12);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn smoothness_of_known_sequence() {
        assert_eq!(attention_smoothness(&[0.1f64, 0.3, 0.6]), 0.2f64.powi(2) + 0.3f64.powi(2));
        assert_eq!(attention_smoothness(&[1.0f64]), 0.0);
    }

    #[test]
    fn cross_entropy_clamps() {
        assert!((cross_entropy(&[1.0f64, 0.0], 1) - (-(1e-7f64).ln())).abs() < 1e-12);
        assert!((cross_entropy(&[0.25f64, 0.75], 1) - (-(0.75f64).ln())).abs() < 1e-15);
    }

    #[test]
    fn aggregation_switch() {
        let probs = [[0.5f64, 0.5], [0.5, 0.5]];
        let att = vec![vec![0.0, 1.0], vec![0.5, 0.5]];
        let mean = loss_components(&probs, &[0, 1], &att, 2.0, AwAggregation::Mean);
        let sum = loss_components(&probs, &[0, 1], &att, 2.0, AwAggregation::Sum);
        assert!((mean.smoothness - 0.5).abs() < 1e-15);
        assert!((sum.smoothness - 1.0).abs() < 1e-15);
        assert!((mean.total - (mean.cross_entropy + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn identical_features_get_uniform_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let att = AttentionParams::<f64>::init(6, 5, &mut rng);
        let row = [0.3, -1.0, 2.0, 0.0, 0.5, 0.1];
        let feats: Vec<f64> = row.iter().cycle().take(6 * 7).copied().collect();
        let out = att.pool(&feats, 7);
        for a in &out.weights {
            assert!((a - 1.0 / 7.0).abs() < 1e-15);
        }
    }
}
