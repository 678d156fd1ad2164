//! Attention pooling, head and loss properties.

use ctview_core::mil::{
    attention_smoothness, loss_components, softmax, Adam, AdamParams, ArchSpec, AttentionParams, AwAggregation, Bag,
    ClassifierHead, MilModel, ModelConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_attention(d: usize, l: usize, seed: u64) -> AttentionParams<f64> {
    AttentionParams::init(d, l, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn features(k: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k * d).map(|_| rng.random_range(-3.0..3.0)).collect()
}

#[test]
fn hand_set_weights_match_scalar_evaluation() {
    // K=3, D=2, L=2
    let att = AttentionParams { v: vec![0.5, -1.0, 2.0, 0.25], w: vec![1.5, -0.75], hidden: 2, feature_dim: 2 };
    let h = [[1.0, 2.0], [-0.5, 0.0], [3.0, -1.0]];
    let flat: Vec<f64> = h.iter().flatten().copied().collect();
    let out = att.pool(&flat, 3);
    let s: Vec<f64> = h
        .iter()
        .map(|hk| 1.5 * (0.5 * hk[0] - 1.0 * hk[1]).tanh() - 0.75 * (2.0 * hk[0] + 0.25 * hk[1]).tanh())
        .collect();
    let e: Vec<f64> = s.iter().map(|v| v.exp()).collect();
    let total: f64 = e.iter().sum();
    for k in 0..3 {
        assert!((out.weights[k] - e[k] / total).abs() < 1e-15);
        assert!((out.scores[k] - s[k]).abs() < 1e-15);
    }
    for c in 0..2 {
        let z: f64 = (0..3).map(|k| e[k] / total * h[k][c]).sum();
        assert!((out.embedding[c] - z).abs() < 1e-14);
    }
}

#[test]
fn single_instance_bag() {
    let att = random_attention(4, 8, 1);
    let h = features(1, 4, 2);
    let out = att.pool(&h, 1);
    assert_eq!(out.weights, vec![1.0]);
    assert_eq!(out.embedding, h);
}

#[test]
fn identical_features_give_uniform_weights_and_z_equal_to_h() {
    let att = random_attention(5, 16, 3);
    let row = features(1, 5, 4);
    for k in [2, 3, 7, 16] {
        let h: Vec<f64> = row.iter().cycle().take(5 * k).copied().collect();
        let out = att.pool(&h, k);
        for a in &out.weights {
            assert_eq!(*a, 1.0 / k as f64);
        }
        for (z, r) in out.embedding.iter().zip(&row) {
            assert!((z - r).abs() < 1e-14);
        }
    }
}

#[test]
fn head_behaviour() {
    let head = ClassifierHead::<f64>::zeros(3);
    assert_eq!(softmax(&head.logits(&[1.0, -2.0, 0.5])), vec![0.5, 0.5]);
    for t in [-800.0, 0.0, 3.7, 900.0] {
        assert_eq!(softmax(&[t, t]), vec![0.5, 0.5]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let head = ClassifierHead {
        weights: (0..8).map(|_| rng.random_range(-1.0..1.0)).collect(),
        bias: vec![0.3, -0.2],
    };
    let z: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
    let l0 = 0.3 + (0..4).map(|i| head.weights[i] * z[i]).sum::<f64>();
    let l1 = -0.2 + (0..4).map(|i| head.weights[4 + i] * z[i]).sum::<f64>();
    let q1 = 1.0 / (1.0 + (l0 - l1).exp());
    let q = softmax(&head.logits(&z));
    assert!((q[1] - q1).abs() < 1e-12 && (q[0] - (1.0 - q1)).abs() < 1e-12);
}

#[test]
fn loss_examples() {
    let perfect = loss_components(&[[0.0f64, 1.0]], &[1], &[vec![0.2, 0.2, 0.2]], 3.0, AwAggregation::Mean);
    // the clamp caps q at 1 - 1e-7, so a perfect prediction costs -ln(1 - 1e-7) ≈ 1e-7
    assert_eq!(perfect.cross_entropy, -(1.0 - 1e-7f64).ln());
    assert_eq!(perfect.smoothness, 0.0);
    let crafted = loss_components(&[[0.5f64, 0.5]], &[0], &[vec![0.5, 0.0, 0.5]], 1.0, AwAggregation::Mean);
    assert_eq!(crafted.smoothness, 0.5);
    let no_reg = loss_components(&[[0.3f64, 0.7]], &[0], &[vec![0.5, 0.0, 0.5]], 0.0, AwAggregation::Mean);
    assert_eq!(no_reg.total, no_reg.cross_entropy);
}

#[test]
fn smoothness_depends_on_slice_order() {
    let ordered = [0.1f64, 0.2, 0.3, 0.4];
    let shuffled = [0.1f64, 0.3, 0.2, 0.4];
    assert!((attention_smoothness(&ordered) - 0.03).abs() < 1e-15);
    assert!((attention_smoothness(&shuffled) - 0.09).abs() < 1e-15);
}

fn tiny_model(seed: u64) -> MilModel<f64> {
    let cfg = ModelConfig {
        arch: ArchSpec { input_size: 12, stem_pool: 1, channels: vec![3, 4], feature_dim: 5 },
        attention_dim: 6,
    };
    MilModel::init(&cfg, seed).unwrap()
}

fn random_bag(k: usize, label: u8, seed: u64) -> Bag {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Bag::new("r", label, k, 12, (0..k * 144).map(|_| rng.random::<f32>()).collect()).unwrap()
}

#[test]
fn identical_slices_give_identical_feature_rows() {
    let model = tiny_model(1);
    let one = random_bag(1, 0, 9);
    let bag = Bag::new("d", 0, 2, 12, [one.data.clone(), one.data].concat()).unwrap();
    let fwd = model.forward(&bag).unwrap();
    assert_eq!(fwd.features[..5], fwd.features[5..]);
}

#[test]
fn model_level_permutation_equivariance() {
    let model = tiny_model(2);
    let bag = random_bag(5, 1, 3);
    let order = [3, 0, 4, 1, 2];
    let (q, a) = model.predict(&bag).unwrap();
    let fwd = model.forward(&bag.permuted(&order)).unwrap();
    for (i, &k) in order.iter().enumerate() {
        assert!((fwd.attention.weights[i] - a[k]).abs() < 1e-12);
    }
    assert!((fwd.probs[0] - q[0]).abs() < 1e-9 && (fwd.probs[1] - q[1]).abs() < 1e-9);
}

#[test]
fn zero_lambda_gradient_equals_plain_path() {
    let model = tiny_model(4);
    let b0 = random_bag(3, 0, 5);
    let b1 = random_bag(4, 1, 6);
    let (_, with_reg_path) = model.loss_and_gradient(&[&b0, &b1], 0.0, AwAggregation::Mean).unwrap();
    // plain attention-MIL: cross-entropy gradient only, no smoothness term at all
    let mut plain = model.zeros_like();
    for b in [&b0, &b1] {
        let fwd = model.forward(b).unwrap();
        let y = b.label as usize;
        let dl = std::array::from_fn(|c| (fwd.probs[c] - if c == y { 1.0 } else { 0.0 }) / 2.0);
        model.backward(&fwd, dl, None, &mut plain);
    }
    assert_eq!(with_reg_path, plain);
}

#[test]
fn uniform_weights_are_stationary_for_the_smoothness_term() {
    // identical slices make attention uniform for any parameters; the penalty is
    // then at its minimum, so its finite-difference derivative vanishes
    let model = tiny_model(5);
    let one = random_bag(1, 0, 11);
    let bag = Bag::new("u", 1, 4, 12, one.data.repeat(4)).unwrap();
    let aw = |m: &MilModel<f64>| m.loss(&[&bag], 1.0, AwAggregation::Mean).unwrap().smoothness;
    assert_eq!(aw(&model), 0.0);
    let mut probe = model.clone();
    let n = probe.tensors_mut().len();
    for t in 0..n {
        let len = probe.tensors_mut()[t].len();
        for i in (0..len).step_by(3) {
            let orig = probe.tensors_mut()[t][i];
            probe.tensors_mut()[t][i] = orig + 1e-5;
            let up = aw(&probe);
            probe.tensors_mut()[t][i] = orig - 1e-5;
            let down = aw(&probe);
            probe.tensors_mut()[t][i] = orig;
            assert!(((up - down) / 2e-5).abs() < 1e-12);
        }
    }
}

#[test]
fn adam_zero_gradient_and_quadratic() {
    let mut model = tiny_model(6);
    let start = model.clone();
    let zero = model.zeros_like();
    let mut opt = Adam::new(&model, 0.01, AdamParams::default());
    opt.step(&mut model, &zero);
    assert_eq!(model, start);

    // minimise (b - 3)² over one head bias
    let mut opt = Adam::new(&model, 0.05, AdamParams::default());
    let mut prev = f64::INFINITY;
    for _ in 0..10 {
        let b = model.head.bias[0];
        let loss = (b - 3.0).powi(2);
        assert!(loss < prev);
        prev = loss;
        let mut g = model.zeros_like();
        g.head.bias[0] = 2.0 * (b - 3.0);
        opt.step(&mut model, &g);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_sum_to_one_and_are_positive(k in 1usize..24, d in 1usize..8, seed in any::<u64>()) {
        let att = random_attention(d, 16, seed);
        let out = att.pool(&features(k, d, seed ^ 1), k);
        let sum: f64 = out.weights.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
        prop_assert!(out.weights.iter().all(|&a| a > 0.0));
    }

    #[test]
    fn softmax_ignores_a_common_shift(k in 1usize..20, shift in -1e3f64..1e3, seed in any::<u64>()) {
        let s = features(k, 1, seed);
        let shifted: Vec<f64> = s.iter().map(|v| v + shift).collect();
        for (a, b) in softmax(&s).iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn pooling_is_permutation_equivariant(k in 2usize..16, seed in any::<u64>()) {
        let d = 6;
        let att = random_attention(d, 12, seed);
        let h = features(k, d, seed ^ 7);
        let mut order: Vec<usize> = (0..k).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let permuted: Vec<f64> = order.iter().flat_map(|&i| h[i * d..(i + 1) * d].to_vec()).collect();
        let a = att.pool(&h, k);
        let b = att.pool(&permuted, k);
        for (i, &src) in order.iter().enumerate() {
            prop_assert!((b.weights[i] - a.weights[src]).abs() <= 1e-12);
        }
        for (x, y) in a.embedding.iter().zip(&b.embedding) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }
}
