//! Analytic gradients against central finite differences.

use ctview_core::mil::{ArchSpec, AwAggregation, Bag, MilModel, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference steps, tried in order until the perturbation stays inside
/// one linear region of every ReLU and max-pool.
const STEPS: [f64; 4] = [1e-5, 1e-6, 1e-7, 1e-8];
const REL_TOL: f64 = 1e-4;
/// Gradient entries below this magnitude sit under the finite-difference
/// rounding noise (~eps·|loss|/step), so relative error is taken against it.
const NOISE_FLOOR: f64 = 1e-6;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        arch: ArchSpec { input_size: 12, stem_pool: 1, channels: vec![2, 3], feature_dim: 4 },
        attention_dim: 3,
    }
}

fn random_model(cfg: &ModelConfig, seed: u64) -> MilModel<f64> {
    let mut m = MilModel::<f64>::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    // non-zero biases so every code path carries gradient
    for t in m.tensors_mut() {
        if t.len() <= 4 {
            t.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        }
    }
    m
}

fn random_bag(size: usize, slices: usize, label: u8, rng: &mut ChaCha8Rng) -> Bag {
    let data = (0..slices * size * size).map(|_| rng.random::<f32>()).collect();
    Bag::new("g", label, slices, size, data).unwrap()
}

fn patterns(model: &MilModel<f64>, batch: &[&Bag]) -> Vec<Vec<u64>> {
    batch.iter().map(|b| model.forward(b).unwrap().activation_pattern()).collect()
}

fn central_difference(
    probe: &mut MilModel<f64>,
    batch: &[&Bag],
    lambda: f64,
    agg: AwAggregation,
    tensor: usize,
    index: usize,
    base: &[Vec<u64>],
) -> Option<f64> {
    let orig = probe.tensors_mut()[tensor][index];
    let eval = |x: f64, probe: &mut MilModel<f64>| {
        probe.tensors_mut()[tensor][index] = x;
        let loss = probe.loss(batch, lambda, agg).unwrap().total;
        let same = patterns(probe, batch) == base;
        probe.tensors_mut()[tensor][index] = orig;
        (loss, same)
    };
    for h in STEPS {
        let (up, up_same) = eval(orig + h, probe);
        let (down, down_same) = eval(orig - h, probe);
        if up_same && down_same {
            return Some((up - down) / (2.0 * h));
        }
    }
    None
}

struct Report {
    name: String,
    max_rel: f64,
    norm_rel: f64,
}

/// Compare every (or every `stride`-th) coordinate of every tensor.
fn check(model: &MilModel<f64>, batch: &[&Bag], lambda: f64, agg: AwAggregation, stride: usize) -> Vec<Report> {
    let (_, grads) = model.loss_and_gradient(batch, lambda, agg).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, t)| (n, t.to_vec())).collect();
    let mut probe = model.clone();
    let base_pattern = patterns(model, batch);
    let mut out = Vec::new();
    for (ti, (name, a)) in analytic.iter().enumerate() {
        let mut max_rel = 0.0f64;
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for i in (0..a.len()).step_by(stride) {
            let numeric = central_difference(&mut probe, batch, lambda, agg, ti, i, &base_pattern)
                .unwrap_or_else(|| panic!("{name}[{i}] sits on a kink at every step"));
            let err = (a[i] - numeric).abs();
            max_rel = max_rel.max(err / a[i].abs().max(numeric.abs()).max(NOISE_FLOOR));
            diff2 += err * err;
            a2 += a[i] * a[i];
            n2 += numeric * numeric;
        }
        let norm_rel = diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(NOISE_FLOOR);
        out.push(Report { name: name.clone(), max_rel, norm_rel });
    }
    out
}

fn assert_reports(reports: &[Report], context: &str) {
    for r in reports {
        assert!(
            r.max_rel <= REL_TOL && r.norm_rel <= REL_TOL,
            "{context} {}: max rel {:.3e}, norm rel {:.3e}",
            r.name,
            r.max_rel,
            r.norm_rel
        );
    }
}

#[test]
fn all_parameters_match_finite_differences_over_twenty_seeds() {
    let cfg = tiny_config();
    for seed in 0..20u64 {
        let model = random_model(&cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let b0 = random_bag(12, 3, 0, &mut rng);
        let b1 = random_bag(12, 4, 1, &mut rng);
        let reports = check(&model, &[&b0, &b1], 1.0, AwAggregation::Mean, 1);
        assert_reports(&reports, &format!("seed {seed}"));
    }
}

#[test]
fn smoothness_gradient_dominates_at_large_lambda() {
    let cfg = tiny_config();
    let model = random_model(&cfg, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let b0 = random_bag(12, 5, 1, &mut rng);
    for agg in [AwAggregation::Mean, AwAggregation::Sum] {
        assert_reports(&check(&model, &[&b0], 50.0, agg, 1), &format!("{agg:?}"));
    }
}

#[test]
fn default_backbone_sampled_coordinates() {
    let cfg = ModelConfig { attention_dim: 16, ..ModelConfig::toy() };
    let model = random_model(&cfg, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b0 = random_bag(224, 2, 1, &mut rng);
    let reports = check(&model, &[&b0], 1.0, AwAggregation::Mean, 97);
    assert_reports(&reports, "toy backbone");
}

