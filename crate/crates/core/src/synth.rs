//! Synthetic chest phantoms with ground truth.
//!
//! Each case is a +40 HU body ellipsoid in -1000 HU air holding two textured
//! lung ellipsoids around -850 HU. Positive cases add one to four peripheral
//! ground-glass blobs (-450 ± 50 HU) spanning a contiguous z range. The
//! generator emits the scalar volume, the true masks and the label.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::mil::Bag;
use crate::volume::{prepare_with_size, Geometry, LabelVolume, Volume, LABEL_CONTEXT, LABEL_LESION, LABEL_LUNG};

pub const AIR_HU: f64 = -1000.0;
pub const BODY_HU: f64 = 40.0;
pub const LUNG_HU: f64 = -850.0;
pub const GGO_HU: f64 = -450.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub positive_fraction: f64,
    pub lung_texture_sd: f64,
    pub body_texture_sd: f64,
    /// Generate only the right lung. Used by segmentation tests.
    pub single_lung: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dims: [64, 64, 10],
            spacing: [5.0, 5.0, 2.0],
            positive_fraction: 0.5,
            lung_texture_sd: 20.0,
            body_texture_sd: 10.0,
            single_lung: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    /// Centre in voxel coordinates.
    pub center: [f64; 3],
    /// Semi-axes in voxels.
    pub radii: [f64; 3],
}

impl Ellipsoid {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2)).sum::<f64>() <= 1.0
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub id: String,
    pub label: u8,
    pub scalar: Volume<f64>,
    /// Lung tissue including lesions, label 1.
    pub lung_mask: LabelVolume,
    /// Lesion voxels, label 2.
    pub lesion_mask: LabelVolume,
    pub lungs: Vec<Ellipsoid>,
    pub blobs: Vec<Ellipsoid>,
}

impl SyntheticCase {
    /// Lung label 1 with lesions overriding as 2.
    pub fn composite_labels(&self) -> LabelVolume {
        LabelVolume::compose(&self.lung_mask, Some(&self.lesion_mask)).expect("generator masks share geometry")
    }

    /// Classifier bag built from the true lung mask.
    pub fn to_bag(&self, size: usize) -> Bag {
        let input = prepare_with_size(&self.scalar, &self.lung_mask, size).expect("phantoms always contain lung");
        Bag::from_input(&self.id, self.label, &input).expect("preprocessed values are finite")
    }
}

fn lung_ellipsoids(cfg: &SynthConfig) -> Vec<Ellipsoid> {
    let [nx, ny, nz] = cfg.dims.map(|d| d as f64);
    let c = [(nx - 1.0) / 2.0, (ny - 1.0) / 2.0, (nz - 1.0) / 2.0];
    let radii = [0.15 * nx, 0.26 * ny, 0.36 * nz];
    let right = Ellipsoid { center: [c[0] - 0.2 * nx, c[1], c[2]], radii };
    let left = Ellipsoid { center: [c[0] + 0.2 * nx, c[1], c[2]], radii };
    if cfg.single_lung {
        vec![right]
    } else {
        vec![right, left]
    }
}

/// Generate one case. `seed` fully determines the output.
pub fn generate_case(cfg: &SynthConfig, id: &str, seed: u64, positive: bool) -> SyntheticCase {
    let geometry = Geometry::new(cfg.dims, cfg.spacing, [0.0; 3]).expect("synth config has a valid geometry");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [nx, ny, nz] = cfg.dims.map(|d| d as f64);
    let body = Ellipsoid {
        center: [(nx - 1.0) / 2.0, (ny - 1.0) / 2.0, (nz - 1.0) / 2.0],
        radii: [0.46 * nx, 0.40 * ny, 2.0 * nz],
    };
    let lungs = lung_ellipsoids(cfg);

    let mut blobs = Vec::new();
    if positive {
        let count = rng.random_range(1..=4);
        for _ in 0..count {
            let lung = lungs[rng.random_range(0..lungs.len())];
            let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let reach = rng.random_range(0.45..0.7);
            let dz = rng.random_range(-0.4..0.4) * lung.radii[2];
            blobs.push(Ellipsoid {
                center: [
                    lung.center[0] + reach * lung.radii[0] * theta.cos(),
                    lung.center[1] + reach * lung.radii[1] * theta.sin(),
                    lung.center[2] + dz,
                ],
                radii: [rng.random_range(2.5..4.0), rng.random_range(2.5..4.0), rng.random_range(1.5..2.5)],
            });
        }
    }
    let blob_hu: Vec<f64> = blobs.iter().map(|_| GGO_HU + rng.random_range(-50.0..50.0)).collect();

    let lung_noise = Normal::new(0.0, cfg.lung_texture_sd.max(0.0)).unwrap();
    let body_noise = Normal::new(0.0, cfg.body_texture_sd.max(0.0)).unwrap();
    let lesion_noise = Normal::new(0.0, 15.0).unwrap();

    let n = geometry.len();
    let mut data = Vec::with_capacity(n);
    let mut lung_labels = Vec::with_capacity(n);
    let mut lesion_labels = Vec::with_capacity(n);
    for z in 0..cfg.dims[2] {
        for y in 0..cfg.dims[1] {
            for x in 0..cfg.dims[0] {
                let p = [x as f64, y as f64, z as f64];
                let in_lung = lungs.iter().any(|l| l.contains(p));
                let blob = if in_lung { blobs.iter().position(|b| b.contains(p)) } else { None };
                let v = if let Some(b) = blob {
                    blob_hu[b] + lesion_noise.sample(&mut rng)
                } else if in_lung {
                    LUNG_HU + lung_noise.sample(&mut rng)
                } else if body.contains(p) {
                    BODY_HU + body_noise.sample(&mut rng)
                } else {
                    AIR_HU
                };
                data.push(v);
                lung_labels.push(if in_lung { LABEL_LUNG } else { LABEL_CONTEXT });
                lesion_labels.push(if blob.is_some() { LABEL_LESION } else { LABEL_CONTEXT });
            }
        }
    }
    debug_assert!(!positive || lesion_labels.iter().any(|&l| l != 0));
    SyntheticCase {
        id: id.to_string(),
        label: u8::from(positive),
        scalar: Volume::new(geometry, data).expect("finite phantom values"),
        lung_mask: LabelVolume::new(geometry, lung_labels).expect("valid labels"),
        lesion_mask: LabelVolume::new(geometry, lesion_labels).expect("valid labels"),
        lungs,
        blobs,
    }
}

/// Number of positive cases for a dataset of `n`.
pub fn positive_count(n: usize, fraction: f64) -> usize {
    ((n as f64) * fraction.clamp(0.0, 1.0)).round() as usize
}

/// A dataset of `n_cases` phantoms with an exact positive/negative split.
pub fn generate_synthetic_dataset(n_cases: usize, seed: u64, cfg: &SynthConfig) -> Vec<SyntheticCase> {
    let n_pos = positive_count(n_cases, cfg.positive_fraction);
    let mut labels: Vec<bool> = (0..n_cases).map(|i| i < n_pos).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1abe1));
    labels
        .into_iter()
        .enumerate()
        .map(|(i, positive)| {
            let case_seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64);
            generate_case(cfg, &format!("synth-{i:04}"), case_seed, positive)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let cfg = SynthConfig::default();
        let a = generate_synthetic_dataset(4, 11, &cfg);
        let b = generate_synthetic_dataset(4, 11, &cfg);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.scalar, y.scalar);
            assert_eq!(x.lung_mask, y.lung_mask);
            assert_eq!(x.lesion_mask, y.lesion_mask);
            assert_eq!(x.label, y.label);
        }
    }

    #[test]
    fn ratio_is_exact() {
        let cfg = SynthConfig::default();
        let cases = generate_synthetic_dataset(10, 5, &cfg);
        assert_eq!(cases.iter().filter(|c| c.label == 1).count(), 5);
        let cfg = SynthConfig { positive_fraction: 0.3, ..cfg };
        let cases = generate_synthetic_dataset(10, 5, &cfg);
        assert_eq!(cases.iter().filter(|c| c.label == 1).count(), 3);
    }

    #[test]
    fn negatives_have_no_band_voxels_inside_lungs() {
        let cfg = SynthConfig::default();
        for c in generate_synthetic_dataset(6, 9, &cfg).iter().filter(|c| c.label == 0) {
            assert_eq!(c.lesion_mask.count(LABEL_LESION), 0);
            let in_band = c
                .scalar
                .data()
                .iter()
                .zip(c.lung_mask.labels())
                .filter(|(&v, &l)| l == LABEL_LUNG && (-700.0..=-250.0).contains(&v))
                .count();
            assert_eq!(in_band, 0);
        }
    }

    #[test]
    fn positives_have_lesions_inside_lungs() {
        let cfg = SynthConfig::default();
        for c in generate_synthetic_dataset(6, 9, &cfg).iter().filter(|c| c.label == 1) {
            assert!(c.lesion_mask.count(LABEL_LESION) > 0);
            for (l, s) in c.lesion_mask.labels().iter().zip(c.lung_mask.labels()) {
                if *l == LABEL_LESION {
                    assert_eq!(*s, LABEL_LUNG);
                }
            }
        }
    }
}
