//! Grad-CAM saliency through the attention pooling.
//!
//! The positive-class logit is differentiated back through the head and the
//! attention pooling to each slice's last conv maps A (post-ReLU). Channel
//! weights are the spatial mean of that gradient; the map is
//! ReLU(Σ_c α_c A_c), upsampled to the input size and scaled by the largest
//! value in the whole bag so slices stay comparable.

use serde::{Deserialize, Serialize};

use super::model::MilModel;
use super::{Bag, MilError};
use crate::scalar::Real;
use crate::volume::resize_bilinear;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub p_neg: f64,
    pub p_pos: f64,
    pub attention: Vec<f64>,
    pub slices: usize,
    pub size: usize,
    /// `K × size × size` in [0, 1].
    #[serde(skip)]
    pub heatmap: Vec<f32>,
}

impl PredictionResult {
    pub fn heatmap_slice(&self, k: usize) -> &[f32] {
        let plane = self.size * self.size;
        &self.heatmap[k * plane..(k + 1) * plane]
    }
}

pub fn predict_with_heatmap<T: Real>(model: &MilModel<T>, bag: &Bag) -> Result<PredictionResult, MilError> {
    let fwd = model.forward(bag)?;
    let dh = model.backward_to_features(&fwd, [T::zero(), T::one()], None, None);
    let d = model.config.arch.feature_dim;
    let mut raw: Vec<Vec<f64>> = Vec::with_capacity(fwd.slices);
    let mut side = 0;
    for (k, cache) in fwd.caches.iter().enumerate() {
        side = cache.last_side;
        let plane = side * side;
        // ∂y/∂A_c is dh_c / plane at every position, so its spatial mean is the same
        let alpha: Vec<f64> = dh[k * d..(k + 1) * d].iter().map(|g| g.as_f64() / plane as f64).collect();
        let mut cam = vec![0.0f64; plane];
        for (c, &a) in alpha.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (v, m) in cam.iter_mut().zip(&cache.last_maps[c * plane..(c + 1) * plane]) {
                *v += a * m.as_f64();
            }
        }
        cam.iter_mut().for_each(|v| *v = v.max(0.0));
        raw.push(cam);
    }
    let peak = raw.iter().flatten().copied().fold(0.0f64, f64::max);
    let size = bag.size;
    let mut heatmap = Vec::with_capacity(fwd.slices * size * size);
    for cam in &raw {
        if peak > 0.0 {
            let up = resize_bilinear(cam, side, side, size, size);
            heatmap.extend(up.into_iter().map(|v| (v / peak).clamp(0.0, 1.0) as f32));
        } else {
            heatmap.extend(std::iter::repeat_n(0.0f32, size * size));
        }
    }
    Ok(PredictionResult {
        p_neg: fwd.probs[0].as_f64(),
        p_pos: fwd.probs[1].as_f64(),
        attention: fwd.attention.weights.iter().map(|a| a.as_f64()).collect(),
        slices: fwd.slices,
        size,
        heatmap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mil::ModelConfig;

    #[test]
    fn zero_input_with_zero_bias_gives_zero_heatmap() {
        let model = MilModel::<f64>::init(&ModelConfig::toy(), 3).unwrap();
        let bag = Bag::new("z", 0, 2, 224, vec![0.0; 2 * 224 * 224]).unwrap();
        let r = predict_with_heatmap(&model, &bag).unwrap();
        assert_eq!(r.heatmap.len(), 2 * 224 * 224);
        assert!(r.heatmap.iter().all(|&v| v == 0.0));
        assert!((r.p_neg + r.p_pos - 1.0).abs() < 1e-12);
    }

    #[test]
    fn heatmap_is_normalised() {
        let model = MilModel::<f64>::init(&ModelConfig::toy(), 3).unwrap();
        let data: Vec<f32> = (0..3 * 224 * 224).map(|i| ((i * 7919) % 1000) as f32 / 1000.0).collect();
        let bag = Bag::new("n", 1, 3, 224, data).unwrap();
        let r = predict_with_heatmap(&model, &bag).unwrap();
        let max = r.heatmap.iter().copied().fold(0.0f32, f32::max);
        assert!(r.heatmap.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(max == 0.0 || max > 0.9, "peak {max}");
    }
}
