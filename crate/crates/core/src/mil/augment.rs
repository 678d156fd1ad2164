//! Training-time augmentation. One random rotation and flip pair is drawn per
//! bag and applied identically to every slice, so the slice stack stays
//! spatially consistent.

use rand::Rng;

use super::Bag;

pub const MAX_ROTATION_DEG: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub angle_deg: f64,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self { angle_deg: 0.0, flip_horizontal: false, flip_vertical: false };

    /// Angle uniform in ±10°, each flip with probability one half.
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        Self {
            angle_deg: rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG),
            flip_horizontal: rng.random_bool(0.5),
            flip_vertical: rng.random_bool(0.5),
        }
    }
}

/// Per-pixel bilinear taps of one augmentation, shared by every slice of a bag.
#[derive(Debug, Clone)]
pub struct AugmentPlan {
    size: usize,
    /// Four source indices and weights per output pixel; zero-fill taps carry weight 0.
    taps: Vec<([u32; 4], [f32; 4])>,
}

impl AugmentPlan {
    /// Rotate about the slice centre (bilinear, zero fill), then flip.
    pub fn new(size: usize, p: &AugmentParams) -> Self {
        let n = size as f64;
        let c = (n - 1.0) / 2.0;
        let (sin, cos) = p.angle_deg.to_radians().sin_cos();
        // snap round-off so exact grid hits are not blended with the zero fill
        let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
        let mut taps = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let fx = if p.flip_horizontal { size - 1 - x } else { x };
                let fy = if p.flip_vertical { size - 1 - y } else { y };
                // inverse rotation of the output pixel back into the source
                let dx = fx as f64 - c;
                let dy = fy as f64 - c;
                let sx = snap(cos * dx + sin * dy + c);
                let sy = snap(-sin * dx + cos * dy + c);
                let (x0, y0) = (sx.floor(), sy.floor());
                let (tx, ty) = (sx - x0, sy - y0);
                let mut idx = [0u32; 4];
                let mut wt = [0f32; 4];
                let corners = [(x0, y0, (1.0 - tx) * (1.0 - ty)), (x0 + 1.0, y0, tx * (1.0 - ty)), (x0, y0 + 1.0, (1.0 - tx) * ty), (x0 + 1.0, y0 + 1.0, tx * ty)];
                for (j, &(xx, yy, w)) in corners.iter().enumerate() {
                    if xx >= 0.0 && yy >= 0.0 && xx <= n - 1.0 && yy <= n - 1.0 {
                        idx[j] = (yy as usize * size + xx as usize) as u32;
                        wt[j] = w as f32;
                    }
                }
                taps.push((idx, wt));
            }
        }
        Self { size, taps }
    }

    pub fn apply(&self, src: &[f32]) -> Vec<f32> {
        debug_assert_eq!(src.len(), self.size * self.size);
        self.taps
            .iter()
            .map(|(idx, wt)| idx.iter().zip(wt).map(|(&i, &w)| w * src[i as usize]).sum())
            .collect()
    }
}

pub fn augment_slice(src: &[f32], size: usize, p: &AugmentParams) -> Vec<f32> {
    AugmentPlan::new(size, p).apply(src)
}

/// Apply one draw of augmentation parameters to every slice of a bag.
pub fn augment_bag<R: Rng>(bag: &Bag, rng: &mut R) -> (Bag, AugmentParams) {
    let p = AugmentParams::sample(rng);
    (apply(bag, &p), p)
}

pub fn apply(bag: &Bag, p: &AugmentParams) -> Bag {
    let plan = AugmentPlan::new(bag.size, p);
    let data = (0..bag.slices).flat_map(|k| plan.apply(bag.slice(k))).collect();
    Bag { data, ..bag.clone() }
}
