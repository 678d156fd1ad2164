//! Emission–absorption raycaster over a scalar volume and its label map.
//!
//! Each label has its own transfer function and visibility. Scalars are sampled
//! trilinearly, labels by nearest neighbour, and samples are composited front
//! to back with opacity corrected for the step length.

use serde::{Deserialize, Serialize};

use super::camera::{Camera, ClipBox};
use super::tf::{builtin_tf, TransferFunction};
use super::RenderError;
use crate::scalar::Real;
use crate::volume::{LabelVolume, PixelFormat, SliceImage, Volume, LABEL_LUNG};

pub const EARLY_TERMINATION_ALPHA: f64 = 0.995;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStyle {
    pub visible: bool,
    pub tf: TransferFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    /// Styles for context (0), lung (1) and lesion (2).
    pub labels: [LabelStyle; 3],
    /// Draw the lung as a faint shell that brightens where the scalar gradient
    /// is steep, instead of through its transfer function.
    pub lung_outline: bool,
    pub width: usize,
    pub height: usize,
    pub background: [u8; 4],
    /// Sample spacing as a fraction of the smallest voxel spacing.
    pub step_factor: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            labels: [
                LabelStyle { visible: true, tf: builtin_tf("context-fat") },
                LabelStyle { visible: true, tf: builtin_tf("lung-air") },
                LabelStyle { visible: true, tf: builtin_tf("lesion-red") },
            ],
            lung_outline: false,
            width: 256,
            height: 256,
            background: [0, 0, 0, 255],
            step_factor: 0.5,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.width == 0 || self.height == 0 || self.width > 4096 || self.height > 4096 {
            return Err(RenderError::InvalidSettings(format!(
                "image size {}×{} must be within 1..=4096",
                self.width, self.height
            )));
        }
        if !(self.step_factor > 0.0 && self.step_factor.is_finite()) {
            return Err(RenderError::InvalidSettings("step factor must be positive".into()));
        }
        for style in &self.labels {
            style.tf.validate()?;
        }
        Ok(())
    }

    pub fn hide_all(mut self) -> Self {
        self.labels.iter_mut().for_each(|s| s.visible = false);
        self
    }
}

/// Everything one frame needs; also the request body of the render endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    #[serde(default)]
    pub settings: RenderSettings,
    pub camera: Option<Camera>,
    #[serde(default)]
    pub clip: ClipBox,
}

struct Sampler<'a, T> {
    vol: &'a Volume<T>,
    labels: Option<&'a LabelVolume>,
    /// Inclusive voxel-index range that interpolation may touch.
    lo: [usize; 3],
    hi: [usize; 3],
}

impl<T: Real> Sampler<'_, T> {
    #[inline]
    fn value(&self, x: usize, y: usize, z: usize) -> f64 {
        self.vol.get(x, y, z).as_f64()
    }

    fn scalar(&self, p: [f64; 3]) -> f64 {
        let mut i0 = [0usize; 3];
        let mut i1 = [0usize; 3];
        let mut f = [0.0f64; 3];
        for a in 0..3 {
            let c = p[a].clamp(self.lo[a] as f64, self.hi[a] as f64);
            let fl = c.floor();
            i0[a] = fl as usize;
            i1[a] = (i0[a] + 1).min(self.hi[a]);
            f[a] = c - fl;
        }
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(self.value(i0[0], i0[1], i0[2]), self.value(i1[0], i0[1], i0[2]), f[0]);
        let c10 = lerp(self.value(i0[0], i1[1], i0[2]), self.value(i1[0], i1[1], i0[2]), f[0]);
        let c01 = lerp(self.value(i0[0], i0[1], i1[2]), self.value(i1[0], i0[1], i1[2]), f[0]);
        let c11 = lerp(self.value(i0[0], i1[1], i1[2]), self.value(i1[0], i1[1], i1[2]), f[0]);
        lerp(lerp(c00, c10, f[1]), lerp(c01, c11, f[1]), f[2])
    }

    fn label(&self, p: [f64; 3]) -> u8 {
        let Some(labels) = self.labels else { return 0 };
        let idx: [usize; 3] = std::array::from_fn(|a| p[a].round().clamp(self.lo[a] as f64, self.hi[a] as f64) as usize);
        labels.get(idx[0], idx[1], idx[2])
    }

    /// Gradient magnitude in HU/mm by central differences.
    fn gradient(&self, p: [f64; 3], spacing: [f64; 3]) -> f64 {
        (0..3)
            .map(|a| {
                let mut up = p;
                let mut down = p;
                up[a] += 1.0;
                down[a] -= 1.0;
                ((self.scalar(up) - self.scalar(down)) / (2.0 * spacing[a])).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Ray–box intersection in voxel coordinates. Returns the entry/exit parameters.
fn intersect(o: [f64; 3], d: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < lo[a] || o[a] > hi[a] {
                return None;
            }
            continue;
        }
        let ta = (lo[a] - o[a]) / d[a];
        let tb = (hi[a] - o[a]) / d[a];
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t1 > t0.max(0.0)).then_some((t0.max(0.0), t1))
}

const OUTLINE_BASE_ALPHA: f64 = 0.02;
const OUTLINE_GRADIENT_HU_PER_MM: f64 = 150.0;

fn to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Render one RGBA frame. Rows are produced top to bottom in a fixed order,
/// so identical inputs give identical bytes.
pub fn raycast<T: Real>(
    vol: &Volume<T>,
    labels: Option<&LabelVolume>,
    camera: &Camera,
    clip: &ClipBox,
    settings: &RenderSettings,
) -> Result<SliceImage, RenderError> {
    settings.validate()?;
    camera.validate()?;
    clip.validate()?;
    let g = *vol.geometry();
    if let Some(l) = labels {
        if !l.geometry().same_grid(&g) {
            return Err(RenderError::GeometryMismatch);
        }
    }
    let (w, h) = (settings.width, settings.height);
    let bg = settings.background.map(|c| c as f64 / 255.0);
    let mut pixels = Vec::with_capacity(w * h * 4);
    let background_only = clip.is_degenerate() || settings.labels.iter().all(|s| !s.visible);

    let (lo, hi) = clip.voxel_bounds(&g);
    let sampler = Sampler {
        vol,
        labels,
        lo: std::array::from_fn(|a| lo[a].ceil().max(0.0) as usize),
        hi: std::array::from_fn(|a| (hi[a].floor() as usize).min(g.dims[a] - 1)),
    };
    let min_spacing = g.spacing.iter().copied().fold(f64::INFINITY, f64::min);
    let step = settings.step_factor * min_spacing;
    // alpha is defined per smallest-voxel length
    let exponent = step / min_spacing;

    for row in 0..h {
        for col in 0..w {
            let (mut color, mut acc) = ([0.0f64; 3], 0.0f64);
            if !background_only {
                let (o, d) = camera.ray(col, row, w, h);
                let ov: [f64; 3] = std::array::from_fn(|a| (o[a] - g.origin[a]) / g.spacing[a]);
                let dv: [f64; 3] = std::array::from_fn(|a| d[a] / g.spacing[a]);
                if let Some((t0, t1)) = intersect(ov, dv, lo, hi) {
                    let mut t = t0 + 0.5 * step;
                    while t < t1 {
                        let p: [f64; 3] = std::array::from_fn(|a| ov[a] + dv[a] * t);
                        t += step;
                        let label = sampler.label(p);
                        let style = &settings.labels[label as usize];
                        if !style.visible {
                            continue;
                        }
                        let rgba = if settings.lung_outline && label == LABEL_LUNG {
                            let boost = (sampler.gradient(p, g.spacing) / OUTLINE_GRADIENT_HU_PER_MM).min(1.0);
                            let a = (OUTLINE_BASE_ALPHA + (1.0 - OUTLINE_BASE_ALPHA) * 0.6 * boost) * style.tf.opacity_scale;
                            [1.0, 1.0, 1.0, a]
                        } else {
                            style.tf.eval(sampler.scalar(p))
                        };
                        let alpha = 1.0 - (1.0 - rgba[3]).powf(exponent);
                        let weight = (1.0 - acc) * alpha;
                        for c in 0..3 {
                            color[c] += weight * rgba[c];
                        }
                        acc += weight;
                        if acc >= EARLY_TERMINATION_ALPHA {
                            break;
                        }
                    }
                }
            }
            for c in 0..3 {
                pixels.push(to_byte(color[c] + (1.0 - acc) * bg[c]));
            }
            pixels.push(to_byte(acc + (1.0 - acc) * bg[3]));
        }
    }
    Ok(SliceImage::new(w, h, PixelFormat::Rgba, pixels).expect("buffer sized for RGBA"))
}
