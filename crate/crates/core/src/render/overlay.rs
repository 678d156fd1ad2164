//! Heatmap and outline composition over a 2D slice image.

use serde::{Deserialize, Serialize};

use super::contour::Polyline;
use super::RenderError;
use crate::volume::{PixelFormat, Slice2, SliceImage};

pub const LUNG_OUTLINE: [u8; 4] = [0, 255, 0, 255];
pub const LESION_OUTLINE: [u8; 4] = [255, 0, 0, 255];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Colormap {
    /// Linear ramp from blue (0) to red (1).
    #[default]
    BlueRed,
    /// Black → red → yellow → white.
    Hot,
}

impl Colormap {
    pub fn rgb(self, v: f64) -> [f64; 3] {
        let v = v.clamp(0.0, 1.0);
        match self {
            Colormap::BlueRed => [255.0 * v, 0.0, 255.0 * (1.0 - v)],
            Colormap::Hot => [
                255.0 * (3.0 * v).min(1.0),
                255.0 * (3.0 * v - 1.0).clamp(0.0, 1.0),
                255.0 * (3.0 * v - 2.0).clamp(0.0, 1.0),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapStyle {
    pub alpha: f64,
    /// Values at or below this stay transparent.
    pub threshold: f64,
    pub colormap: Colormap,
}

impl Default for HeatmapStyle {
    fn default() -> Self {
        Self { alpha: 0.4, threshold: 0.2, colormap: Colormap::BlueRed }
    }
}

/// Blend the heatmap (values in [0, 1]) over `base`, then draw each outline set
/// in its colour, 1 px wide.
pub fn compose_overlay(
    base: &SliceImage,
    outlines: &[(&[Polyline], [u8; 4])],
    heatmap: Option<(&Slice2<f32>, HeatmapStyle)>,
) -> Result<SliceImage, RenderError> {
    let mut img = base.to_rgba();
    let (w, h) = (img.width, img.height);
    if let Some((map, style)) = heatmap {
        if map.width != w || map.height != h {
            return Err(RenderError::DimensionMismatch { expected: (w, h), found: (map.width, map.height) });
        }
        if !(0.0..=1.0).contains(&style.alpha) {
            return Err(RenderError::InvalidSettings(format!("heatmap alpha {} outside [0, 1]", style.alpha)));
        }
        for (i, &v) in map.data.iter().enumerate() {
            let v = v as f64;
            if v <= style.threshold || style.alpha == 0.0 {
                continue;
            }
            let rgb = style.colormap.rgb(v);
            for c in 0..3 {
                let px = &mut img.pixels[4 * i + c];
                *px = ((1.0 - style.alpha) * *px as f64 + style.alpha * rgb[c]).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    for (loops, color) in outlines {
        for poly in loops.iter() {
            for seg in poly.windows(2) {
                draw_segment(&mut img, seg[0], seg[1], *color);
            }
        }
    }
    Ok(img)
}

fn draw_segment(img: &mut SliceImage, a: [f64; 2], b: [f64; 2], color: [u8; 4]) {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let steps = (len * 2.0).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = (a[0] + (b[0] - a[0]) * t + 0.5).floor();
        let y = (a[1] + (b[1] - a[1]) * t + 0.5).floor();
        if x < 0.0 || y < 0.0 || x >= img.width as f64 || y >= img.height as f64 {
            continue;
        }
        let i = 4 * (x as usize + y as usize * img.width);
        img.pixels[i..i + 4].copy_from_slice(&color);
    }
    debug_assert_eq!(img.format, PixelFormat::Rgba);
}
