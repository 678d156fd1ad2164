//! Composed 2D views: a window/level slice (or thick-slab MIP) with optional
//! label outlines and heatmap overlay. Shared by the service and the CLI so both
//! produce the same bytes for the same request.

use serde::{Deserialize, Serialize};

use super::{compose_overlay, mask_contours, mip_project, raycast, Camera, HeatmapStyle, RenderError, Scene};
use super::{LESION_OUTLINE, LUNG_OUTLINE};
use crate::scalar::Real;
use crate::volume::{apply_window_level, Axis, LabelVolume, Slice2, SliceImage, Volume, WindowLevel};
use crate::volume::{LABEL_CONTEXT, LABEL_LESION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceView {
    pub axis: Axis,
    pub index: usize,
    pub window: WindowLevel,
    pub outlines: bool,
    pub heatmap: Option<HeatmapStyle>,
    /// Half-width of a lung-masked MIP slab; `None` shows the plain slice.
    pub mip_half_width: Option<usize>,
}

impl SliceView {
    pub fn plain(axis: Axis, index: usize) -> Self {
        Self { axis, index, window: WindowLevel::default(), outlines: false, heatmap: None, mip_half_width: None }
    }
}

/// Lung outline (any non-zero label, so lesions do not punch holes in it) and
/// lesion outline of one plane.
fn outline_sets(labels: &LabelVolume, axis: Axis, index: usize) -> Result<[Vec<super::Polyline>; 2], RenderError> {
    let plane = labels.extract_slice(axis, index).map_err(|e| RenderError::InvalidSettings(e.to_string()))?;
    let binary = |keep: fn(u8) -> bool| Slice2 {
        width: plane.width,
        height: plane.height,
        data: plane.data.iter().map(|&l| u8::from(keep(l))).collect(),
        spacing: plane.spacing,
    };
    Ok([
        mask_contours(&binary(|l| l != LABEL_CONTEXT), 1),
        mask_contours(&binary(|l| l == LABEL_LESION), 1),
    ])
}

/// Compose one 2D view. Outlines need `labels`, the overlay needs `heatmap`
/// (already resampled onto this plane); either is skipped when absent.
pub fn compose_slice<T: Real>(
    vol: &Volume<T>,
    labels: Option<&LabelVolume>,
    heatmap: Option<&Slice2<f32>>,
    view: &SliceView,
) -> Result<SliceImage, RenderError> {
    let len = vol.geometry().axis_len(view.axis);
    if view.index >= len {
        return Err(RenderError::InvalidSettings(format!(
            "slice index {} out of range for {:?} axis of length {len}",
            view.index, view.axis
        )));
    }
    let base = match view.mip_half_width {
        Some(hw) => mip_project(vol, labels, view.axis, view.index, hw)?,
        None => vol.extract_slice(view.axis, view.index).map_err(|e| RenderError::InvalidSettings(e.to_string()))?,
    };
    let base = apply_window_level(&base, &view.window);
    let outlines = match labels {
        Some(l) if view.outlines => Some(outline_sets(l, view.axis, view.index)?),
        _ => None,
    };
    let sets: Vec<(&[super::Polyline], [u8; 4])> = match &outlines {
        Some([lung, lesion]) => vec![(lung.as_slice(), LUNG_OUTLINE), (lesion.as_slice(), LESION_OUTLINE)],
        None => Vec::new(),
    };
    let overlay = match (heatmap, view.heatmap) {
        (Some(map), Some(style)) => Some((map, style)),
        _ => None,
    };
    compose_overlay(&base, &sets, overlay)
}

/// The heatmap alone, colour-mapped over black with full opacity.
pub fn heatmap_image(map: &Slice2<f32>, colormap: super::Colormap) -> Result<SliceImage, RenderError> {
    let black = SliceImage::new(map.width, map.height, crate::volume::PixelFormat::Gray, vec![0; map.width * map.height])
        .ok_or_else(|| RenderError::InvalidSettings("empty heatmap".into()))?;
    compose_overlay(&black, &[], Some((map, HeatmapStyle { alpha: 1.0, threshold: 0.0, colormap })))
}

/// Raycast a scene; without a camera the default frame of the volume is used.
pub fn render_scene<T: Real>(
    vol: &Volume<T>,
    labels: Option<&LabelVolume>,
    scene: &Scene,
) -> Result<SliceImage, RenderError> {
    let camera = scene.camera.unwrap_or_else(|| Camera::frame(vol.geometry()));
    raycast(vol, labels, &camera, &scene.clip, &scene.settings)
}
