//! Software rendering: multi-label raycasting, masked MIP, label outlines and
//! 2D overlay composition, with PNG output.

pub mod camera;
pub mod contour;
pub mod mip;
pub mod overlay;
pub mod png;
pub mod raycast;
pub mod tf;
pub mod view;

use thiserror::Error;

pub use camera::{Camera, ClipBox, Projection};
pub use contour::{mask_contours, Polyline};
pub use mip::mip_project;
pub use overlay::{compose_overlay, Colormap, HeatmapStyle, LESION_OUTLINE, LUNG_OUTLINE};
pub use png::{decode_png, encode_png};
pub use raycast::{raycast, LabelStyle, RenderSettings, Scene};
pub use view::{compose_slice, heatmap_image, render_scene, SliceView};
pub use tf::{builtin_preset, builtin_tf, load_presets, save_preset, TfPreset, TransferFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("invalid transfer function: {0}")]
    InvalidTransferFunction(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid clip box: {0}")]
    InvalidClip(String),
    #[error("invalid render settings: {0}")]
    InvalidSettings(String),
    #[error("label volume does not share the scalar volume's grid")]
    GeometryMismatch,
    #[error("slab centred at {center} ± {half_width} lies outside an axis of {len} slices")]
    SlabOutside { center: usize, half_width: usize, len: usize },
    #[error("overlay is {found:?} but the image is {expected:?}")]
    DimensionMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("preset: {0}")]
    Preset(String),
    #[error("png: {0}")]
    Png(String),
}
