//! Core of the chest-CT workbench.
//!
//! The numeric kernels are generic over [`Real`] (`f32` or `f64`); the
//! aliases below pin the precisions the rest of the workspace uses.

pub mod ingest;
pub mod measure;
pub mod mil;
pub mod pipeline;
pub mod render;
pub mod scalar;
pub mod segment;
pub mod synth;
pub mod volume;

pub use scalar::Real;
pub use volume::{Axis, BoundingBox, Geometry, LabelVolume, Slice2, SliceImage, WindowLevel};

/// HU volume in double precision, as produced by the NIfTI reader.
pub type ScalarVolume = volume::Volume<f64>;
/// Single-precision volume, used for rendering and compact datasets.
pub type ScalarVolumeF32 = volume::Volume<f32>;
/// Attention-MIL classifier trained and evaluated in double precision.
pub type MilModel = mil::MilModel<f64>;
