//! Volume and slice data model.
//!
//! Voxel data is stored x-fastest: `index = x + nx * (y + ny * z)`.
//! x runs patient left-right, y anterior-posterior and z inferior-superior,
//! so axial slices are (x, y) planes.

mod preprocess;
mod resample;
mod window;

pub use preprocess::{
    normalize_hu, prepare_classifier_input, prepare_with_size, resize_bilinear, ClassifierInput, PreprocessGeometry,
    CLASSIFIER_INPUT_SIZE, CLIP_HI_HU, CLIP_LO_HU,
};
pub use resample::ZResample;
pub use window::{apply_window_level, PixelFormat, SliceImage, WindowLevel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("invalid dimensions {0:?}: every axis needs at least one voxel")]
    InvalidDims([usize; 3]),
    #[error("invalid spacing {0:?}: every axis must be finite and positive")]
    InvalidSpacing([f64; 3]),
    #[error("data length {actual} does not match dims product {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite intensity at voxel {0}")]
    NonFinite(usize),
    #[error("label value {value} at voxel {index} is outside {{0, 1, 2}}")]
    InvalidLabel { index: usize, value: u8 },
    #[error("slice index {index} out of range for {axis:?} axis of length {len}")]
    SliceOutOfRange { axis: Axis, index: usize, len: usize },
    #[error("label {0} is absent from the volume")]
    EmptyRegion(u8),
    #[error("target spacing must be positive, got {0}")]
    InvalidTargetSpacing(f64),
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("window lower bound {lo} must be below upper bound {hi}")]
    InvalidWindow { lo: f64, hi: f64 },
}

pub type Result<T> = std::result::Result<T, VolumeError>;

/// Grid geometry shared by scalar and label volumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    /// Millimetres per voxel.
    pub spacing: [f64; 3],
    /// World position (mm) of voxel (0, 0, 0).
    pub origin: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformDirection {
    VoxelToWorld,
    WorldToVoxel,
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::InvalidDims(dims));
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(VolumeError::InvalidSpacing(spacing));
        }
        Ok(Self { dims, spacing, origin })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    pub fn voxel_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| self.origin[i] + p[i] * self.spacing[i])
    }

    pub fn world_to_voxel(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| (p[i] - self.origin[i]) / self.spacing[i])
    }

    pub fn transform(&self, p: [f64; 3], direction: TransformDirection) -> [f64; 3] {
        match direction {
            TransformDirection::VoxelToWorld => self.voxel_to_world(p),
            TransformDirection::WorldToVoxel => self.world_to_voxel(p),
        }
    }

    /// True when dims match and spacing agrees to a relative 1e-4.
    pub fn same_grid(&self, other: &Geometry) -> bool {
        self.dims == other.dims
            && self
                .spacing
                .iter()
                .zip(other.spacing.iter())
                .all(|(a, b)| (a - b).abs() <= 1e-4 * a.abs().max(b.abs()))
    }

    pub fn axis_len(&self, axis: Axis) -> usize {
        self.dims[axis.normal()]
    }
}

/// Orthogonal viewing planes. The axis names the plane, not its normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Axial,
    Coronal,
    Sagittal,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Axial, Axis::Coronal, Axis::Sagittal];

    /// Index of the volume axis normal to this plane.
    pub fn normal(self) -> usize {
        match self {
            Axis::Axial => 2,
            Axis::Coronal => 1,
            Axis::Sagittal => 0,
        }
    }

    /// (column axis, row axis) of the in-plane image.
    pub fn in_plane(self) -> (usize, usize) {
        match self {
            Axis::Axial => (0, 1),
            Axis::Coronal => (0, 2),
            Axis::Sagittal => (1, 2),
        }
    }

    pub fn parse(s: &str) -> Option<Axis> {
        match s {
            "axial" => Some(Axis::Axial),
            "coronal" => Some(Axis::Coronal),
            "sagittal" => Some(Axis::Sagittal),
            _ => None,
        }
    }
}

/// Maps in-plane (column, row) plus the slice index back to voxel coordinates.
#[inline]
pub fn plane_to_voxel(axis: Axis, col: usize, row: usize, index: usize) -> [usize; 3] {
    match axis {
        Axis::Axial => [col, row, index],
        Axis::Coronal => [col, index, row],
        Axis::Sagittal => [index, col, row],
    }
}

/// A 2D array of values, row-major with `width` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
    /// (column spacing, row spacing) in mm.
    pub spacing: (f64, f64),
}

impl<T: Copy> Slice2<T> {
    #[inline]
    pub fn get(&self, col: usize, row: usize) -> T {
        self.data[col + row * self.width]
    }
}

/// A scalar CT volume in Hounsfield units.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    geometry: Geometry,
    data: Vec<T>,
}

impl<T: Real> Volume<T> {
    pub fn new(geometry: Geometry, data: Vec<T>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(VolumeError::LengthMismatch { expected: geometry.len(), actual: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        Ok(Self { geometry, data })
    }

    pub fn from_fn(geometry: Geometry, mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(geometry.len());
        for z in 0..geometry.dims[2] {
            for y in 0..geometry.dims[1] {
                for x in 0..geometry.dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(geometry, data)
    }

    pub fn filled(geometry: Geometry, value: T) -> Result<Self> {
        Self::new(geometry, vec![value; geometry.len()])
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.geometry.index(x, y, z)]
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Convert the element type, e.g. `f64` volumes down to `f32` for rendering.
    pub fn cast<U: Real>(&self) -> Volume<U> {
        Volume {
            geometry: self.geometry,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Copy one orthogonal plane without interpolation.
    pub fn extract_slice(&self, axis: Axis, index: usize) -> Result<Slice2<T>> {
        extract_plane(&self.geometry, &self.data, axis, index)
    }

    /// Replace data in place while keeping the geometry. Used by test fixtures
    /// and the preprocessing chain.
    pub fn map(&self, f: impl Fn(T) -> T) -> Volume<T> {
        Volume { geometry: self.geometry, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

pub(crate) fn extract_plane<T: Copy>(
    geometry: &Geometry,
    data: &[T],
    axis: Axis,
    index: usize,
) -> Result<Slice2<T>> {
    let len = geometry.axis_len(axis);
    if index >= len {
        return Err(VolumeError::SliceOutOfRange { axis, index, len });
    }
    let (cu, ru) = axis.in_plane();
    let width = geometry.dims[cu];
    let height = geometry.dims[ru];
    let mut out = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            let [x, y, z] = plane_to_voxel(axis, col, row, index);
            out.push(data[geometry.index(x, y, z)]);
        }
    }
    Ok(Slice2 { width, height, data: out, spacing: (geometry.spacing[cu], geometry.spacing[ru]) })
}

pub const LABEL_CONTEXT: u8 = 0;
pub const LABEL_LUNG: u8 = 1;
pub const LABEL_LESION: u8 = 2;

/// Co-registered segmentation labels: 0 context, 1 lung, 2 lesion.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    geometry: Geometry,
    labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(geometry: Geometry, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != geometry.len() {
            return Err(VolumeError::LengthMismatch { expected: geometry.len(), actual: labels.len() });
        }
        if let Some(index) = labels.iter().position(|&v| v > LABEL_LESION) {
            return Err(VolumeError::InvalidLabel { index, value: labels[index] });
        }
        Ok(Self { geometry, labels })
    }

    pub fn empty(geometry: Geometry) -> Self {
        Self { geometry, labels: vec![LABEL_CONTEXT; geometry.len()] }
    }

    pub fn from_fn(geometry: Geometry, mut f: impl FnMut(usize, usize, usize) -> u8) -> Result<Self> {
        let mut labels = Vec::with_capacity(geometry.len());
        for z in 0..geometry.dims[2] {
            for y in 0..geometry.dims[1] {
                for x in 0..geometry.dims[0] {
                    labels.push(f(x, y, z));
                }
            }
        }
        Self::new(geometry, labels)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<u8> {
        self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.geometry.index(x, y, z)]
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn extract_slice(&self, axis: Axis, index: usize) -> Result<Slice2<u8>> {
        extract_plane(&self.geometry, &self.labels, axis, index)
    }

    /// Tightest box around every voxel carrying `label`.
    pub fn bounding_box(&self, label: u8) -> Result<BoundingBox> {
        self.bounding_box_where(|l| l == label).ok_or(VolumeError::EmptyRegion(label))
    }

    pub(crate) fn bounding_box_where(&self, pred: impl Fn(u8) -> bool) -> Option<BoundingBox> {
        let mut min = [usize::MAX; 3];
        let mut max = [0usize; 3];
        let mut found = false;
        for (i, &l) in self.labels.iter().enumerate() {
            if pred(l) {
                found = true;
                let c = self.geometry.coords(i);
                for a in 0..3 {
                    min[a] = min[a].min(c[a]);
                    max[a] = max[a].max(c[a]);
                }
            }
        }
        found.then_some(BoundingBox { min, max })
    }

    /// Merge a lung mask and a lesion mask; lesion wins where both are set.
    pub fn compose(lung: &LabelVolume, lesion: Option<&LabelVolume>) -> Result<LabelVolume> {
        let mut labels: Vec<u8> =
            lung.labels.iter().map(|&l| if l != LABEL_CONTEXT { LABEL_LUNG } else { LABEL_CONTEXT }).collect();
        if let Some(lesion) = lesion {
            if !lung.geometry.same_grid(&lesion.geometry) {
                return Err(VolumeError::GeometryMismatch("lesion mask does not match lung mask".into()));
            }
            for (out, &l) in labels.iter_mut().zip(lesion.labels.iter()) {
                if l != LABEL_CONTEXT {
                    *out = LABEL_LESION;
                }
            }
        }
        LabelVolume::new(lung.geometry, labels)
    }

    pub fn with_geometry(&self, geometry: Geometry) -> Result<LabelVolume> {
        LabelVolume::new(geometry, self.labels.clone())
    }
}

/// Inclusive per-axis voxel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl BoundingBox {
    pub fn extent(&self, axis: usize) -> usize {
        self.max[axis] - self.min[axis] + 1
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

/// Tightest bounding box of `label` (1 = lung, 2 = lesion).
pub fn mask_bounding_box(mask: &LabelVolume, label: u8) -> Result<BoundingBox> {
    mask.bounding_box(label)
}
