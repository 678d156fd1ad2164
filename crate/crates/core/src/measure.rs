//! Linear and volumetric measurements.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{Geometry, LabelVolume, LABEL_LESION, LABEL_LUNG};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("point {point:?} lies outside a volume of dims {dims:?}")]
    OutOfBounds { point: [f64; 3], dims: [usize; 3] },
    #[error("no lung tissue to relate lesions to")]
    ZeroDenominator,
}

/// Euclidean distance in mm between two voxel-space points.
pub fn linear_distance(p1: [f64; 3], p2: [f64; 3], spacing: [f64; 3]) -> f64 {
    (0..3).map(|a| ((p2[a] - p1[a]) * spacing[a]).powi(2)).sum::<f64>().sqrt()
}

/// Volume of every voxel carrying `label`, in mL.
pub fn region_volume(labels: &LabelVolume, label: u8) -> f64 {
    labels.count(label) as f64 * labels.geometry().voxel_volume_mm3() / 1000.0
}

/// What the lesion percentage is taken relative to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LesionDenominator {
    /// Lesions are lung tissue: `lesion / (lung + lesion)`.
    #[default]
    LungAndLesion,
    /// `lesion / lung`, with the lung label alone in the denominator.
    LungOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LesionStats {
    /// Voxels labelled lung (lesion voxels excluded).
    pub lung_ml: f64,
    pub lesion_ml: f64,
    pub pct: f64,
}

pub fn lesion_stats_from_volumes(lung_ml: f64, lesion_ml: f64, denom: LesionDenominator) -> Result<LesionStats, MeasureError> {
    let d = match denom {
        LesionDenominator::LungAndLesion => lung_ml + lesion_ml,
        LesionDenominator::LungOnly => lung_ml,
    };
    if d <= 0.0 {
        return Err(MeasureError::ZeroDenominator);
    }
    // lung-only ratios can exceed 100% when lesions outweigh healthy tissue
    let pct = 100.0 * lesion_ml / d;
    Ok(LesionStats { lung_ml, lesion_ml, pct })
}

pub fn lesion_stats(labels: &LabelVolume, denom: LesionDenominator) -> Result<LesionStats, MeasureError> {
    lesion_stats_from_volumes(region_volume(labels, LABEL_LUNG), region_volume(labels, LABEL_LESION), denom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasurementKind {
    Linear { p1: [f64; 3], p2: [f64; 3] },
    Volume { label: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    #[serde(flatten)]
    pub kind: MeasurementKind,
    /// mm for linear measurements, mL for volumes.
    pub value: f64,
    /// Where the labels came from, e.g. "mask file" or the fallback notice.
    pub provenance: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

fn check_point(g: &Geometry, p: [f64; 3]) -> Result<(), MeasureError> {
    let ok = (0..3).all(|a| p[a].is_finite() && p[a] >= 0.0 && p[a] <= (g.dims[a] - 1) as f64);
    if ok {
        Ok(())
    } else {
        Err(MeasureError::OutOfBounds { point: p, dims: g.dims })
    }
}

impl MeasurementRecord {
    pub fn linear(g: &Geometry, p1: [f64; 3], p2: [f64; 3], provenance: &str, timestamp: u64) -> Result<Self, MeasureError> {
        check_point(g, p1)?;
        check_point(g, p2)?;
        Ok(Self {
            kind: MeasurementKind::Linear { p1, p2 },
            value: linear_distance(p1, p2, g.spacing),
            provenance: provenance.to_string(),
            timestamp,
        })
    }

    pub fn volume(labels: &LabelVolume, label: u8, provenance: &str, timestamp: u64) -> Self {
        Self {
            kind: MeasurementKind::Volume { label },
            value: region_volume(labels, label),
            provenance: provenance.to_string(),
            timestamp,
        }
    }
}

pub fn now_unix() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs())
}
