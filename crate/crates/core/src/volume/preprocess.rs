//! Classifier preprocessing: 1mm z-resampling, lung masking, bounding-box crop,
//! square padding, HU clipping/normalization and bilinear resize.

use serde::{Deserialize, Serialize};

use super::{BoundingBox, Geometry, LabelVolume, Result, Volume, VolumeError, ZResample, LABEL_LUNG};
use crate::scalar::Real;

pub const CLIP_LO_HU: f64 = -1250.0;
pub const CLIP_HI_HU: f64 = 250.0;
pub const CLASSIFIER_INPUT_SIZE: usize = 224;
const TARGET_Z_SPACING: f64 = 1.0;

/// Clip to [-1250, 250] HU and map affinely onto [0, 1].
#[inline]
pub fn normalize_hu(v: f64) -> f64 {
    (v.clamp(CLIP_LO_HU, CLIP_HI_HU) - CLIP_LO_HU) / (CLIP_HI_HU - CLIP_LO_HU)
}

/// How a classifier input was cut out of its source volume. Enough to map
/// bag-space values (e.g. heatmaps) back onto the original voxel grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessGeometry {
    /// z spacing of the source volume before resampling.
    pub source_z_spacing: f64,
    /// Lung bounding box on the resampled grid.
    pub bbox: BoundingBox,
    /// Side of the padded square crop, in source pixels.
    pub side: usize,
    /// Padding added before the crop along x and y.
    pub pad: [usize; 2],
    /// Output in-plane size.
    pub size: usize,
}

impl PreprocessGeometry {
    pub fn slices(&self) -> usize {
        self.bbox.extent(2)
    }

    /// Sample a K×size×size bag-space field at a source voxel. Returns 0 outside
    /// the cropped region.
    pub fn sample(&self, field: &[f32], voxel: [usize; 3]) -> f32 {
        let zr = (voxel[2] as f64 * self.source_z_spacing / TARGET_Z_SPACING).round() as usize;
        if zr < self.bbox.min[2] || zr > self.bbox.max[2] {
            return 0.0;
        }
        let k = zr - self.bbox.min[2];
        let mut uv = [0.0f64; 2];
        for a in 0..2 {
            if voxel[a] < self.bbox.min[a] || voxel[a] > self.bbox.max[a] {
                return 0.0;
            }
            let c = (voxel[a] - self.bbox.min[a] + self.pad[a]) as f64;
            uv[a] = (c + 0.5) * self.size as f64 / self.side as f64 - 0.5;
        }
        let plane = &field[k * self.size * self.size..(k + 1) * self.size * self.size];
        bilinear_at(plane, self.size, self.size, uv[0], uv[1]) as f32
    }
}

/// A K×size×size tensor of values in [0, 1], slice-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierInput {
    pub slices: usize,
    pub size: usize,
    pub data: Vec<f32>,
    pub geometry: PreprocessGeometry,
}

#[inline]
fn bilinear_at<V: Copy + Into<f64>>(src: &[V], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let at = |xx: usize, yy: usize| -> f64 { src[xx + yy * w].into() };
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear resize with half-pixel-centred sampling and edge clamping.
pub fn resize_bilinear(src: &[f64], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let mut out = Vec::with_capacity(out_w * out_h);
    for j in 0..out_h {
        let y = (j as f64 + 0.5) * sy - 0.5;
        for i in 0..out_w {
            let x = (i as f64 + 0.5) * sx - 0.5;
            out.push(bilinear_at(src, w, h, x, y));
        }
    }
    out
}

pub fn prepare_classifier_input<T: Real>(vol: &Volume<T>, lung_mask: &LabelVolume) -> Result<ClassifierInput> {
    prepare_with_size(vol, lung_mask, CLASSIFIER_INPUT_SIZE)
}

pub fn prepare_with_size<T: Real>(vol: &Volume<T>, lung_mask: &LabelVolume, size: usize) -> Result<ClassifierInput> {
    if !vol.geometry().same_grid(lung_mask.geometry()) {
        return Err(VolumeError::GeometryMismatch(format!(
            "scalar dims {:?} vs mask dims {:?}",
            vol.dims(),
            lung_mask.dims()
        )));
    }
    let vol = vol.resample_z(TARGET_Z_SPACING)?;
    let mask = lung_mask.resample_z(TARGET_Z_SPACING)?;
    // lesions are lung tissue for cropping purposes
    let bbox = mask.bounding_box_where(|l| l != 0).ok_or(VolumeError::EmptyRegion(LABEL_LUNG))?;
    let g: &Geometry = vol.geometry();
    let wx = bbox.extent(0);
    let wy = bbox.extent(1);
    let side = wx.max(wy);
    let pad = [(side - wx) / 2, (side - wy) / 2];

    let k = bbox.extent(2);
    let mut data = Vec::with_capacity(k * size * size);
    let mut square = vec![0.0f64; side * side];
    for z in bbox.min[2]..=bbox.max[2] {
        square.iter_mut().for_each(|v| *v = 0.0);
        for y in bbox.min[1]..=bbox.max[1] {
            for x in bbox.min[0]..=bbox.max[0] {
                let idx = g.index(x, y, z);
                if mask.labels()[idx] == 0 {
                    continue;
                }
                let sx = x - bbox.min[0] + pad[0];
                let sy = y - bbox.min[1] + pad[1];
                square[sx + sy * side] = normalize_hu(vol.data()[idx].as_f64());
            }
        }
        let resized = if side == size { square.clone() } else { resize_bilinear(&square, side, side, size, size) };
        data.extend(resized.into_iter().map(|v| v as f32));
    }
    Ok(ClassifierInput {
        slices: k,
        size,
        data,
        geometry: PreprocessGeometry {
            source_z_spacing: lung_mask.geometry().spacing[2],
            bbox,
            side,
            pad,
            size,
        },
    })
}
