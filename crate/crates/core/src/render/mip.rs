//! Thick-slab maximum intensity projection restricted to the lung mask.

use super::RenderError;
use crate::scalar::Real;
use crate::volume::{plane_to_voxel, Axis, LabelVolume, Slice2, Volume, LABEL_CONTEXT};

/// Per-pixel maximum over slices `center − half_width ..= center + half_width`
/// (clipped to the volume), counting only voxels inside the mask (any non-zero
/// label). Pixels with no masked voxel in the slab take the volume minimum.
/// Without a mask every voxel counts.
pub fn mip_project<T: Real>(
    vol: &Volume<T>,
    mask: Option<&LabelVolume>,
    axis: Axis,
    center: usize,
    half_width: usize,
) -> Result<Slice2<T>, RenderError> {
    let g = vol.geometry();
    if let Some(m) = mask {
        if !m.geometry().same_grid(g) {
            return Err(RenderError::GeometryMismatch);
        }
    }
    let n = g.axis_len(axis);
    let first = center.saturating_sub(half_width);
    let last = center.saturating_add(half_width).min(n - 1);
    if first >= n {
        return Err(RenderError::SlabOutside { center, half_width, len: n });
    }
    let (ca, ra) = axis.in_plane();
    let (w, h) = (g.dims[ca], g.dims[ra]);
    let floor = vol.min_max().0;
    let mut data = vec![floor; w * h];
    let mut seen = vec![false; w * h];
    for k in first..=last {
        for row in 0..h {
            for col in 0..w {
                let [x, y, z] = plane_to_voxel(axis, col, row, k);
                if mask.is_some_and(|m| m.get(x, y, z) == LABEL_CONTEXT) {
                    continue;
                }
                let v = vol.get(x, y, z);
                let i = col + row * w;
                if !seen[i] || v > data[i] {
                    data[i] = v;
                    seen[i] = true;
                }
            }
        }
    }
    Ok(Slice2 { width: w, height: h, data, spacing: (g.spacing[ca], g.spacing[ra]) })
}
