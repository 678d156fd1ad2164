//! Classical fallback segmenters, used when a case arrives without external
//! lung or lesion masks. Results are tagged as not clinically validated.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;
use crate::volume::{Geometry, LabelVolume, Volume, VolumeError, LABEL_CONTEXT, LABEL_LESION, LABEL_LUNG};

pub const FALLBACK_NOTICE: &str = "fallback segmentation - not clinically validated";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentError {
    #[error("no lung-candidate component found")]
    NoLungFound,
    #[error("invalid segmenter config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub air_threshold_hu: f64,
    pub lesion_band_hu: (f64, f64),
    pub min_component_voxels: usize,
    pub closing_radius: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self { air_threshold_hu: -320.0, lesion_band_hu: (-700.0, -250.0), min_component_voxels: 50, closing_radius: 2 }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<(), SegmentError> {
        let in_range = |v: f64| (-1024.0..=3071.0).contains(&v);
        let (lo, hi) = self.lesion_band_hu;
        if !(lo < hi) {
            return Err(SegmentError::InvalidConfig(format!("lesion band ({lo}, {hi}) is empty")));
        }
        if ![self.air_threshold_hu, lo, hi].into_iter().all(in_range) {
            return Err(SegmentError::InvalidConfig("thresholds must lie within [-1024, 3071] HU".into()));
        }
        Ok(())
    }
}

/// 6-connected components of `mask`. Returns per-voxel component ids (0 = none,
/// ids start at 1 in scan order) and the size of each component.
pub fn connected_components(geometry: &Geometry, mask: &[bool]) -> (Vec<u32>, Vec<usize>) {
    let [nx, ny, nz] = geometry.dims;
    let mut ids = vec![0u32; mask.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for seed in 0..mask.len() {
        if !mask[seed] || ids[seed] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        let mut size = 0usize;
        ids[seed] = id;
        stack.push(seed);
        while let Some(i) = stack.pop() {
            size += 1;
            let [x, y, z] = geometry.coords(i);
            let mut visit = |j: usize| {
                if mask[j] && ids[j] == 0 {
                    ids[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < nx {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - nx);
            }
            if y + 1 < ny {
                visit(i + nx);
            }
            if z > 0 {
                visit(i - nx * ny);
            }
            if z + 1 < nz {
                visit(i + nx * ny);
            }
        }
        sizes.push(size);
    }
    (ids, sizes)
}

fn ball_offsets(radius: usize) -> Vec<[isize; 3]> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy + dz * dz <= r * r {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

fn dilate(geometry: &Geometry, mask: &[bool], offsets: &[[isize; 3]]) -> Vec<bool> {
    let dims = geometry.dims.map(|d| d as isize);
    let mut out = vec![false; mask.len()];
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let c = geometry.coords(i).map(|v| v as isize);
        for o in offsets {
            let p = [c[0] + o[0], c[1] + o[1], c[2] + o[2]];
            if (0..3).all(|a| p[a] >= 0 && p[a] < dims[a]) {
                out[geometry.index(p[0] as usize, p[1] as usize, p[2] as usize)] = true;
            }
        }
    }
    out
}

fn erode(geometry: &Geometry, mask: &[bool], offsets: &[[isize; 3]]) -> Vec<bool> {
    let dims = geometry.dims.map(|d| d as isize);
    let mut out = vec![false; mask.len()];
    for (i, o) in out.iter_mut().enumerate() {
        if !mask[i] {
            continue;
        }
        let c = geometry.coords(i).map(|v| v as isize);
        *o = offsets.iter().all(|off| {
            let p = [c[0] + off[0], c[1] + off[1], c[2] + off[2]];
            (0..3).all(|a| p[a] >= 0 && p[a] < dims[a]) && mask[geometry.index(p[0] as usize, p[1] as usize, p[2] as usize)]
        });
    }
    out
}

/// Morphological closing with a ball of the given radius.
///
/// Runs on a copy padded by `radius` background voxels on every side, which
/// makes the result equal to closing in unbounded space: nothing near the grid
/// border gets filled just because the border cut the dilation short.
pub fn close(geometry: &Geometry, mask: &[bool], radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    let padded = Geometry { dims: geometry.dims.map(|d| d + 2 * radius), ..*geometry };
    let mut big = vec![false; padded.len()];
    for (i, &m) in mask.iter().enumerate() {
        let [x, y, z] = geometry.coords(i);
        big[padded.index(x + radius, y + radius, z + radius)] = m;
    }
    let offsets = ball_offsets(radius);
    let closed = erode(&padded, &dilate(&padded, &big, &offsets), &offsets);
    (0..mask.len())
        .map(|i| {
            let [x, y, z] = geometry.coords(i);
            closed[padded.index(x + radius, y + radius, z + radius)]
        })
        .collect()
}

/// Voxels below the air threshold. Exposed for the monotonicity property.
pub fn air_candidates<T: Real>(vol: &Volume<T>, threshold_hu: f64) -> Vec<bool> {
    vol.data().iter().map(|v| v.as_f64() < threshold_hu).collect()
}

/// Threshold, drop exterior air touching the x/y boundary, keep the two largest
/// remaining components and close them.
pub fn segment_lungs<T: Real>(vol: &Volume<T>, cfg: &SegmenterConfig) -> Result<LabelVolume, SegmentError> {
    cfg.validate()?;
    let g = *vol.geometry();
    let [nx, ny, _] = g.dims;
    let candidates = air_candidates(vol, cfg.air_threshold_hu);
    let (ids, sizes) = connected_components(&g, &candidates);

    let mut touches_border = vec![false; sizes.len() + 1];
    for (i, &id) in ids.iter().enumerate() {
        if id != 0 {
            let [x, y, _] = g.coords(i);
            if x == 0 || y == 0 || x + 1 == nx || y + 1 == ny {
                touches_border[id as usize] = true;
            }
        }
    }
    let mut interior: Vec<(usize, u32)> = sizes
        .iter()
        .enumerate()
        .map(|(k, &s)| (s, k as u32 + 1))
        .filter(|&(_, id)| !touches_border[id as usize])
        .collect();
    if interior.is_empty() {
        return Err(SegmentError::NoLungFound);
    }
    // largest first; ties broken by lower id for determinism
    interior.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let keep: Vec<u32> = interior.iter().take(2).map(|&(_, id)| id).collect();
    let mask: Vec<bool> = ids.iter().map(|id| keep.contains(id)).collect();
    let closed = close(&g, &mask, cfg.closing_radius);
    Ok(LabelVolume::new(g, closed.into_iter().map(|m| if m { LABEL_LUNG } else { LABEL_CONTEXT }).collect())?)
}

/// Lesion-band voxels inside the lung mask, minus components below the size
/// threshold. Returns a composite map: lesion (2) overrides lung (1).
pub fn localize_lesions<T: Real>(
    vol: &Volume<T>,
    lung_mask: &LabelVolume,
    cfg: &SegmenterConfig,
) -> Result<LabelVolume, SegmentError> {
    cfg.validate()?;
    let g = *vol.geometry();
    if !g.same_grid(lung_mask.geometry()) {
        return Err(VolumeError::GeometryMismatch("lung mask does not match the scalar volume".into()).into());
    }
    let (lo, hi) = cfg.lesion_band_hu;
    let band: Vec<bool> = vol
        .data()
        .iter()
        .zip(lung_mask.labels())
        .map(|(v, &l)| {
            let v = v.as_f64();
            l != LABEL_CONTEXT && v >= lo && v <= hi
        })
        .collect();
    let (ids, sizes) = connected_components(&g, &band);
    let labels = ids
        .iter()
        .zip(lung_mask.labels())
        .map(|(&id, &l)| {
            if id != 0 && sizes[id as usize - 1] >= cfg.min_component_voxels {
                LABEL_LESION
            } else if l != LABEL_CONTEXT {
                LABEL_LUNG
            } else {
                LABEL_CONTEXT
            }
        })
        .collect();
    Ok(LabelVolume::new(g, labels)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(d: [usize; 3]) -> Geometry {
        Geometry::new(d, [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn components_six_connected() {
        let g = geom([3, 3, 1]);
        // diagonal neighbours are separate components under 6-connectivity
        let mask = vec![true, false, false, false, true, false, false, false, true];
        let (ids, sizes) = connected_components(&g, &mask);
        assert_eq!(sizes, vec![1, 1, 1]);
        assert_eq!(ids[0], 1);
        assert_eq!(ids[4], 2);
        assert_eq!(ids[8], 3);
    }

    #[test]
    fn closing_fills_small_gap_and_is_extensive() {
        // two 4×5×5 bars split by a one-voxel gap at x = 4
        let g = geom([9, 5, 5]);
        let mask: Vec<bool> = (0..g.len()).map(|i| g.coords(i)[0] != 4).collect();
        let closed = close(&g, &mask, 1);
        assert!(closed.iter().zip(&mask).all(|(&c, &m)| c || !m));
        // the gap fills wherever the radius-1 ball fits, i.e. away from the bar surface
        for i in 0..g.len() {
            let [x, y, z] = g.coords(i);
            if x == 4 {
                assert_eq!(closed[i], (1..=3).contains(&y) && (1..=3).contains(&z), "{x} {y} {z}");
            }
        }
        let sparse: Vec<bool> = (0..g.len()).map(|i| i == 13).collect();
        assert_eq!(close(&g, &sparse, 2), sparse);
    }

    #[test]
    fn closing_does_not_grow_towards_the_grid_border() {
        // a ball one voxel away from the z faces: the border must not act as foreground
        let g = geom([11, 11, 7]);
        let mask: Vec<bool> = (0..g.len())
            .map(|i| {
                let [x, y, z] = g.coords(i).map(|v| v as f64);
                (x - 5.0).powi(2) + (y - 5.0).powi(2) + (z - 3.0).powi(2) <= 2.5f64.powi(2)
            })
            .collect();
        assert_eq!(close(&g, &mask, 2), mask);
    }

    #[test]
    fn uniform_body_has_no_lungs() {
        let v = Volume::filled(geom([10, 10, 4]), 40.0f64).unwrap();
        assert_eq!(segment_lungs(&v, &SegmenterConfig::default()), Err(SegmentError::NoLungFound));
    }

    #[test]
    fn exterior_air_is_ignored() {
        // only air, all of it touching the boundary
        let v = Volume::filled(geom([6, 6, 3]), -1000.0f64).unwrap();
        assert_eq!(segment_lungs(&v, &SegmenterConfig::default()), Err(SegmentError::NoLungFound));
    }

    #[test]
    fn small_lesion_blob_dropped() {
        let g = geom([10, 10, 10]);
        let lung = LabelVolume::from_fn(g, |_, _, _| LABEL_LUNG).unwrap();
        // 20-voxel blob in band
        let vol = Volume::from_fn(g, |x, y, z| if x < 5 && y < 2 && z < 2 { -450.0 } else { -850.0 }).unwrap();
        let cfg = SegmenterConfig::default();
        let out = localize_lesions(&vol, &lung, &cfg).unwrap();
        assert_eq!(out.count(LABEL_LESION), 0);
        let cfg = SegmenterConfig { min_component_voxels: 20, ..cfg };
        let out = localize_lesions(&vol, &lung, &cfg).unwrap();
        assert_eq!(out.count(LABEL_LESION), 20);
    }

    #[test]
    fn config_validation() {
        let bad = SegmenterConfig { lesion_band_hu: (-200.0, -300.0), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SegmenterConfig { air_threshold_hu: -5000.0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(SegmenterConfig::default().validate().is_ok());
    }
}
