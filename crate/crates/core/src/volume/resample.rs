//! Resampling along z. Scalars interpolate linearly, labels take the nearest slice.

use super::{Geometry, LabelVolume, Result, Volume, VolumeError};
use crate::scalar::Real;

pub trait ZResample: Sized {
    /// Resample to `target_sz` mm between slices. x and y are untouched.
    fn resample_z(&self, target_sz: f64) -> Result<Self>;
}

/// Output geometry plus the fractional source index of every output slice.
fn plan(geometry: &Geometry, target_sz: f64) -> Result<(Geometry, Vec<f64>)> {
    if !(target_sz.is_finite() && target_sz > 0.0) {
        return Err(VolumeError::InvalidTargetSpacing(target_sz));
    }
    let nz = geometry.dims[2];
    let sz = geometry.spacing[2];
    let extent = (nz - 1) as f64 * sz;
    // the epsilon keeps exact multiples (e.g. 8mm / 1mm) from losing a slice
    let n_out = (extent / target_sz + 1e-9).floor() as usize + 1;
    let positions = (0..n_out).map(|j| (j as f64 * target_sz / sz).min((nz - 1) as f64)).collect();
    let mut out = *geometry;
    out.dims[2] = n_out;
    out.spacing[2] = target_sz;
    Ok((out, positions))
}

fn same_spacing(geometry: &Geometry, target_sz: f64) -> bool {
    geometry.spacing[2] == target_sz
}

impl<T: Real> ZResample for Volume<T> {
    fn resample_z(&self, target_sz: f64) -> Result<Self> {
        let (out_geom, positions) = plan(self.geometry(), target_sz)?;
        if same_spacing(self.geometry(), target_sz) {
            return Ok(self.clone());
        }
        let plane = self.dims()[0] * self.dims()[1];
        let nz = self.dims()[2];
        let src = self.data();
        let mut data = Vec::with_capacity(plane * positions.len());
        for &p in &positions {
            let z0 = p.floor() as usize;
            let z1 = (z0 + 1).min(nz - 1);
            let f = T::lit(p - z0 as f64);
            let a = &src[z0 * plane..(z0 + 1) * plane];
            let b = &src[z1 * plane..(z1 + 1) * plane];
            data.extend(a.iter().zip(b).map(|(&a, &b)| (a + (b - a) * f).max(a.min(b)).min(a.max(b))));
        }
        Volume::new(out_geom, data)
    }
}

impl ZResample for LabelVolume {
    fn resample_z(&self, target_sz: f64) -> Result<Self> {
        let (out_geom, positions) = plan(self.geometry(), target_sz)?;
        if same_spacing(self.geometry(), target_sz) {
            return Ok(self.clone());
        }
        let plane = self.dims()[0] * self.dims()[1];
        let src = self.labels();
        let mut labels = Vec::with_capacity(plane * positions.len());
        for &p in &positions {
            let z = p.round() as usize;
            labels.extend_from_slice(&src[z * plane..(z + 1) * plane]);
        }
        LabelVolume::new(out_geom, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_ramp_is_exact() {
        let g = Geometry::new([2, 2, 5], [1.0, 1.0, 2.0], [0.0; 3]).unwrap();
        let v = Volume::from_fn(g, |_, _, z| 2.0 * z as f64).unwrap();
        let r = v.resample_z(1.0).unwrap();
        assert_eq!(r.dims(), [2, 2, 9]);
        assert_eq!(r.spacing()[2], 1.0);
        for z in 0..9 {
            let s = r.extract_slice(crate::volume::Axis::Axial, z).unwrap();
            assert!(s.data.iter().all(|&x| x == z as f64), "slice {z}: {:?}", s.data);
        }
    }

    #[test]
    fn identity_when_spacing_matches() {
        let g = Geometry::new([3, 2, 4], [0.7, 0.7, 1.0], [1.0, 2.0, 3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = Volume::from_fn(g, |_, _, _| rng.random_range(-1000.0..500.0)).unwrap();
        let r = v.resample_z(1.0).unwrap();
        assert_eq!(r, v);
    }

    #[test]
    fn random_volume_matches_per_voxel_oracle() {
        let g = Geometry::new([8, 8, 7], [1.0, 1.0, 2.5], [0.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let v = Volume::from_fn(g, |_, _, _| rng.random_range(-1000.0..1000.0)).unwrap();
        let r = v.resample_z(1.0).unwrap();
        // 6 gaps of 2.5mm = 15mm -> 16 slices at 1mm
        assert_eq!(r.dims()[2], 16);
        for z in 0..16 {
            let pos_mm = z as f64;
            let lower = (pos_mm / 2.5).floor() as usize;
            let upper = (lower + 1).min(6);
            let t = (pos_mm - lower as f64 * 2.5) / 2.5;
            for y in 0..8 {
                for x in 0..8 {
                    let expect = v.get(x, y, lower) * (1.0 - t) + v.get(x, y, upper) * t;
                    assert!((r.get(x, y, z) - expect).abs() < 1e-9);
                }
            }
        }
        let (lo, hi) = v.min_max();
        let (rlo, rhi) = r.min_max();
        assert!(rlo >= lo && rhi <= hi);
    }

    #[test]
    fn labels_use_nearest_slice() {
        let g = Geometry::new([1, 1, 3], [1.0, 1.0, 2.0], [0.0; 3]).unwrap();
        let l = LabelVolume::new(g, vec![0, 1, 2]).unwrap();
        let r = l.resample_z(1.0).unwrap();
        // positions 0, 0.5, 1, 1.5, 2 -> round half away from zero
        assert_eq!(r.labels(), &[0, 1, 1, 2, 2]);
    }

    #[test]
    fn rejects_non_positive_target() {
        let g = Geometry::new([1, 1, 3], [1.0; 3], [0.0; 3]).unwrap();
        let v = Volume::filled(g, 0.0f64).unwrap();
        assert_eq!(v.resample_z(0.0), Err(VolumeError::InvalidTargetSpacing(0.0)));
        assert!(v.resample_z(-1.0).is_err());
    }
}
