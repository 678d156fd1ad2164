//! Orbit camera and clip box.

use serde::{Deserialize, Serialize};

use super::RenderError;
use crate::volume::Geometry;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Projection {
    Perspective { fov_deg: f64 },
    Orthographic { height_mm: f64 },
}

/// Orbits `center`. At azimuth 0 and elevation 0 the eye sits anterior to the
/// centre (−y) looking along +y with +z up; azimuth turns about z, elevation
/// lifts towards +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub center: [f64; 3],
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance_mm: f64,
    pub projection: Projection,
}

type V3 = [f64; 3];

fn add_scaled(a: V3, b: V3, s: f64) -> V3 {
    [a[0] + b[0] * s, a[1] + b[1] * s, a[2] + b[2] * s]
}
fn cross(a: V3, b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}
fn normalize(a: V3) -> V3 {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

impl Camera {
    /// Frames the whole volume orthographically from the front.
    pub fn frame(g: &Geometry) -> Self {
        let (lo, hi) = world_bounds(g);
        let center = std::array::from_fn(|a| (lo[a] + hi[a]) / 2.0);
        let diag = (0..3).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>().sqrt();
        Self {
            center,
            azimuth_deg: 0.0,
            elevation_deg: 0.0,
            distance_mm: 2.0 * diag,
            projection: Projection::Orthographic { height_mm: 1.1 * diag },
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let finite = self.center.iter().chain([&self.azimuth_deg, &self.elevation_deg]).all(|v| v.is_finite());
        if !finite || !(self.distance_mm > 0.0 && self.distance_mm.is_finite()) {
            return Err(RenderError::InvalidCamera("distance must be positive and all fields finite".into()));
        }
        match self.projection {
            Projection::Perspective { fov_deg } if !(fov_deg > 0.0 && fov_deg < 180.0) => {
                Err(RenderError::InvalidCamera(format!("field of view {fov_deg} must lie in (0, 180)")))
            }
            Projection::Orthographic { height_mm } if !(height_mm > 0.0 && height_mm.is_finite()) => {
                Err(RenderError::InvalidCamera("orthographic height must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// (eye, forward, right, up) unit frame.
    fn basis(&self) -> (V3, V3, V3, V3) {
        let (az, el) = (self.azimuth_deg.to_radians(), self.elevation_deg.to_radians());
        let back = [el.cos() * -az.sin(), -el.cos() * az.cos(), el.sin()];
        let eye = add_scaled(self.center, back, self.distance_mm);
        let forward = [-back[0], -back[1], -back[2]];
        let world_up = if forward[2].abs() > 0.999 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
        let right = normalize(cross(forward, world_up));
        let up = cross(right, forward);
        (eye, forward, right, up)
    }

    /// World-space ray (origin, unit direction) through the centre of pixel
    /// (col, row) of a `width × height` image; row 0 is the top.
    pub fn ray(&self, col: usize, row: usize, width: usize, height: usize) -> (V3, V3) {
        let (eye, forward, right, up) = self.basis();
        let aspect = width as f64 / height as f64;
        let u = ((col as f64 + 0.5) / width as f64 - 0.5) * aspect;
        let v = 0.5 - (row as f64 + 0.5) / height as f64;
        match self.projection {
            Projection::Orthographic { height_mm } => {
                let o = add_scaled(add_scaled(eye, right, u * height_mm), up, v * height_mm);
                (o, forward)
            }
            Projection::Perspective { fov_deg } => {
                let s = 2.0 * (fov_deg.to_radians() / 2.0).tan();
                let d = add_scaled(add_scaled(forward, right, u * s), up, v * s);
                (eye, normalize(d))
            }
        }
    }
}

/// World-space extent of the volume: voxel centres sit at integer indices, so
/// the box runs from index −½ to n − ½ on each axis.
pub fn world_bounds(g: &Geometry) -> (V3, V3) {
    let lo = std::array::from_fn(|a| g.origin[a] - 0.5 * g.spacing[a]);
    let hi = std::array::from_fn(|a| g.origin[a] + (g.dims[a] as f64 - 0.5) * g.spacing[a]);
    (lo, hi)
}

/// Per-axis `[min, max]` fractions of the volume extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for ClipBox {
    fn default() -> Self {
        Self::FULL
    }
}

impl ClipBox {
    pub const FULL: ClipBox = ClipBox { min: [0.0; 3], max: [1.0; 3] };

    pub fn validate(&self) -> Result<(), RenderError> {
        for a in 0..3 {
            if !(0.0 <= self.min[a] && self.min[a] <= self.max[a] && self.max[a] <= 1.0) {
                return Err(RenderError::InvalidClip(format!(
                    "axis {a}: need 0 ≤ min ≤ max ≤ 1, got [{}, {}]",
                    self.min[a], self.max[a]
                )));
            }
        }
        Ok(())
    }

    pub fn is_degenerate(&self) -> bool {
        (0..3).any(|a| self.min[a] >= self.max[a])
    }

    /// The box in continuous voxel coordinates.
    pub fn voxel_bounds(&self, g: &Geometry) -> (V3, V3) {
        let lo = std::array::from_fn(|a| -0.5 + self.min[a] * g.dims[a] as f64);
        let hi = std::array::from_fn(|a| -0.5 + self.max[a] * g.dims[a] as f64);
        (lo, hi)
    }

    /// A slab along `axis` covering voxel indices `first..first + count`.
    pub fn slab(g: &Geometry, axis: usize, first: usize, count: usize) -> Self {
        let n = g.dims[axis] as f64;
        let mut clip = Self::FULL;
        clip.min[axis] = (first as f64 / n).clamp(0.0, 1.0);
        clip.max[axis] = ((first + count) as f64 / n).clamp(0.0, 1.0);
        clip
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn front_view_looks_along_y() {
        let cam = Camera {
            center: [0.0; 3],
            azimuth_deg: 0.0,
            elevation_deg: 0.0,
            distance_mm: 10.0,
            projection: Projection::Orthographic { height_mm: 4.0 },
        };
        let (o, d) = cam.ray(0, 0, 2, 2);
        assert!((d[1] - 1.0).abs() < 1e-12);
        assert!((o[1] + 10.0).abs() < 1e-12);
        // top-left pixel: left (−x) and up (+z)
        assert!(o[0] < 0.0 && o[2] > 0.0);
    }

    #[test]
    fn camera_validation() {
        let mut cam = Camera::frame(&Geometry::new([4, 4, 4], [1.0; 3], [0.0; 3]).unwrap());
        assert!(cam.validate().is_ok());
        cam.projection = Projection::Perspective { fov_deg: 180.0 };
        assert!(cam.validate().is_err());
        cam.projection = Projection::Perspective { fov_deg: 45.0 };
        cam.distance_mm = 0.0;
        assert!(cam.validate().is_err());
    }

    #[test]
    fn clip_validation_and_slab() {
        assert!(ClipBox { min: [0.5, 0.0, 0.0], max: [0.4, 1.0, 1.0] }.validate().is_err());
        let g = Geometry::new([4, 4, 10], [1.0; 3], [0.0; 3]).unwrap();
        let slab = ClipBox::slab(&g, 2, 3, 2);
        let (lo, hi) = slab.voxel_bounds(&g);
        assert_eq!((lo[2], hi[2]), (2.5, 4.5));
        assert!(ClipBox { min: [0.2; 3], max: [0.2, 1.0, 1.0] }.is_degenerate());
    }
}
