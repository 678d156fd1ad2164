//! Window/level mapping of HU slices to 8-bit gray.

use serde::{Deserialize, Serialize};

use super::{Axis, Result, Slice2, VolumeError};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowLevel {
    lo: f64,
    hi: f64,
}

impl WindowLevel {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(VolumeError::InvalidWindow { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Saturates at the bounds, rounds half away from zero in between.
    #[inline]
    pub fn map(&self, v: f64) -> u8 {
        if v <= self.lo {
            0
        } else if v >= self.hi {
            255
        } else {
            (255.0 * (v - self.lo) / (self.hi - self.lo)).round() as u8
        }
    }
}

impl Default for WindowLevel {
    /// A lung window.
    fn default() -> Self {
        Self { lo: -1350.0, hi: 150.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PixelFormat {
    Gray,
    Rgba,
}

impl PixelFormat {
    pub fn channels(self) -> usize {
        match self {
            PixelFormat::Gray => 1,
            PixelFormat::Rgba => 4,
        }
    }
}

/// An 8-bit display image of one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    pub width: usize,
    pub height: usize,
    pub format: PixelFormat,
    pub pixels: Vec<u8>,
    pub axis: Option<Axis>,
    pub index: usize,
    pub spacing: (f64, f64),
}

impl SliceImage {
    pub fn new(width: usize, height: usize, format: PixelFormat, pixels: Vec<u8>) -> Option<Self> {
        (pixels.len() == width * height * format.channels()).then_some(Self {
            width,
            height,
            format,
            pixels,
            axis: None,
            index: 0,
            spacing: (1.0, 1.0),
        })
    }

    pub fn to_rgba(&self) -> SliceImage {
        match self.format {
            PixelFormat::Rgba => self.clone(),
            PixelFormat::Gray => SliceImage {
                pixels: self.pixels.iter().flat_map(|&g| [g, g, g, 255]).collect(),
                format: PixelFormat::Rgba,
                ..self.clone()
            },
        }
    }

    pub fn rgba_at(&self, col: usize, row: usize) -> [u8; 4] {
        let i = col + row * self.width;
        match self.format {
            PixelFormat::Gray => {
                let g = self.pixels[i];
                [g, g, g, 255]
            }
            PixelFormat::Rgba => self.pixels[4 * i..4 * i + 4].try_into().unwrap(),
        }
    }
}

pub fn apply_window_level<T: Real>(slice: &Slice2<T>, wl: &WindowLevel) -> SliceImage {
    SliceImage {
        width: slice.width,
        height: slice.height,
        format: PixelFormat::Gray,
        pixels: slice.data.iter().map(|v| wl.map(v.as_f64())).collect(),
        axis: None,
        index: 0,
        spacing: slice.spacing,
    }
}
