//! Event tuples and sensor geometry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sign of a brightness change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Off,
    On,
}

impl Polarity {
    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    pub fn from_i8(p: i8) -> Option<Self> {
        match p {
            1 => Some(Polarity::On),
            -1 => Some(Polarity::Off),
            _ => None,
        }
    }

    pub fn from_sign(positive: bool) -> Self {
        if positive {
            Polarity::On
        } else {
            Polarity::Off
        }
    }
}

/// One asynchronous brightness-change detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    /// Timestamp in microseconds.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, polarity: Polarity) -> Self {
        Event { t, x, y, polarity }
    }
}

/// Pinhole sensor description. All quantities are in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorGeometry {
    pub width: u16,
    pub height: u16,
    #[serde(rename = "focal_length_px")]
    pub focal_length: f64,
    pub cx: f64,
    pub cy: f64,
}

impl SensorGeometry {
    pub fn new(width: u16, height: u16, focal_length: f64, cx: f64, cy: f64) -> Result<Self> {
        let g = SensorGeometry {
            width,
            height,
            focal_length,
            cx,
            cy,
        };
        g.validate()?;
        Ok(g)
    }

    /// Geometry with the principal point at the image centre.
    pub fn centered(width: u16, height: u16, focal_length: f64) -> Result<Self> {
        Self::new(
            width,
            height,
            focal_length,
            (f64::from(width) - 1.0) / 2.0,
            (f64::from(height) - 1.0) / 2.0,
        )
    }

    /// Geometry whose vertical field of view is `vfov_rad`.
    pub fn from_vertical_fov(width: u16, height: u16, vfov_rad: f64) -> Result<Self> {
        if !(vfov_rad > 0.0 && vfov_rad < std::f64::consts::PI) {
            return Err(Error::config("vertical field of view must lie in (0, pi)"));
        }
        let f = (f64::from(height) / 2.0) / (vfov_rad / 2.0).tan();
        Self::centered(width, height, f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("sensor width and height must be positive"));
        }
        if !(self.focal_length > 0.0 && self.focal_length.is_finite()) {
            return Err(Error::config("focal length must be positive"));
        }
        let inside = |c: f64, n: u16| c >= 0.0 && c <= f64::from(n) - 1.0;
        if !inside(self.cx, self.width) || !inside(self.cy, self.height) {
            return Err(Error::config("principal point must lie inside the image"));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        usize::from(self.width) * usize::from(self.height)
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < i64::from(self.width) && y < i64::from(self.height)
    }

    /// Vertical field of view in radians.
    pub fn vertical_fov(&self) -> f64 {
        2.0 * (f64::from(self.height) / 2.0 / self.focal_length).atan()
    }
}
