use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::SensorGeometry;

/// Axis-aligned rectangle in pixel coordinates, half-open: `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        self.x1 > self.x0 && self.y1 > self.y0
    }
}

/// Reflectance layout of the scene, as a function in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pattern {
    Checkerboard {
        period_px: f64,
    },
    Stripes {
        period_px: f64,
        angle_rad: f64,
    },
    Disks {
        radius_px: f64,
        pitch_px: f64,
    },
    /// Equilateral triangle, apex up, centred on the pattern centre.
    Triangle {
        side_px: f64,
    },
    /// Row-major values in `[0, 1]`, one per pixel, anchored at the pattern origin.
    Bitmap {
        width: usize,
        height: usize,
        values: Vec<f64>,
    },
}

impl Pattern {
    fn validate(&self) -> Result<()> {
        let pos = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("pattern {what} must be positive")))
            }
        };
        match self {
            Pattern::Checkerboard { period_px } => pos(*period_px, "period"),
            Pattern::Stripes {
                period_px,
                angle_rad,
            } => {
                pos(*period_px, "period")?;
                if angle_rad.is_finite() {
                    Ok(())
                } else {
                    Err(Error::config("stripe angle must be finite"))
                }
            }
            Pattern::Disks {
                radius_px,
                pitch_px,
            } => {
                pos(*radius_px, "radius")?;
                pos(*pitch_px, "pitch")
            }
            Pattern::Triangle { side_px } => pos(*side_px, "side"),
            Pattern::Bitmap {
                width,
                height,
                values,
            } => {
                if *width == 0 || *height == 0 || values.len() != width * height {
                    return Err(Error::config("bitmap size does not match its data"));
                }
                if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::config("bitmap values must lie in [0, 1]"));
                }
                Ok(())
            }
        }
    }

    /// Value at `(x, y)` relative to the pattern origin; `(cx, cy)` is the
    /// pattern centre in the same frame.
    fn value(&self, x: f64, y: f64, cx: f64, cy: f64) -> f64 {
        match *self {
            Pattern::Checkerboard { period_px } => {
                let i = (x / period_px).floor() as i64 + (y / period_px).floor() as i64;
                (i.rem_euclid(2)) as f64
            }
            Pattern::Stripes {
                period_px,
                angle_rad,
            } => {
                let s = x * angle_rad.cos() + y * angle_rad.sin();
                if (s / period_px).rem_euclid(1.0) < 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            Pattern::Disks {
                radius_px,
                pitch_px,
            } => {
                let dx = (x / pitch_px).rem_euclid(1.0) * pitch_px - pitch_px / 2.0;
                let dy = (y / pitch_px).rem_euclid(1.0) * pitch_px - pitch_px / 2.0;
                if dx * dx + dy * dy < radius_px * radius_px {
                    1.0
                } else {
                    0.0
                }
            }
            Pattern::Triangle { side_px } => {
                let h = side_px * 3f64.sqrt() / 2.0;
                // centroid at (cx, cy): apex at -2h/3, base at +h/3
                let yy = y - cy;
                if yy < -2.0 * h / 3.0 || yy >= h / 3.0 {
                    return 0.0;
                }
                let half = (yy + 2.0 * h / 3.0) / h * side_px / 2.0;
                if (x - cx).abs() < half {
                    1.0
                } else {
                    0.0
                }
            }
            Pattern::Bitmap {
                width,
                height,
                ref values,
            } => {
                if x < -0.5 || y < -0.5 {
                    return 0.0;
                }
                let (i, j) = ((x + 0.5).floor() as usize, (y + 0.5).floor() as usize);
                if i < width && j < height {
                    values[j * width + i]
                } else {
                    0.0
                }
            }
        }
    }
}

/// A fronto-parallel plane owning the pixels in `region`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthPlane {
    /// Sensor pixels belonging to this plane; `None` means the whole sensor.
    #[serde(default)]
    pub region: Option<Rect>,
    #[serde(rename = "Z_m")]
    pub depth_m: f64,
}

/// A textured planar scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub pattern: Pattern,
    /// Log-intensity difference between pattern value 1 and 0.
    pub contrast: f64,
    /// Log intensity of pattern value 0.
    #[serde(default)]
    pub background: f64,
    /// Restricts the pattern to a rectangle (in virtual-frame pixels); the
    /// pattern origin is the rectangle's top-left corner. Outside, the scene
    /// shows the background.
    #[serde(default)]
    pub extent: Option<Rect>,
    pub depth_planes: Vec<DepthPlane>,
}

impl SceneSpec {
    /// Single plane at 1 m covering the whole sensor.
    pub fn single_plane(pattern: Pattern, contrast: f64) -> Self {
        SceneSpec {
            pattern,
            contrast,
            background: 0.0,
            extent: None,
            depth_planes: vec![DepthPlane {
                region: None,
                depth_m: 1.0,
            }],
        }
    }

    pub fn with_extent(mut self, extent: Rect) -> Self {
        self.extent = Some(extent);
        self
    }

    pub fn validate(&self, geometry: &SensorGeometry) -> Result<()> {
        self.pattern.validate()?;
        if !(self.contrast.is_finite() && self.background.is_finite()) {
            return Err(Error::config("contrast and background must be finite"));
        }
        if let Some(e) = &self.extent {
            if !e.is_valid() {
                return Err(Error::config("pattern extent is empty"));
            }
        }
        if self.depth_planes.is_empty() {
            return Err(Error::config("scene needs at least one depth plane"));
        }
        for p in &self.depth_planes {
            if !(p.depth_m > 0.0 && p.depth_m.is_finite()) {
                return Err(Error::config("plane depth must be positive"));
            }
        }
        // every pixel must belong to exactly one plane
        for y in 0..geometry.height {
            for x in 0..geometry.width {
                let n = self
                    .depth_planes
                    .iter()
                    .filter(|p| plane_contains(p, f64::from(x), f64::from(y)))
                    .count();
                if n != 1 {
                    return Err(Error::config(format!(
                        "depth-plane regions must partition the image; pixel ({x}, {y}) is covered {n} times"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Index of the plane owning pixel `(x, y)`.
    pub fn plane_of(&self, x: f64, y: f64) -> Option<usize> {
        self.depth_planes
            .iter()
            .position(|p| plane_contains(p, x, y))
    }

    fn origin_and_center(&self, geometry: &SensorGeometry) -> ((f64, f64), (f64, f64)) {
        match &self.extent {
            Some(e) => ((e.x0, e.y0), e.center()),
            None => (
                (0.0, 0.0),
                (
                    (f64::from(geometry.width) - 1.0) / 2.0,
                    (f64::from(geometry.height) - 1.0) / 2.0,
                ),
            ),
        }
    }

    /// Reflectance in `[0, 1]` at virtual-frame coordinate `(x, y)`.
    pub fn reflectance(&self, x: f64, y: f64, geometry: &SensorGeometry) -> f64 {
        if let Some(e) = &self.extent {
            if !e.contains(x, y) {
                return 0.0;
            }
        }
        let ((ox, oy), (cx, cy)) = self.origin_and_center(geometry);
        self.pattern.value(x - ox, y - oy, cx - ox, cy - oy)
    }
}

fn plane_contains(p: &DepthPlane, x: f64, y: f64) -> bool {
    p.region.map_or(true, |r| r.contains(x, y))
}

/// Rasterized log-intensity image with a margin around the sensor, sampled
/// bilinearly.
#[derive(Debug, Clone)]
pub struct Texture {
    margin: usize,
    width: usize,
    height: usize,
    data: Vec<f64>,
}

const SUPERSAMPLE: usize = 4;

impl Texture {
    /// Renders `scene` over the sensor plus `margin` pixels on every side.
    /// Each texel is the box-filtered average of a 4x4 grid of pattern samples.
    pub fn render(scene: &SceneSpec, geometry: &SensorGeometry, margin: usize) -> Self {
        let width = usize::from(geometry.width) + 2 * margin;
        let height = usize::from(geometry.height) + 2 * margin;
        let mut data = Vec::with_capacity(width * height);
        let n = SUPERSAMPLE as f64;
        for j in 0..height {
            for i in 0..width {
                let x = i as f64 - margin as f64;
                let y = j as f64 - margin as f64;
                let mut acc = 0.0;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = x - 0.5 + (sx as f64 + 0.5) / n;
                        let py = y - 0.5 + (sy as f64 + 0.5) / n;
                        acc += scene.reflectance(px, py, geometry);
                    }
                }
                data.push(scene.background + scene.contrast * acc / (n * n));
            }
        }
        Texture {
            margin,
            width,
            height,
            data,
        }
    }

    pub fn margin(&self) -> usize {
        self.margin
    }

    #[inline]
    fn texel(&self, i: isize, j: isize) -> f64 {
        let i = i.clamp(0, self.width as isize - 1) as usize;
        let j = j.clamp(0, self.height as isize - 1) as usize;
        self.data[j * self.width + i]
    }

    /// Bilinear sample at virtual-frame coordinate `(x, y)`.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let tx = x + self.margin as f64;
        let ty = y + self.margin as f64;
        let fx = tx.floor();
        let fy = ty.floor();
        let ax = tx - fx;
        let ay = ty - fy;
        let (i, j) = (fx as isize, fy as isize);
        let v00 = self.texel(i, j);
        let v10 = self.texel(i + 1, j);
        let v01 = self.texel(i, j + 1);
        let v11 = self.texel(i + 1, j + 1);
        let top = v00 + (v10 - v00) * ax;
        let bot = v01 + (v11 - v01) * ax;
        top + (bot - top) * ay
    }

    /// Whether the texture varies anywhere within `radius` of `(x, y)`.
    pub fn varies_near(&self, x: f64, y: f64, radius: f64) -> bool {
        let lo_i = (x - radius).floor() as isize - 1 + self.margin as isize;
        let hi_i = (x + radius).ceil() as isize + 1 + self.margin as isize;
        let lo_j = (y - radius).floor() as isize - 1 + self.margin as isize;
        let hi_j = (y + radius).ceil() as isize + 1 + self.margin as isize;
        let first = self.texel(lo_i, lo_j);
        for j in lo_j..=hi_j {
            for i in lo_i..=hi_i {
                if self.texel(i, j) != first {
                    return true;
                }
            }
        }
        false
    }
}
