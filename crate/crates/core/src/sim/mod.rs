//! Synthetic event generation for a harmonically vibrating camera.
//!
//! The camera translates in its own image plane, so every fronto-parallel
//! scene plane at depth `Z` appears shifted by `f * A_hat / Z` pixels times a
//! cosine. The motion itself comes either from an image-plane description
//! ([`OscillatorConfig`]) or from the forced mass-spring-damper model driven
//! by an unbalanced DC motor ([`PhysicalOscillator`], [`MotorParams`]).

mod generate;
mod scene;

pub use generate::{
    simulate, simulate_moving_target, EventModel, MotionSource, MovingTargetSpec, PlaneTruth,
    SimOutput,
};
pub use scene::{DepthPlane, Pattern, Rect, SceneSpec, Texture};

use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::SensorGeometry;
use crate::wrap_angle;

/// Image-plane oscillation: `du = A_x cos(w t + phi_x)`, `dv = A_y cos(w t + phi_y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorConfig {
    #[serde(rename = "A_x_px")]
    pub amp_x: f64,
    #[serde(rename = "A_y_px")]
    pub amp_y: f64,
    #[serde(rename = "omega_rad_s")]
    pub omega: f64,
    #[serde(default)]
    pub phi_x: f64,
    #[serde(default)]
    pub phi_y: f64,
}

impl OscillatorConfig {
    pub fn new(amp_x: f64, amp_y: f64, omega: f64, phi_x: f64, phi_y: f64) -> Result<Self> {
        let cfg = OscillatorConfig {
            amp_x,
            amp_y,
            omega,
            phi_x: wrap_angle(phi_x),
            phi_y: wrap_angle(phi_y),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Circular motion of radius `amp`: `phi_x = phi_y + pi/2`.
    pub fn circular(amp: f64, omega: f64, phi_y: f64) -> Result<Self> {
        Self::new(amp, amp, omega, phi_y + std::f64::consts::FRAC_PI_2, phi_y)
    }

    /// No motion at all.
    pub fn stationary() -> Self {
        OscillatorConfig {
            amp_x: 0.0,
            amp_y: 0.0,
            omega: 1.0,
            phi_x: 0.0,
            phi_y: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.amp_x, self.amp_y, self.omega, self.phi_x, self.phi_y]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("oscillator parameters must be finite"));
        }
        if self.amp_x < 0.0 || self.amp_y < 0.0 {
            return Err(Error::config("oscillation amplitudes must be non-negative"));
        }
        if self.omega <= 0.0 {
            return Err(Error::config("oscillation frequency must be positive"));
        }
        Ok(())
    }

    /// Same motion with both amplitudes multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        OscillatorConfig {
            amp_x: self.amp_x * s,
            amp_y: self.amp_y * s,
            ..*self
        }
    }

    pub fn max_amplitude(&self) -> f64 {
        self.amp_x.max(self.amp_y)
    }
}

/// Image-plane offset at time `t` (seconds).
#[inline]
pub fn camera_offset(t: f64, cfg: &OscillatorConfig) -> (f64, f64) {
    (
        cfg.amp_x * (cfg.omega * t + cfg.phi_x).cos(),
        cfg.amp_y * (cfg.omega * t + cfg.phi_y).cos(),
    )
}

/// Forced rotating-unbalance oscillator `M y'' + c y' + k y = m e w^2 cos(w t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalOscillator {
    /// Total moving mass, kg.
    #[serde(rename = "M")]
    pub total_mass: f64,
    /// Eccentric mass, kg.
    #[serde(rename = "m")]
    pub eccentric_mass: f64,
    /// Eccentricity, m.
    #[serde(rename = "e")]
    pub eccentricity: f64,
    /// Damping, N s / m.
    #[serde(rename = "c")]
    pub damping: f64,
    /// Spring constant, N / m.
    #[serde(rename = "k")]
    pub stiffness: f64,
    /// Drive angular frequency, rad/s.
    #[serde(rename = "omega_drive", default)]
    pub omega_drive: f64,
}

impl PhysicalOscillator {
    pub fn forcing_amplitude(&self) -> f64 {
        self.eccentric_mass * self.eccentricity * self.omega_drive * self.omega_drive
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.total_mass,
            self.eccentric_mass,
            self.eccentricity,
            self.stiffness,
            self.omega_drive,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) || !(self.damping >= 0.0) {
            return Err(Error::config(
                "physical oscillator parameters must be positive",
            ));
        }
        Ok(())
    }
}

/// Steady-state amplitude (m) and phase lag (rad) of the forced oscillator.
///
/// The response to `F0 cos(w t)` is `A cos(w t - phi)` with
/// `A = F0 / sqrt((k - M w^2)^2 + (c w)^2)` and `phi = atan2(c w, k - M w^2)`.
pub fn steady_state(p: &PhysicalOscillator) -> Result<(f64, f64)> {
    p.validate()?;
    let w = p.omega_drive;
    let dyn_stiffness = p.stiffness - p.total_mass * w * w;
    let damp = p.damping * w;
    let denom = dyn_stiffness.hypot(damp);
    if denom == 0.0 {
        return Err(Error::Singularity);
    }
    Ok((p.forcing_amplitude() / denom, damp.atan2(dyn_stiffness)))
}

/// Armature-controlled DC motor without inductance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorParams {
    /// Motor constant, V s / rad.
    pub k_phi: f64,
    /// Armature resistance, ohm.
    #[serde(rename = "R")]
    pub resistance: f64,
    /// Load torque, N m.
    #[serde(rename = "T_q")]
    pub load_torque: f64,
}

impl MotorParams {
    /// Motor constant from a nominal (voltage, speed) rating.
    pub fn k_phi_from_nominal(voltage: f64, omega_nominal: f64) -> f64 {
        voltage / omega_nominal
    }

    /// Load torque of an eccentric mass, `T_q = e m g`.
    pub fn eccentric_load_torque(eccentricity: f64, mass: f64) -> f64 {
        eccentricity * mass * 9.80665
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_phi > 0.0) || !(self.resistance >= 0.0) || !(self.load_torque >= 0.0) {
            return Err(Error::config("motor requires k_phi > 0, R >= 0, T_q >= 0"));
        }
        Ok(())
    }
}

/// Shaft speed (rad/s) at armature voltage `v_a`: `V/k - R T / k^2`, floored at 0.
pub fn motor_speed(v_a: f64, p: &MotorParams) -> f64 {
    let w = v_a / p.k_phi - p.resistance / (p.k_phi * p.k_phi) * p.load_torque;
    w.max(0.0)
}

/// Physical translation of the camera in metres, in its own x-y plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineMotion {
    pub amp_x_m: f64,
    pub amp_y_m: f64,
    pub omega: f64,
    pub phi_x: f64,
    pub phi_y: f64,
}

impl BaselineMotion {
    pub fn circular(radius_m: f64, omega: f64, phi_y: f64) -> Self {
        BaselineMotion {
            amp_x_m: radius_m,
            amp_y_m: radius_m,
            omega,
            phi_x: wrap_angle(phi_y + std::f64::consts::FRAC_PI_2),
            phi_y: wrap_angle(phi_y),
        }
    }

    /// Apparent motion of a fronto-parallel plane at depth `z`.
    pub fn image_plane(&self, focal_px: f64, z: f64) -> Result<OscillatorConfig> {
        if !(z > 0.0) {
            return Err(Error::BehindCamera(z));
        }
        OscillatorConfig::new(
            focal_px * self.amp_x_m / z,
            focal_px * self.amp_y_m / z,
            self.omega,
            self.phi_x,
            self.phi_y,
        )
    }

    /// Camera translation at time `t` (seconds).
    pub fn translation(&self, t: f64) -> Vector3<f64> {
        Vector3::new(
            self.amp_x_m * (self.omega * t + self.phi_x).cos(),
            self.amp_y_m * (self.omega * t + self.phi_y).cos(),
            0.0,
        )
    }
}

/// Projects a world point into the vibrating camera at time `t` (seconds).
///
/// `cam_from_world` maps world coordinates into the static virtual camera.
/// The moving camera differs from it by a pure in-plane translation.
pub fn project(
    point: &Point3<f64>,
    cam_from_world: &Isometry3<f64>,
    geometry: &SensorGeometry,
    t: f64,
    motion: &BaselineMotion,
) -> Result<(f64, f64)> {
    let pc = cam_from_world * point;
    if !(pc.z > 0.0) {
        return Err(Error::BehindCamera(pc.z));
    }
    let moved = pc.coords + motion.translation(t);
    let f = geometry.focal_length;
    Ok((
        f * moved.x / moved.z + geometry.cx,
        f * moved.y / moved.z + geometry.cy,
    ))
}
