//! Event-camera simulation and vibration compensation.
//!
//! A camera shaken on a circular path turns a static scene into a stream of
//! events. This crate simulates such streams, estimates the vibration
//! frequency, tracks it with an extended Kalman filter, maps events back to a
//! static virtual frame and scores the result.

pub mod apps;
pub mod compensate;
pub mod ekf;
pub mod error;
pub mod event;
pub mod frame;
pub mod freqest;
pub mod io;
pub mod metrics;
pub mod sim;
pub mod track;

pub use error::{Error, Result};
pub use event::{Event, Polarity, SensorGeometry};

use std::f64::consts::PI;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}
