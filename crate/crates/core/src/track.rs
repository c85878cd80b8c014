//! Exponentially weighted event-centroid trackers.
//!
//! Each tracker follows the centroid of the events falling inside a square
//! patch. The centroid is a first-order low-pass of the true position: a
//! sinusoid of angular frequency `ω` comes out scaled by `1 / (1 + iωτ)`.
//! [`attenuation_gain`] and [`lag_phase`] expose that response so downstream
//! stages can undo it once `ω` is known.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{Event, SensorGeometry};

/// Image axis of a centroid coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    U,
    V,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::U, Axis::V];
}

/// Square tracking window `[u0 - h, u0 + h] x [v0 - h, v0 + h]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub id: u32,
    pub center: (f64, f64),
    pub half_size: f64,
}

impl PatchSpec {
    pub fn new(id: u32, center: (f64, f64), half_size: f64) -> Self {
        PatchSpec {
            id,
            center,
            half_size,
        }
    }

    pub fn validate(&self, geometry: &SensorGeometry) -> Result<()> {
        if !(self.half_size >= 4.0) || !self.center.0.is_finite() || !self.center.1.is_finite() {
            return Err(Error::config(format!(
                "patch {}: half size must be at least 4 px",
                self.id
            )));
        }
        let (u0, v0, h) = (self.center.0, self.center.1, self.half_size);
        let w = f64::from(geometry.width) - 1.0;
        let hgt = f64::from(geometry.height) - 1.0;
        if u0 + h < 0.0 || v0 + h < 0.0 || u0 - h > w || v0 - h > hgt {
            return Err(Error::config(format!(
                "patch {} lies outside the sensor",
                self.id
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.center.0).abs() <= self.half_size && (y - self.center.1).abs() <= self.half_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Decay time constant of the event weights, seconds.
    pub tau_s: f64,
    /// Minimum spacing between emitted samples, seconds.
    pub emit_period_s: f64,
    /// Samples are withheld until the decayed weight reaches this value.
    pub w_min: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            tau_s: 1e-3,
            emit_period_s: 1e-3,
            w_min: 5.0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_s > 0.0) || !(self.emit_period_s >= 0.0) || !(self.w_min >= 0.0) {
            return Err(Error::config(
                "tracker needs tau > 0, emit period >= 0, w_min >= 0",
            ));
        }
        Ok(())
    }
}

/// One centroid measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub id: u32,
    #[serde(rename = "t_us")]
    pub t: u64,
    pub u: f64,
    pub v: f64,
}

impl TrackSample {
    #[inline]
    pub fn coord(&self, axis: Axis) -> f64 {
        match axis {
            Axis::U => self.u,
            Axis::V => self.v,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Tracker {
    patch: PatchSpec,
    config: TrackerConfig,
    weight: f64,
    centroid: (f64, f64),
    last_update: u64,
    last_seen: Option<u64>,
    last_emit: Option<u64>,
    ingested: u64,
}

impl Tracker {
    pub fn new(patch: PatchSpec, config: TrackerConfig, geometry: &SensorGeometry) -> Result<Self> {
        patch.validate(geometry)?;
        config.validate()?;
        Ok(Tracker {
            patch,
            config,
            weight: 0.0,
            centroid: patch.center,
            last_update: 0,
            last_seen: None,
            last_emit: None,
            ingested: 0,
        })
    }

    pub fn patch(&self) -> &PatchSpec {
        &self.patch
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn centroid(&self) -> (f64, f64) {
        self.centroid
    }

    /// Accumulated weight decayed to time `t`.
    pub fn weight_at(&self, t: u64) -> f64 {
        if self.weight == 0.0 {
            return 0.0;
        }
        let dt = t.saturating_sub(self.last_update) as f64 * 1e-6;
        self.weight * (-dt / self.config.tau_s).exp()
    }

    /// Feeds one event. Events outside the patch only advance the clock.
    pub fn ingest(&mut self, e: &Event) -> Result<Option<TrackSample>> {
        if let Some(prev) = self.last_seen {
            if e.t < prev {
                return Err(Error::Ordering {
                    index: self.ingested,
                    previous: prev,
                    t: e.t,
                });
            }
        }
        self.last_seen = Some(e.t);
        self.ingested += 1;

        let (x, y) = (f64::from(e.x), f64::from(e.y));
        if self.patch.contains(x, y) {
            let w = self.weight_at(e.t) + 1.0;
            let keep = (w - 1.0) / w;
            self.centroid = (
                keep * self.centroid.0 + x / w,
                keep * self.centroid.1 + y / w,
            );
            self.weight = w;
            self.last_update = e.t;
        }

        let due = self.last_emit.map_or(true, |t0| {
            (e.t - t0) as f64 * 1e-6 >= self.config.emit_period_s
        });
        if due && self.weight > 0.0 && self.weight_at(e.t) >= self.config.w_min {
            self.last_emit = Some(e.t);
            return Ok(Some(TrackSample {
                id: self.patch.id,
                t: e.t,
                u: self.centroid.0,
                v: self.centroid.1,
            }));
        }
        Ok(None)
    }
}

pub fn create_tracker(
    patch: PatchSpec,
    config: TrackerConfig,
    geometry: &SensorGeometry,
) -> Result<Tracker> {
    Tracker::new(patch, config, geometry)
}

/// Runs one tracker per patch over the whole stream. Trackers are
/// independent, so they run in parallel.
pub fn track_stream(
    events: &[Event],
    patches: &[PatchSpec],
    config: TrackerConfig,
    geometry: &SensorGeometry,
) -> Result<Vec<Vec<TrackSample>>> {
    let trackers = patches
        .iter()
        .map(|p| Tracker::new(*p, config, geometry))
        .collect::<Result<Vec<_>>>()?;
    trackers
        .into_par_iter()
        .map(|mut tr| {
            let mut out = Vec::new();
            for e in events {
                if let Some(s) = tr.ingest(e)? {
                    out.push(s);
                }
            }
            Ok(out)
        })
        .collect()
}

/// Magnitude response of the centroid filter, `1 / sqrt(1 + (ωτ)²)`.
pub fn attenuation_gain(omega: f64, tau_s: f64) -> f64 {
    1.0 / (1.0 + (omega * tau_s).powi(2)).sqrt()
}

/// Phase delay of the centroid filter, `atan(ωτ)`.
pub fn lag_phase(omega: f64, tau_s: f64) -> f64 {
    (omega * tau_s).atan()
}

pub fn write_track_csv<W: Write>(sink: W, samples: &[TrackSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_track_csv<R: Read>(source: R) -> Result<Vec<TrackSample>> {
    let mut r = csv::Reader::from_reader(source);
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
