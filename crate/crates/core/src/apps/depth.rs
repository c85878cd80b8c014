use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ekf::{AxisFilter, NoiseConfig};
use crate::error::{Error, Result};
use crate::event::{Event, SensorGeometry};
use crate::freqest::{initialize, InitConfig};
use crate::track::{track_stream, Axis, PatchSpec, TrackSample, TrackerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthConfig {
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default = "default_init_window")]
    pub init_window_s: f64,
    /// Averaging starts once this many consecutive innovations have an RMS
    /// below `gate_rms_px`.
    #[serde(default = "default_gate_len")]
    pub gate_len: usize,
    #[serde(default = "default_gate_rms")]
    pub gate_rms_px: f64,
    /// Axis whose amplitude is used; `None` averages both.
    #[serde(default)]
    pub axis: Option<Axis>,
}

fn default_init_window() -> f64 {
    0.2
}

fn default_gate_len() -> usize {
    100
}

fn default_gate_rms() -> f64 {
    1.0
}

impl Default for DepthConfig {
    fn default() -> Self {
        DepthConfig {
            tracker: TrackerConfig::default(),
            init: InitConfig::default(),
            noise: NoiseConfig::default(),
            init_window_s: default_init_window(),
            gate_len: default_gate_len(),
            gate_rms_px: default_gate_rms(),
            axis: None,
        }
    }
}

/// Time-averaged amplitude seen by one tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerAmplitude {
    pub id: u32,
    pub amplitude_u: f64,
    pub amplitude_v: f64,
    pub omega: f64,
    /// Timestamp at which averaging started.
    pub converged_at_us: u64,
    pub samples_averaged: usize,
}

impl TrackerAmplitude {
    pub fn amplitude(&self, axis: Option<Axis>) -> f64 {
        match axis {
            Some(Axis::U) => self.amplitude_u,
            Some(Axis::V) => self.amplitude_v,
            None => 0.5 * (self.amplitude_u + self.amplitude_v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRatioReport {
    pub amplitude_1: f64,
    pub amplitude_2: f64,
    /// `amplitude_1 / amplitude_2`, which estimates `Z_2 / Z_1`.
    pub ratio: f64,
    pub truth_ratio: Option<f64>,
    pub trackers: [Vec<TrackerAmplitude>; 2],
}

/// Runs initialization and both axis filters over one tracker's samples and
/// averages the lag-corrected amplitudes once the innovations settle.
pub fn tracker_amplitude(samples: &[TrackSample], cfg: &DepthConfig) -> Result<TrackerAmplitude> {
    let Some(first) = samples.first() else {
        return Err(Error::InsufficientData(
            "tracker produced no samples".into(),
        ));
    };
    if cfg.gate_len == 0 {
        return Err(Error::config("convergence gate needs at least one sample"));
    }
    let cut = first.t + (cfg.init_window_s * 1e6) as u64;
    let n_init = samples.partition_point(|s| s.t < cut);
    let init = initialize(&samples[..n_init], &cfg.init)?;
    let mut u = AxisFilter::new(&init.u.fit, cfg.noise, false)?;
    let mut v = AxisFilter::new(&init.v.fit, cfg.noise, false)?;
    let tau = cfg.tracker.tau_s;

    let mut window = std::collections::VecDeque::with_capacity(cfg.gate_len);
    let mut window_sum = 0.0;
    let mut gate: Option<u64> = None;
    let (mut sum_u, mut sum_v, mut n) = (0.0, 0.0, 0usize);
    for s in samples {
        let iu = u.step(s.t, s.u)?.value;
        let iv = v.step(s.t, s.v)?.value;
        let sq = iu * iu + iv * iv;
        window.push_back(sq);
        window_sum += sq;
        if window.len() > cfg.gate_len {
            window_sum -= window.pop_front().unwrap_or(0.0);
        }
        if gate.is_none() && window.len() == cfg.gate_len {
            let rms = (window_sum.max(0.0) / cfg.gate_len as f64).sqrt();
            if rms < cfg.gate_rms_px {
                gate = Some(s.t);
            }
        }
        if gate.is_some() {
            sum_u += u.state.lag_corrected(tau).amplitude_phase().0;
            sum_v += v.state.lag_corrected(tau).amplitude_phase().0;
            n += 1;
        }
    }
    let Some(converged_at_us) = gate else {
        return Err(Error::Unreliable(format!(
            "tracker {} never held innovation RMS below {} px for {} samples",
            first.id, cfg.gate_rms_px, cfg.gate_len
        )));
    };
    Ok(TrackerAmplitude {
        id: first.id,
        amplitude_u: sum_u / n as f64,
        amplitude_v: sum_v / n as f64,
        omega: 0.5 * (u.state.omega + v.state.omega),
        converged_at_us,
        samples_averaged: n,
    })
}

/// Ratio of the mean oscillation amplitude on plane 1 to that on plane 2.
/// Amplitude falls off as inverse depth, so the ratio estimates `Z_2 / Z_1`.
pub fn relative_depth(
    events: &[Event],
    planes: [&[PatchSpec]; 2],
    geometry: &SensorGeometry,
    cfg: &DepthConfig,
    truth_ratio: Option<f64>,
) -> Result<DepthRatioReport> {
    if planes.iter().any(|p| p.is_empty()) {
        return Err(Error::config("each plane needs at least one tracker"));
    }
    let patches: Vec<PatchSpec> = planes.iter().flat_map(|p| p.iter().copied()).collect();
    let streams = track_stream(events, &patches, cfg.tracker, geometry)?;
    let amps = streams
        .par_iter()
        .map(|s| tracker_amplitude(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let split = planes[0].len();
    let trackers = [amps[..split].to_vec(), amps[split..].to_vec()];
    let mean = |v: &[TrackerAmplitude]| {
        v.iter().map(|a| a.amplitude(cfg.axis)).sum::<f64>() / v.len() as f64
    };
    let (amplitude_1, amplitude_2) = (mean(&trackers[0]), mean(&trackers[1]));
    if !(amplitude_1 > 0.0 && amplitude_2 > 0.0) {
        return Err(Error::Unreliable("a plane shows no oscillation".into()));
    }
    Ok(DepthRatioReport {
        amplitude_1,
        amplitude_2,
        ratio: amplitude_1 / amplitude_2,
        truth_ratio,
        trackers,
    })
}

/// Pixel displacement of a point at distance `d` when the camera moves by
/// `r` sideways: the viewing angle is `pi/2 - atan(d / r)` and the shift is
/// `tan(angle) * (resolution / 2) / tan(fov / 2)`.
pub fn pixel_shift(d_m: f64, resolution_px: f64, fov_rad: f64, r_m: f64) -> f64 {
    let theta = std::f64::consts::FRAC_PI_2 - (d_m / r_m).atan();
    theta.tan() * (resolution_px / 2.0) / (fov_rad / 2.0).tan()
}

/// Distance at which the shift of [`pixel_shift`] drops to one pixel,
/// found by bisection.
pub fn min_distance_for(resolution_px: f64, fov_rad: f64, r_m: f64) -> Result<f64> {
    if !(r_m > 0.0 && r_m.is_finite()) {
        return Err(Error::config("rotation radius must be positive"));
    }
    if !(resolution_px > 0.0 && fov_rad > 0.0 && fov_rad < std::f64::consts::PI) {
        return Err(Error::config(
            "resolution and field of view must be positive",
        ));
    }
    let excess = |d: f64| pixel_shift(d, resolution_px, fov_rad, r_m) - 1.0;
    let mut lo = r_m * 1e-6;
    let mut hi = r_m;
    while excess(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Numerical("no one-pixel distance".into()));
        }
    }
    if excess(lo) < 0.0 {
        return Ok(lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// [`min_distance_for`] with the sensor height and vertical field of view.
pub fn min_detectable_distance(geometry: &SensorGeometry, r_m: f64) -> Result<f64> {
    geometry.validate()?;
    min_distance_for(f64::from(geometry.height), geometry.vertical_fov(), r_m)
}

/// Depth of a plane whose image oscillates with `amplitude_px` when the
/// camera moves by `baseline_m`: `f * baseline / amplitude`. The physical
/// baseline is normally unknown, which leaves only depth ratios.
pub fn absolute_depth(amplitude_px: f64, baseline_m: f64, focal_px: f64) -> Result<f64> {
    if baseline_m == 0.0 {
        return Err(Error::config("baseline must be non-zero"));
    }
    if !(amplitude_px > 0.0 && baseline_m > 0.0 && focal_px > 0.0) {
        return Err(Error::config(
            "amplitude, baseline and focal length must be positive",
        ));
    }
    Ok(focal_px * baseline_m / amplitude_px)
}
