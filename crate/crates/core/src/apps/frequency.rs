use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{Event, SensorGeometry};
use crate::freqest::{initialize, InitConfig};
use crate::metrics::std_dev;
use crate::track::{PatchSpec, TrackSample, Tracker, TrackerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyConfig {
    /// Number of disjoint time segments, one estimate each.
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub init: InitConfig,
}

fn default_trials() -> usize {
    10
}

impl Default for FrequencyConfig {
    fn default() -> Self {
        FrequencyConfig {
            trials: default_trials(),
            tracker: TrackerConfig::default(),
            init: InitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub estimate_hz: f64,
    pub per_trial: Vec<f64>,
    pub truth_hz: Option<f64>,
    /// Mean absolute deviation of the trials from the truth.
    pub abs_error: Option<f64>,
    /// Three sample standard deviations of the trials.
    pub three_sigma: f64,
    /// The estimate lies above half the tracker's emission rate.
    pub aliasing: bool,
}

/// Frequency in Hz of one trial's centroid samples.
pub fn trial_frequency(samples: &[TrackSample], init: &InitConfig) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::NoPeak);
    }
    Ok(initialize(samples, init)?.omega / (2.0 * PI))
}

/// Splits the stream into `cfg.trials` equal segments, tracks the patch in
/// each with a fresh tracker and reports the spread of the estimates.
pub fn estimate_scene_frequency(
    events: &[Event],
    patch: &PatchSpec,
    geometry: &SensorGeometry,
    cfg: &FrequencyConfig,
    truth_hz: Option<f64>,
) -> Result<FrequencyReport> {
    if cfg.trials == 0 {
        return Err(Error::config("at least one trial is needed"));
    }
    cfg.tracker.validate()?;
    // fail on a bad patch even when the stream is empty
    Tracker::new(*patch, cfg.tracker, geometry)?;
    let (Some(first), Some(last)) = (events.first(), events.last()) else {
        return Err(Error::NoPeak);
    };
    let span = last.t + 1 - first.t;
    let bounds: Vec<(u64, u64)> = (0..cfg.trials as u64)
        .map(|k| {
            (
                first.t + span * k / cfg.trials as u64,
                first.t + span * (k + 1) / cfg.trials as u64,
            )
        })
        .collect();

    let per_trial = bounds
        .par_iter()
        .map(|&(t0, t1)| {
            let lo = events.partition_point(|e| e.t < t0);
            let hi = events.partition_point(|e| e.t < t1);
            let mut tracker = Tracker::new(*patch, cfg.tracker, geometry)?;
            let mut samples = Vec::new();
            for e in &events[lo..hi] {
                if let Some(s) = tracker.ingest(e)? {
                    samples.push(s);
                }
            }
            trial_frequency(&samples, &cfg.init)
        })
        .collect::<Result<Vec<f64>>>()?;

    let n = per_trial.len() as f64;
    let estimate_hz = per_trial.iter().sum::<f64>() / n;
    let abs_error = truth_hz.map(|f| per_trial.iter().map(|x| (x - f).abs()).sum::<f64>() / n);
    Ok(FrequencyReport {
        estimate_hz,
        three_sigma: 3.0 * std_dev(&per_trial),
        per_trial,
        truth_hz,
        abs_error,
        aliasing: estimate_hz > 0.5 / cfg.tracker.emit_period_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Polarity;

    fn samples(freq_hz: f64, amp: f64, secs: f64) -> Vec<TrackSample> {
        let w = 2.0 * PI * freq_hz;
        (0..(secs * 1000.0) as u64)
            .map(|k| {
                let t = k as f64 * 1e-3;
                TrackSample {
                    id: 0,
                    t: k * 1000,
                    u: 50.0 + amp * (w * t).cos(),
                    v: 40.0 + amp * (w * t).sin(),
                }
            })
            .collect()
    }

    #[test]
    fn trial_frequency_recovers_tone() {
        let f = trial_frequency(&samples(12.5, 4.0, 2.0), &InitConfig::default()).unwrap();
        assert!((f - 12.5).abs() < 1e-3, "{f}");
    }

    #[test]
    fn trial_frequency_ignores_amplitude() {
        let a = trial_frequency(&samples(17.0, 1.0, 2.0), &InitConfig::default()).unwrap();
        let b = trial_frequency(&samples(17.0, 9.0, 2.0), &InitConfig::default()).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn empty_stream_has_no_peak() {
        let g = SensorGeometry::centered(64, 64, 50.0).unwrap();
        let patch = PatchSpec::new(0, (32.0, 32.0), 10.0);
        let r = estimate_scene_frequency(&[], &patch, &g, &FrequencyConfig::default(), None);
        assert!(matches!(r, Err(Error::NoPeak)));
    }

    #[test]
    fn stationary_target_has_no_peak() {
        let g = SensorGeometry::centered(64, 64, 50.0).unwrap();
        let patch = PatchSpec::new(0, (32.0, 32.0), 10.0);
        // constant flicker at one pixel: the centroid never moves
        let events: Vec<Event> = (0..20_000)
            .map(|k| Event::new(k * 100, 32, 32, Polarity::On))
            .collect();
        let r = estimate_scene_frequency(&events, &patch, &g, &FrequencyConfig::default(), None);
        assert!(
            matches!(r, Err(Error::NoPeak) | Err(Error::DegenerateFit(_))),
            "{r:?}"
        );
    }

    #[test]
    fn report_statistics() {
        let g = SensorGeometry::centered(64, 64, 50.0).unwrap();
        let patch = PatchSpec::new(0, (32.0, 32.0), 12.0);
        // a single pixel walking around a 4 px circle at 20 Hz
        let w = 2.0 * PI * 20.0;
        let events: Vec<Event> = (0..400_000u64)
            .step_by(20)
            .map(|t| {
                let s = t as f64 * 1e-6;
                let x = (32.0 + 4.0 * (w * s).cos()).round() as u16;
                let y = (32.0 + 4.0 * (w * s).sin()).round() as u16;
                Event::new(t, x, y, Polarity::On)
            })
            .collect();
        let cfg = FrequencyConfig {
            trials: 4,
            ..FrequencyConfig::default()
        };
        let r = estimate_scene_frequency(&events, &patch, &g, &cfg, Some(20.0)).unwrap();
        assert_eq!(r.per_trial.len(), 4);
        let mean = r.per_trial.iter().sum::<f64>() / 4.0;
        assert_eq!(r.estimate_hz, mean);
        let mae = r.per_trial.iter().map(|f| (f - 20.0).abs()).sum::<f64>() / 4.0;
        assert_eq!(r.abs_error, Some(mae));
        assert!((r.estimate_hz - 20.0).abs() < 0.2, "{}", r.estimate_hz);
        assert!(!r.aliasing);
    }
}
