//! Frequency initialization from centroid traces.
//!
//! DC removal and timestamp normalization, a nonuniform Fourier spectrum over
//! a frequency band, peak picking, and a linear least-squares sinusoid fit at
//! the chosen frequency.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::track::{Axis, TrackSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub omega_min: f64,
    pub omega_max: f64,
}

impl Default for Band {
    fn default() -> Self {
        Band {
            omega_min: 30.0,
            omega_max: 500.0,
        }
    }
}

impl Band {
    pub fn new(omega_min: f64, omega_max: f64) -> Result<Self> {
        let b = Band {
            omega_min,
            omega_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_min < self.omega_max)
            || !self.omega_min.is_finite()
            || !self.omega_max.is_finite()
        {
            return Err(Error::config(format!(
                "empty frequency band [{}, {}]",
                self.omega_min, self.omega_max
            )));
        }
        Ok(())
    }
}

/// A DC-free sample series with its timestamps mapped onto `[-pi, pi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries {
    pub values: Vec<f64>,
    pub phases: Vec<f64>,
    /// Seconds since `t_span.0`.
    pub times_s: Vec<f64>,
    pub t_span: (u64, u64),
    pub mean: f64,
}

impl NormalizedSeries {
    /// Inverse of the phase map, microseconds.
    pub fn phase_to_time(&self, phase: f64) -> f64 {
        let span = (self.t_span.1 - self.t_span.0) as f64;
        self.t_span.0 as f64 + (phase + PI) / (2.0 * PI) * span
    }

    pub fn duration_s(&self) -> f64 {
        (self.t_span.1 - self.t_span.0) as f64 * 1e-6
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn normalize(samples: &[TrackSample], axis: Axis) -> Result<NormalizedSeries> {
    let times: Vec<u64> = samples.iter().map(|s| s.t).collect();
    let values: Vec<f64> = samples.iter().map(|s| s.coord(axis)).collect();
    normalize_values(&times, &values)
}

pub fn normalize_values(times_us: &[u64], values: &[f64]) -> Result<NormalizedSeries> {
    assert_eq!(
        times_us.len(),
        values.len(),
        "times and values differ in length"
    );
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} samples, need at least 2",
            values.len()
        )));
    }
    let t_min = *times_us.iter().min().unwrap();
    let t_max = *times_us.iter().max().unwrap();
    if t_max == t_min {
        return Err(Error::InsufficientData(
            "all samples share one timestamp".into(),
        ));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let span = (t_max - t_min) as f64;
    Ok(NormalizedSeries {
        values: values.iter().map(|v| v - mean).collect(),
        phases: times_us
            .iter()
            .map(|&t| (-PI + 2.0 * PI * (t - t_min) as f64 / span).clamp(-PI, PI))
            .collect(),
        times_s: times_us
            .iter()
            .map(|&t| (t - t_min) as f64 * 1e-6)
            .collect(),
        t_span: (t_min, t_max),
        mean,
    })
}

/// Magnitudes on a uniform frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub omegas: Vec<f64>,
    pub magnitudes: Vec<f64>,
}

impl Spectrum {
    pub fn step(&self) -> f64 {
        self.omegas[1] - self.omegas[0]
    }

    pub fn argmax(&self) -> usize {
        self.magnitudes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i)
    }
}

/// `grid_points` frequencies spanning the band, endpoints included.
pub fn frequency_grid(band: Band, grid_points: usize) -> Result<Vec<f64>> {
    band.validate()?;
    if grid_points < 2 {
        return Err(Error::config("frequency grid needs at least 2 points"));
    }
    let step = (band.omega_max - band.omega_min) / (grid_points - 1) as f64;
    Ok((0..grid_points)
        .map(|k| band.omega_min + k as f64 * step)
        .collect())
}

/// `|sum_j v_j exp(-i omega t_j)|` at each requested frequency.
pub fn nudft_at(times_s: &[f64], values: &[f64], omegas: &[f64]) -> Vec<f64> {
    omegas
        .par_iter()
        .map(|&w| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (&t, &v) in times_s.iter().zip(values) {
                let (s, c) = (w * t).sin_cos();
                acc += Complex64::new(v * c, -v * s);
            }
            acc.norm()
        })
        .collect()
}

/// Direct nonuniform DFT of the series over the band.
pub fn nudft_spectrum(
    series: &NormalizedSeries,
    band: Band,
    grid_points: usize,
) -> Result<Spectrum> {
    let omegas = frequency_grid(band, grid_points)?;
    let magnitudes = nudft_at(&series.times_s, &series.values, &omegas);
    Ok(Spectrum { omegas, magnitudes })
}

/// Width of the Gaussian spreading stencil, in fine-grid cells each side.
const SPREAD: usize = 12;
/// Oversampling of the fine grid relative to the number of modes.
const OVERSAMPLE: usize = 2;

/// Same grid as [`nudft_spectrum`], computed by Gaussian gridding and an FFT.
///
/// With `Δ` the grid step, sample `j` sits at `x_j = Δ t_j mod 2π` and carries
/// weight `v_j exp(-i (ω_min + K/2 Δ) t_j)`, which turns the band into the
/// integer modes `-K/2 .. K/2` of a type-1 transform.
pub fn nufft_spectrum(
    series: &NormalizedSeries,
    band: Band,
    grid_points: usize,
) -> Result<Spectrum> {
    let omegas = frequency_grid(band, grid_points)?;
    let k_modes = grid_points;
    let half = (k_modes / 2) as i64;
    let step = omegas[1] - omegas[0];
    let shift = band.omega_min + half as f64 * step;

    let m_r = OVERSAMPLE * k_modes.next_power_of_two().max(16);
    let r = m_r as f64 / k_modes as f64;
    let tau = PI * SPREAD as f64 / ((k_modes * k_modes) as f64 * r * (r - 0.5));
    let h = 2.0 * PI / m_r as f64;

    let mut grid = vec![Complex64::new(0.0, 0.0); m_r];
    for (&t, &v) in series.times_s.iter().zip(&series.values) {
        let (s, c) = (shift * t).sin_cos();
        let w = Complex64::new(v * c, -v * s);
        let x = (step * t).rem_euclid(2.0 * PI);
        let m0 = (x / h).floor() as i64;
        for m in (m0 - SPREAD as i64 + 1)..=(m0 + SPREAD as i64) {
            let d = x - m as f64 * h;
            let g = (-d * d / (4.0 * tau)).exp();
            grid[m.rem_euclid(m_r as i64) as usize] += w * g;
        }
    }

    FftPlanner::new().plan_fft_forward(m_r).process(&mut grid);

    let scale = (PI / tau).sqrt() / m_r as f64;
    let magnitudes = (0..k_modes)
        .map(|k| {
            let mode = k as i64 - half;
            let idx = mode.rem_euclid(m_r as i64) as usize;
            (grid[idx] * scale * (mode as f64 * mode as f64 * tau).exp()).norm()
        })
        .collect();
    Ok(Spectrum { omegas, magnitudes })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPeak {
    pub omega: f64,
    pub magnitude: f64,
    pub rank: usize,
}

/// Up to `m` strict local maxima above the median magnitude, strongest first,
/// each refined by a parabola through the log-magnitudes of three bins.
pub fn top_peaks(spectrum: &Spectrum, m: usize) -> Result<Vec<SpectrumPeak>> {
    if m == 0 {
        return Err(Error::config("number of peaks must be at least 1"));
    }
    let mag = &spectrum.magnitudes;
    if mag.len() < 3 {
        return Err(Error::NoPeak);
    }
    let mut sorted = mag.clone();
    sorted.sort_by(f64::total_cmp);
    let floor = sorted[sorted.len() / 2];
    let step = spectrum.step();

    let mut peaks: Vec<SpectrumPeak> = (1..mag.len() - 1)
        .filter(|&k| mag[k] > mag[k - 1] && mag[k] > mag[k + 1] && mag[k] > floor)
        .map(|k| {
            let (l0, l1, l2) = (mag[k - 1].ln(), mag[k].ln(), mag[k + 1].ln());
            let denom = l0 - 2.0 * l1 + l2;
            if l0.is_finite() && l2.is_finite() && denom < 0.0 {
                let delta = 0.5 * (l0 - l2) / denom;
                SpectrumPeak {
                    omega: spectrum.omegas[k] + delta * step,
                    magnitude: (l1 - 0.25 * (l0 - l2) * delta).exp(),
                    rank: 0,
                }
            } else {
                SpectrumPeak {
                    omega: spectrum.omegas[k],
                    magnitude: mag[k],
                    rank: 0,
                }
            }
        })
        .collect();
    if peaks.is_empty() {
        return Err(Error::NoPeak);
    }
    peaks.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude));
    peaks.truncate(m);
    for (i, p) in peaks.iter_mut().enumerate() {
        p.rank = i + 1;
    }
    Ok(peaks)
}

/// `a sin(ω (t - t_ref)) + b cos(ω (t - t_ref)) + c`, times in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidInit {
    pub omega: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub residual_rms: f64,
    pub t_ref: u64,
}

impl SinusoidInit {
    pub fn eval(&self, t_us: u64) -> f64 {
        let dt = (t_us as f64 - self.t_ref as f64) * 1e-6;
        let (s, c) = (self.omega * dt).sin_cos();
        self.a * s + self.b * c + self.c
    }
}

/// Least-squares `(a, b, c)` at a fixed `omega`, with `times_s` relative to
/// the reference time.
pub fn fit_at(times_s: &[f64], values: &[f64], omega: f64) -> Result<(Vector3<f64>, f64)> {
    if values.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} samples, need at least 3",
            values.len()
        )));
    }
    if !(omega > 0.0) {
        return Err(Error::config("fit frequency must be positive"));
    }
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for (&t, &v) in times_s.iter().zip(values) {
        let (s, c) = (omega * t).sin_cos();
        let row = Vector3::new(s, c, 1.0);
        ata += row * row.transpose();
        atb += row * v;
    }
    let svd = ata.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::DegenerateFit(format!(
            "normal matrix condition {:.3e}",
            smax / smin
        )));
    }
    let coef = svd
        .solve(&atb, 0.0)
        .map_err(|e| Error::DegenerateFit(e.to_string()))?;
    let sse: f64 = times_s
        .iter()
        .zip(values)
        .map(|(&t, &v)| {
            let (s, c) = (omega * t).sin_cos();
            let r = v - coef[0] * s - coef[1] * c - coef[2];
            r * r
        })
        .sum();
    Ok((coef, (sse / values.len() as f64).sqrt()))
}

/// Fits the samples of one axis at `omega`, referenced to the first sample.
pub fn fit_sinusoid(samples: &[TrackSample], axis: Axis, omega: f64) -> Result<SinusoidInit> {
    let t_ref = samples.first().map_or(0, |s| s.t);
    let times: Vec<f64> = samples
        .iter()
        .map(|s| (s.t as f64 - t_ref as f64) * 1e-6)
        .collect();
    let values: Vec<f64> = samples.iter().map(|s| s.coord(axis)).collect();
    let (coef, residual_rms) = fit_at(&times, &values, omega)?;
    Ok(SinusoidInit {
        omega,
        a: coef[0],
        b: coef[1],
        c: coef[2],
        residual_rms,
        t_ref,
    })
}

/// Moves `omega0` to the least-squares optimum within `±half_width` by golden
/// section search on the fit residual.
pub fn refine_frequency(
    series: &NormalizedSeries,
    omega0: f64,
    half_width: f64,
    band: Band,
) -> f64 {
    let rss = |w: f64| {
        fit_at(&series.times_s, &series.values, w)
            .map(|(_, rms)| rms)
            .unwrap_or(f64::INFINITY)
    };
    let mut lo = (omega0 - half_width).max(band.omega_min);
    let mut hi = (omega0 + half_width).min(band.omega_max);
    if !(hi > lo) {
        return omega0;
    }
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (rss(x1), rss(x2));
    while hi - lo > 1e-9 * omega0.abs().max(1.0) {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = rss(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = rss(x2);
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    #[serde(default)]
    pub band: Band,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    #[serde(default = "default_peaks")]
    pub num_peaks: usize,
    /// Polish the spectral peak by least squares.
    #[serde(default = "yes")]
    pub refine: bool,
    /// Use the gridded transform instead of the direct sum.
    #[serde(default)]
    pub fast: bool,
}

fn default_grid() -> usize {
    2048
}

fn default_peaks() -> usize {
    3
}

fn yes() -> bool {
    true
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            band: Band::default(),
            grid_points: default_grid(),
            num_peaks: default_peaks(),
            refine: true,
            fast: false,
        }
    }
}

/// Spectrum peaks of a series and the frequency chosen from them.
pub fn dominant_frequency(
    series: &NormalizedSeries,
    cfg: &InitConfig,
) -> Result<(f64, Vec<SpectrumPeak>)> {
    let spectrum = if cfg.fast {
        nufft_spectrum(series, cfg.band, cfg.grid_points)?
    } else {
        nudft_spectrum(series, cfg.band, cfg.grid_points)?
    };
    let peaks = top_peaks(&spectrum, cfg.num_peaks)?;
    let mut omega = peaks[0].omega;
    if cfg.refine {
        // a quarter of the main-lobe width keeps the search on one lobe
        let half_width = (PI / (2.0 * series.duration_s())).max(2.0 * spectrum.step());
        omega = refine_frequency(series, omega, half_width, cfg.band);
    }
    Ok((omega, peaks))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisEstimate {
    pub fit: SinusoidInit,
    /// `None` when the axis carried no usable oscillation.
    pub omega: Option<f64>,
    pub peaks: Vec<SpectrumPeak>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionInit {
    pub omega: f64,
    pub u: AxisEstimate,
    pub v: AxisEstimate,
}

impl MotionInit {
    pub fn axis(&self, axis: Axis) -> &AxisEstimate {
        match axis {
            Axis::U => &self.u,
            Axis::V => &self.v,
        }
    }
}

/// Estimates each axis independently, then fuses them into one frequency.
///
/// An axis without a peak, or whose peak is under a tenth of the other
/// axis' peak, is ignored. Two usable axes within 5% are averaged with
/// magnitude weights; within 25% the stronger wins; beyond that the motion
/// is rejected as inconsistent.
pub fn initialize(samples: &[TrackSample], cfg: &InitConfig) -> Result<MotionInit> {
    let mut per_axis = Vec::with_capacity(2);
    for axis in Axis::BOTH {
        let series = normalize(samples, axis)?;
        per_axis.push(match dominant_frequency(&series, cfg) {
            Ok((w, peaks)) => Some((w, peaks)),
            Err(Error::NoPeak) => None,
            Err(e) => return Err(e),
        });
    }
    let strength =
        |p: &Option<(f64, Vec<SpectrumPeak>)>| p.as_ref().map_or(0.0, |(_, pk)| pk[0].magnitude);
    let (su, sv) = (strength(&per_axis[0]), strength(&per_axis[1]));
    let usable = [su > 0.0 && su >= 0.1 * sv, sv > 0.0 && sv >= 0.1 * su];

    let omega = match (usable, &per_axis[0], &per_axis[1]) {
        ([true, true], Some((wu, _)), Some((wv, _))) => {
            let rel = (wu - wv).abs() / wu.max(*wv);
            if rel <= 0.05 {
                (su * wu + sv * wv) / (su + sv)
            } else if rel <= 0.25 {
                if su >= sv {
                    *wu
                } else {
                    *wv
                }
            } else {
                return Err(Error::InconsistentMotion {
                    omega_u: *wu,
                    omega_v: *wv,
                });
            }
        }
        ([true, _], Some((wu, _)), _) => *wu,
        ([_, true], _, Some((wv, _))) => *wv,
        _ => return Err(Error::NoPeak),
    };

    let mut axes = Axis::BOTH
        .iter()
        .zip(per_axis)
        .zip(usable)
        .map(|((&axis, est), ok)| {
            let fit = fit_sinusoid(samples, axis, omega)?;
            let (w, peaks) = est.map_or((None, Vec::new()), |(w, p)| (ok.then_some(w), p));
            Ok::<_, Error>(AxisEstimate {
                fit,
                omega: w,
                peaks,
            })
        });
    let u = axes.next().unwrap()?;
    let v = axes.next().unwrap()?;
    Ok(MotionInit { omega, u, v })
}
