//! Extended Kalman filter over the oscillation of one image axis.
//!
//! State `x = [θ, ω, a, b, c]`, measurement `h(x) = a sin θ + b cos θ + c`.
//! Between measurements the phase advances as `θ += ω Δt`; everything else is
//! a random walk. Covariance updates use the Joseph form.

use std::io::Write;
use std::sync::RwLock;

use nalgebra::{Matrix5, RowVector5, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freqest::SinusoidInit;
use crate::wrap_angle;

const THETA: usize = 0;
const OMEGA: usize = 1;

/// How `Q` enters the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScaling {
    /// `Q` is a rate; a prediction over `Δt` seconds adds `Q Δt`.
    PerSecond,
    /// Every prediction adds `Q` regardless of `Δt`.
    PerStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    #[serde(rename = "Q")]
    pub q: Matrix5<f64>,
    pub sigma_r: f64,
    pub scaling: NoiseScaling,
    /// Initial standard deviations of `[θ, ω, a, b, c]`.
    pub p0_std: [f64; 5],
    /// Measurements with `|innovation| > gate * sqrt(S)` are skipped.
    pub gate: Option<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            q: Matrix5::from_diagonal(&Vector5::new(1e-8, 1e-4, 1e-4, 1e-4, 1e-4)),
            sigma_r: 0.5,
            scaling: NoiseScaling::PerSecond,
            p0_std: [0.1, 2.0, 0.5, 0.5, 0.5],
            gate: Some(5.0),
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_r > 0.0) || !self.sigma_r.is_finite() {
            return Err(Error::config("measurement noise must be positive"));
        }
        if (self.q - self.q.transpose()).abs().max() > 1e-12 * self.q.abs().max().max(1e-300) {
            return Err(Error::config("Q must be symmetric"));
        }
        let min_eig = self.q.symmetric_eigenvalues().min();
        if min_eig < -1e-12 * self.q.abs().max() {
            return Err(Error::config("Q must be positive semi-definite"));
        }
        if self.p0_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::config(
                "initial standard deviations must be non-negative",
            ));
        }
        if self.gate.is_some_and(|g| !(g > 0.0)) {
            return Err(Error::config("gate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidState {
    pub theta: f64,
    pub omega: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    #[serde(rename = "P")]
    pub p: Matrix5<f64>,
    pub t_last: u64,
}

/// Result of one measurement update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Innovation {
    pub value: f64,
    pub variance: f64,
    pub accepted: bool,
}

impl SinusoidState {
    /// Starts the filter at the fit's reference time with `θ = 0`.
    pub fn init(fit: &SinusoidInit, noise: &NoiseConfig) -> Result<Self> {
        noise.validate()?;
        if ![fit.omega, fit.a, fit.b, fit.c]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::config("initial fit has non-finite coefficients"));
        }
        let var = Vector5::from_iterator(noise.p0_std.iter().map(|s| s * s));
        Ok(SinusoidState {
            theta: 0.0,
            omega: fit.omega,
            a: fit.a,
            b: fit.b,
            c: fit.c,
            p: Matrix5::from_diagonal(&var),
            t_last: fit.t_ref,
        })
    }

    pub fn x(&self) -> Vector5<f64> {
        Vector5::new(self.theta, self.omega, self.a, self.b, self.c)
    }

    fn set_x(&mut self, x: &Vector5<f64>) {
        self.theta = x[0];
        self.omega = x[1];
        self.a = x[2];
        self.b = x[3];
        self.c = x[4];
    }

    /// Expected measurement `h(x)`.
    pub fn measurement(&self) -> f64 {
        let (s, c) = self.theta.sin_cos();
        self.a * s + self.b * c + self.c
    }

    /// `∂h/∂x`.
    pub fn jacobian_h(&self) -> RowVector5<f64> {
        let (s, c) = self.theta.sin_cos();
        RowVector5::new(self.a * c - self.b * s, 0.0, s, c, 1.0)
    }

    /// `∂f/∂x` of the propagation over `dt` seconds.
    pub fn jacobian_f(dt: f64) -> Matrix5<f64> {
        let mut f = Matrix5::identity();
        f[(THETA, OMEGA)] = dt;
        f
    }

    pub fn predict(&mut self, t_now: u64, noise: &NoiseConfig) -> Result<()> {
        if t_now < self.t_last {
            return Err(Error::Ordering {
                index: 0,
                previous: self.t_last,
                t: t_now,
            });
        }
        let dt = (t_now - self.t_last) as f64 * 1e-6;
        let f = Self::jacobian_f(dt);
        let q = match noise.scaling {
            NoiseScaling::PerSecond => noise.q * dt,
            NoiseScaling::PerStep => noise.q,
        };
        self.p = f * self.p * f.transpose() + q;
        self.theta = wrap_angle(self.theta + self.omega * dt);
        self.t_last = t_now;
        Ok(())
    }

    pub fn update(&mut self, z: f64, noise: &NoiseConfig) -> Result<Innovation> {
        let h = self.jacobian_h();
        let r = noise.sigma_r * noise.sigma_r;
        let innovation = z - self.measurement();
        let s = (h * self.p * h.transpose())[(0, 0)] + r;
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Numerical(format!("innovation variance {s}")));
        }
        if noise.gate.is_some_and(|g| innovation.abs() > g * s.sqrt()) {
            return Ok(Innovation {
                value: innovation,
                variance: s,
                accepted: false,
            });
        }
        let k = self.p * h.transpose() / s;
        let x = self.x() + k * innovation;
        self.set_x(&x);
        self.theta = wrap_angle(self.theta);
        let i_kh = Matrix5::identity() - k * h;
        self.p = i_kh * self.p * i_kh.transpose() + k * k.transpose() * r;
        Ok(Innovation {
            value: innovation,
            variance: s,
            accepted: true,
        })
    }

    /// `A = sqrt(a² + b²)`, `φ = atan2(b, a)`; `(0, 0)` at the origin.
    pub fn amplitude_phase(&self) -> (f64, f64) {
        amplitude_phase(self.a, self.b)
    }

    /// Oscillatory part `a sin θ(t) + b cos θ(t)` at `t_us`, without mutating
    /// the state. Times before `t_last` extrapolate backwards.
    #[inline]
    pub fn offset_at(&self, t_us: u64) -> f64 {
        Snapshot::from(self).offset_at(t_us)
    }

    /// Undoes the first-order low-pass of a centroid tracker with time
    /// constant `tau_s`: `(a + ib) <- (1 + iωτ)(a + ib)`.
    pub fn lag_corrected(&self, tau_s: f64) -> Self {
        let wt = self.omega * tau_s;
        SinusoidState {
            a: self.a - wt * self.b,
            b: self.b + wt * self.a,
            ..*self
        }
    }

    /// Largest asymmetry and most negative eigenvalue of `P`, both relative to
    /// the scale of `P`.
    pub fn covariance_health(&self) -> (f64, f64) {
        let scale = self.p.abs().max().max(1e-300);
        let asym = (self.p - self.p.transpose()).abs().max() / scale;
        let sym = (self.p + self.p.transpose()) * 0.5;
        let eig = sym.symmetric_eigenvalues();
        let neg = (-eig.min()).max(0.0) / eig.max().abs().max(1e-300);
        (asym, neg)
    }
}

pub fn amplitude_phase(a: f64, b: f64) -> (f64, f64) {
    if a == 0.0 && b == 0.0 {
        return (0.0, 0.0);
    }
    (a.hypot(b), b.atan2(a))
}

/// Oscillatory offsets of both axes at `t_us`.
pub fn predict_offset(u: &SinusoidState, v: &SinusoidState, t_us: u64) -> (f64, f64) {
    (u.offset_at(t_us), v.offset_at(t_us))
}

/// The mean of a filter, detached from its covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub theta: f64,
    pub omega: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub t_last: u64,
}

impl From<&SinusoidState> for Snapshot {
    fn from(s: &SinusoidState) -> Self {
        Snapshot {
            theta: s.theta,
            omega: s.omega,
            a: s.a,
            b: s.b,
            c: s.c,
            t_last: s.t_last,
        }
    }
}

impl Snapshot {
    pub fn zero() -> Self {
        Snapshot {
            theta: 0.0,
            omega: 0.0,
            a: 0.0,
            b: 0.0,
            c: 0.0,
            t_last: 0,
        }
    }

    #[inline]
    pub fn phase_at(&self, t_us: u64) -> f64 {
        let dt = (t_us as f64 - self.t_last as f64) * 1e-6;
        self.theta + self.omega * dt
    }

    #[inline]
    pub fn offset_at(&self, t_us: u64) -> f64 {
        let (s, c) = self.phase_at(t_us).sin_cos();
        self.a * s + self.b * c
    }
}

/// Latest published snapshot of a filter. Writers replace the whole tuple,
/// so readers never see a half-applied update.
#[derive(Debug)]
pub struct SnapshotCell(RwLock<Snapshot>);

impl SnapshotCell {
    pub fn new(s: Snapshot) -> Self {
        SnapshotCell(RwLock::new(s))
    }

    pub fn publish(&self, state: &SinusoidState) {
        *self.0.write().unwrap_or_else(|e| e.into_inner()) = Snapshot::from(state);
    }

    pub fn read(&self) -> Snapshot {
        *self.0.read().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t_us: u64,
    pub theta: f64,
    pub omega: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub innovation: f64,
}

/// A filter with its noise model, gating counter and optional trace.
#[derive(Debug, Clone)]
pub struct AxisFilter {
    pub state: SinusoidState,
    pub noise: NoiseConfig,
    pub rejected: usize,
    pub accepted: usize,
    trace: Option<Vec<TraceRow>>,
}

impl AxisFilter {
    pub fn new(fit: &SinusoidInit, noise: NoiseConfig, record_trace: bool) -> Result<Self> {
        Ok(AxisFilter {
            state: SinusoidState::init(fit, &noise)?,
            noise,
            rejected: 0,
            accepted: 0,
            trace: record_trace.then(Vec::new),
        })
    }

    /// Predicts to `t_us` and folds in measurement `z`.
    pub fn step(&mut self, t_us: u64, z: f64) -> Result<Innovation> {
        self.state.predict(t_us, &self.noise)?;
        let inn = self.state.update(z, &self.noise)?;
        if inn.accepted {
            self.accepted += 1;
        } else {
            self.rejected += 1;
        }
        if let Some(trace) = &mut self.trace {
            let s = &self.state;
            trace.push(TraceRow {
                t_us,
                theta: s.theta,
                omega: s.omega,
                a: s.a,
                b: s.b,
                c: s.c,
                innovation: inn.value,
            });
        }
        Ok(inn)
    }

    pub fn trace(&self) -> &[TraceRow] {
        self.trace.as_deref().unwrap_or(&[])
    }
}

pub fn write_trace_csv<W: Write>(sink: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn fit(omega: f64, a: f64, b: f64, c: f64) -> SinusoidInit {
        SinusoidInit {
            omega,
            a,
            b,
            c,
            residual_rms: 0.0,
            t_ref: 1000,
        }
    }

    #[test]
    fn init_copies_fit() {
        let s = SinusoidState::init(&fit(300.0, 2.0, 0.0, 100.0), &NoiseConfig::default()).unwrap();
        assert_eq!(
            (s.theta, s.omega, s.a, s.b, s.c, s.t_last),
            (0.0, 300.0, 2.0, 0.0, 100.0, 1000)
        );
        assert!(
            SinusoidState::init(&fit(f64::NAN, 0.0, 0.0, 0.0), &NoiseConfig::default()).is_err()
        );
    }

    #[test]
    fn first_measurement_matches_fit() {
        let f = fit(210.0, 1.3, -0.4, 7.0);
        let s = SinusoidState::init(&f, &NoiseConfig::default()).unwrap();
        assert!((s.measurement() - f.eval(f.t_ref)).abs() < 1e-9);
        let mut s2 = s;
        s2.predict(f.t_ref + 3210, &NoiseConfig::default()).unwrap();
        assert!((s2.measurement() - f.eval(f.t_ref + 3210)).abs() < 1e-9);
    }

    #[test]
    fn zero_dt_adds_q_once_per_step() {
        let noise = NoiseConfig {
            scaling: NoiseScaling::PerStep,
            ..NoiseConfig::default()
        };
        let mut s = SinusoidState::init(&fit(300.0, 2.0, 1.0, 5.0), &noise).unwrap();
        let before = s;
        s.predict(before.t_last, &noise).unwrap();
        assert_eq!(s.x(), before.x());
        assert_eq!(s.p, before.p + noise.q);

        // rate mode adds nothing when no time passes
        let mut r = before;
        r.predict(before.t_last, &NoiseConfig::default()).unwrap();
        assert_eq!(r.p, before.p);
    }

    #[test]
    fn full_cycle_wraps_to_itself() {
        let mut s =
            SinusoidState::init(&fit(2.0 * PI, 1.0, 0.0, 0.0), &NoiseConfig::default()).unwrap();
        s.theta = 0.7;
        s.predict(s.t_last + 1_000_000, &NoiseConfig::default())
            .unwrap();
        assert!((s.theta - 0.7).abs() < 1e-12);
    }

    #[test]
    fn predict_rejects_regression() {
        let mut s =
            SinusoidState::init(&fit(300.0, 1.0, 0.0, 0.0), &NoiseConfig::default()).unwrap();
        assert!(matches!(
            s.predict(10, &NoiseConfig::default()),
            Err(Error::Ordering { .. })
        ));
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let noise = NoiseConfig::default();
        let mut s = SinusoidState::init(&fit(300.0, 2.0, 1.0, 5.0), &noise).unwrap();
        s.predict(5000, &noise).unwrap();
        let before = s;
        let inn = s.update(s.measurement(), &noise).unwrap();
        assert_eq!(inn.value, 0.0);
        assert!((s.x() - before.x()).abs().max() < 1e-15);
        assert!(s.p.trace() <= before.p.trace());
    }

    #[test]
    fn huge_measurement_noise_is_ignored() {
        let noise = NoiseConfig {
            sigma_r: 1e12,
            gate: None,
            ..NoiseConfig::default()
        };
        let mut s = SinusoidState::init(&fit(300.0, 2.0, 1.0, 5.0), &noise).unwrap();
        let before = s;
        s.update(before.measurement() + 3.0, &noise).unwrap();
        assert!((s.x() - before.x()).abs().max() < 1e-18);
    }

    #[test]
    fn gate_rejects_outliers() {
        let noise = NoiseConfig::default();
        let mut s = SinusoidState::init(&fit(300.0, 2.0, 1.0, 5.0), &noise).unwrap();
        let before = s;
        let inn = s.update(before.measurement() + 1000.0, &noise).unwrap();
        assert!(!inn.accepted);
        assert_eq!(s, before);
    }

    #[test]
    fn amplitude_phase_values() {
        assert_eq!(amplitude_phase(3.0, 4.0).0, 5.0);
        assert!((amplitude_phase(3.0, 4.0).1 - 0.9272952180016122).abs() < 1e-15);
        assert_eq!(amplitude_phase(0.0, 0.0), (0.0, 0.0));
    }

    #[test]
    fn offset_prediction() {
        let mut u =
            SinusoidState::init(&fit(100.0, 0.0, 0.0, 3.0), &NoiseConfig::default()).unwrap();
        let v = SinusoidState::init(&fit(100.0, 1.5, -2.0, 3.0), &NoiseConfig::default()).unwrap();
        assert_eq!(predict_offset(&u, &u, 123_456), (0.0, 0.0));
        assert_eq!(v.offset_at(v.t_last), -2.0);
        u.a = 1.0;
        u.theta = 0.3;
        let dt = 2500;
        let expect = (0.3 + 100.0 * 2.5e-3f64).sin();
        assert!((u.offset_at(u.t_last + dt) - expect).abs() < 1e-12);
    }

    #[test]
    fn lag_correction_rotates_and_scales() {
        let mut s =
            SinusoidState::init(&fit(500.0, 1.0, 0.0, 0.0), &NoiseConfig::default()).unwrap();
        s.b = 0.0;
        let tau = 2e-3; // ωτ = 1
        let c = s.lag_corrected(tau);
        let (amp, phase) = c.amplitude_phase();
        assert!((amp - 2f64.sqrt()).abs() < 1e-12);
        assert!((phase - PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn snapshot_cell_round_trip() {
        let s = SinusoidState::init(&fit(300.0, 2.0, 1.0, 5.0), &NoiseConfig::default()).unwrap();
        let cell = SnapshotCell::new(Snapshot::zero());
        cell.publish(&s);
        assert_eq!(cell.read(), Snapshot::from(&s));
    }

    #[test]
    fn trace_csv_header() {
        let mut f =
            AxisFilter::new(&fit(300.0, 2.0, 1.0, 5.0), NoiseConfig::default(), true).unwrap();
        f.step(2000, 6.0).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, f.trace()).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("t_us,theta,omega,a,b,c,innovation\n"));
    }
}
