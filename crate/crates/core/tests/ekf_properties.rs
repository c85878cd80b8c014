use std::f64::consts::PI;

use evshake::ekf::{amplitude_phase, AxisFilter, NoiseConfig, NoiseScaling, SinusoidState};
use evshake::freqest::SinusoidInit;
use nalgebra::{Matrix5, Vector5};
use proptest::prelude::*;

fn init(omega: f64, a: f64, b: f64, c: f64) -> SinusoidInit {
    SinusoidInit {
        omega,
        a,
        b,
        c,
        residual_rms: 0.0,
        t_ref: 0,
    }
}

fn truth(t_us: u64) -> f64 {
    let x = t_us as f64 * 1e-6;
    2.0 * (300.0 * x).sin() + 1.0 * (300.0 * x).cos() + 50.0
}

fn dense_product(f: &Matrix5<f64>, p: &Matrix5<f64>, q: &Matrix5<f64>) -> Matrix5<f64> {
    let mut out = *q;
    for i in 0..5 {
        for j in 0..5 {
            let mut acc = 0.0;
            for k in 0..5 {
                for l in 0..5 {
                    acc += f[(i, k)] * p[(k, l)] * f[(j, l)];
                }
            }
            out[(i, j)] += acc;
        }
    }
    out
}

#[test]
fn converges_on_noiseless_sinusoid() {
    let mut f =
        AxisFilter::new(&init(306.0, 1.8, 1.2, 49.5), NoiseConfig::default(), false).unwrap();
    for k in 0..2000u64 {
        let t = k * 1000;
        f.step(t, truth(t)).unwrap();
    }
    // bring the phase back to t = 0 to compare coefficients
    let s = f.state;
    let theta0 = s.theta - s.omega * s.t_last as f64 * 1e-6;
    let (sn, cs) = theta0.sin_cos();
    // a sin(θ0 + ωt) + b cos(θ0 + ωt) re-expressed on sin(ωt), cos(ωt)
    let a0 = s.a * cs - s.b * sn;
    let b0 = s.a * sn + s.b * cs;
    assert!((s.omega - 300.0).abs() < 0.005 * 300.0, "omega {}", s.omega);
    assert!((a0 - 2.0).abs() < 0.005 * 2.0, "a {a0}");
    assert!((b0 - 1.0).abs() < 0.005 * 1.0, "b {b0}");
    assert!((s.c - 50.0).abs() < 0.005 * 50.0, "c {}", s.c);
}

#[test]
fn innovation_rms_decreases_window_by_window() {
    for werr in [0.95, 0.98, 1.02, 1.05] {
        let mut f = AxisFilter::new(
            &init(300.0 * werr, 1.8, 1.2, 49.5),
            NoiseConfig::default(),
            false,
        )
        .unwrap();
        let mut inn = Vec::new();
        for k in 0..8000u64 {
            let t = k * 1000;
            inn.push(f.step(t, truth(t)).unwrap().value);
        }
        let rms: Vec<f64> = inn
            .chunks(100)
            .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt())
            .collect();
        let below = rms.iter().position(|&r| r < 1e-3).expect("never converged");
        assert!(
            rms[..=below].windows(2).all(|w| w[1] < w[0]),
            "omega error {werr}: {rms:?}"
        );
    }
}

#[test]
fn covariance_propagation_matches_dense_product() {
    let noise = NoiseConfig::default();
    let mut s = SinusoidState::init(&init(250.0, 1.0, -0.5, 10.0), &noise).unwrap();
    for k in 1..20u64 {
        s.update(10.0 + 0.1 * k as f64, &noise).unwrap();
        let p0 = s.p;
        let dt = 0.0007 * k as f64;
        s.predict(s.t_last + (dt * 1e6).round() as u64, &noise)
            .unwrap();
        let dt = (dt * 1e6).round() * 1e-6;
        let oracle = dense_product(&SinusoidState::jacobian_f(dt), &p0, &(noise.q * dt));
        assert!((s.p - oracle).abs().max() <= 1e-12 * oracle.abs().max());
    }
}

fn h_of(x: &Vector5<f64>) -> f64 {
    x[2] * x[0].sin() + x[3] * x[0].cos() + x[4]
}

fn f_of(x: &Vector5<f64>, dt: f64) -> Vector5<f64> {
    Vector5::new(x[0] + x[1] * dt, x[1], x[2], x[3], x[4])
}

proptest! {
    #[test]
    fn jacobians_match_central_differences(
        theta in -3.0f64..3.0, omega in 30.0f64..500.0,
        a in -5.0f64..5.0, b in -5.0f64..5.0, c in -50.0f64..50.0, dt in 0.0f64..0.01,
    ) {
        let noise = NoiseConfig::default();
        let mut s = SinusoidState::init(&init(omega, a, b, c), &noise).unwrap();
        s.theta = theta;
        let x = s.x();
        let h = s.jacobian_h();
        let f = SinusoidState::jacobian_f(dt);
        for j in 0..5 {
            let eps = 1e-6 * x[j].abs().max(1.0);
            let mut xp = x;
            let mut xm = x;
            xp[j] += eps;
            xm[j] -= eps;
            let dh = (h_of(&xp) - h_of(&xm)) / (2.0 * eps);
            let scale = h.abs().max().max(1.0);
            prop_assert!((dh - h[j]).abs() <= 1e-6 * scale, "dh/dx{} {} vs {}", j, dh, h[j]);
            let df = (f_of(&xp, dt) - f_of(&xm, dt)) / (2.0 * eps);
            for i in 0..5 {
                prop_assert!((df[i] - f[(i, j)]).abs() <= 1e-6 * f.abs().max());
            }
        }
    }

    #[test]
    fn joseph_form_keeps_covariance_psd(
        steps in prop::collection::vec((1u64..5000, -20.0f64..20.0), 1..200),
        per_step in any::<bool>(),
        sigma in 0.01f64..3.0,
    ) {
        let noise = NoiseConfig {
            sigma_r: sigma,
            scaling: if per_step { NoiseScaling::PerStep } else { NoiseScaling::PerSecond },
            gate: None,
            ..NoiseConfig::default()
        };
        let mut s = SinusoidState::init(&init(200.0, 1.0, 0.5, 3.0), &noise).unwrap();
        for (dt, z) in steps {
            s.predict(s.t_last + dt, &noise).unwrap();
            s.update(z, &noise).unwrap();
            let (asym, neg) = s.covariance_health();
            prop_assert!(asym < 1e-9, "asymmetry {}", asym);
            prop_assert!(neg < 1e-9, "negative eigenvalue {}", neg);
        }
    }

    #[test]
    fn reparameterization_identity(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -9.0f64..9.0, theta in -PI..PI) {
        let (amp, phi) = amplitude_phase(a, b);
        let lhs = a * theta.sin() + b * theta.cos() + c;
        // amplitude from the polar form, phase from b = A cos φ, a = -A sin φ
        let phi_cos = (-a).atan2(b);
        prop_assert!((lhs - (amp * (theta + phi_cos).cos() + c)).abs() < 1e-9);
        // the reported phase is the sine-form phase
        prop_assert!((lhs - (amp * (theta + phi).sin() + c)).abs() < 1e-9);
    }
}
