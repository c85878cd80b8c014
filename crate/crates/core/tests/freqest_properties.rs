use evshake::freqest::{fit_at, normalize_values, nudft_at, nudft_spectrum, Band};
use proptest::prelude::*;

fn series() -> impl Strategy<Value = (Vec<u64>, Vec<f64>)> {
    (
        prop::collection::vec((1u64..3000, -3.0f64..3.0), 20..200),
        50.0f64..450.0,
        0.5f64..4.0,
    )
        .prop_map(|(raw, omega, amp)| {
            let mut t = 0;
            raw.into_iter()
                .map(|(dt, noise)| {
                    t += dt;
                    (t, amp * (omega * t as f64 * 1e-6).cos() + 0.2 * noise)
                })
                .unzip()
        })
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap()
}

proptest! {
    #[test]
    fn scaling_values_scales_the_spectrum((times, values) in series(), s in 0.01f64..100.0) {
        let band = Band::default();
        let base = nudft_spectrum(&normalize_values(&times, &values).unwrap(), band, 256).unwrap();
        let scaled_values: Vec<f64> = values.iter().map(|v| s * v).collect();
        let scaled = nudft_spectrum(&normalize_values(&times, &scaled_values).unwrap(), band, 256).unwrap();
        let peak = base.magnitudes.iter().cloned().fold(0.0, f64::max);
        for (b, m) in base.magnitudes.iter().zip(&scaled.magnitudes) {
            prop_assert!((m - s * b).abs() <= 1e-9 * s * peak);
        }
        prop_assert_eq!(argmax(&base.magnitudes), argmax(&scaled.magnitudes));
    }

    #[test]
    fn time_shift_leaves_magnitudes((times, values) in series(), shift in 0.0f64..50.0) {
        let omegas: Vec<f64> = (0..64).map(|k| 30.0 + 7.0 * k as f64).collect();
        let ts: Vec<f64> = times.iter().map(|&t| t as f64 * 1e-6).collect();
        let shifted: Vec<f64> = ts.iter().map(|t| t + shift).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let centred: Vec<f64> = values.iter().map(|v| v - mean).collect();
        let a = nudft_at(&ts, &centred, &omegas);
        let b = nudft_at(&shifted, &centred, &omegas);
        let peak = a.iter().cloned().fold(0.0, f64::max);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-8 * peak.max(1.0));
        }
        let moved: Vec<u64> = times.iter().map(|t| t + 1_000_000).collect();
        let band = Band::default();
        let p = nudft_spectrum(&normalize_values(&times, &values).unwrap(), band, 128).unwrap();
        let q = nudft_spectrum(&normalize_values(&moved, &values).unwrap(), band, 128).unwrap();
        prop_assert_eq!(p.magnitudes, q.magnitudes);
    }

    #[test]
    fn fitted_coefficients_minimise_residual(
        (times, values) in series(),
        omega in 40.0f64..480.0,
        eps in 1e-4f64..0.5,
        dir in 0usize..27,
    ) {
        let ts: Vec<f64> = times.iter().map(|&t| (t - times[0]) as f64 * 1e-6).collect();
        let Ok((coef, rms)) = fit_at(&ts, &values, omega) else {
            return Ok(());
        };
        let sse = |a: f64, b: f64, c: f64| -> f64 {
            ts.iter()
                .zip(&values)
                .map(|(&t, &v)| {
                    let (s, co) = (omega * t).sin_cos();
                    (v - a * s - b * co - c).powi(2)
                })
                .sum()
        };
        let best = sse(coef[0], coef[1], coef[2]);
        prop_assert!((best / ts.len() as f64).sqrt() - rms <= 1e-9 * rms.max(1.0));
        let step = |d: usize| [-eps, 0.0, eps][d % 3];
        let (da, db, dc) = (step(dir), step(dir / 3), step(dir / 9));
        prop_assert!(sse(coef[0] + da, coef[1] + db, coef[2] + dc) >= best * (1.0 - 1e-12));
    }
}
