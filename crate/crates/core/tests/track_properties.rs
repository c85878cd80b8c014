use evshake::freqest::fit_sinusoid;
use evshake::track::{attenuation_gain, track_stream, Axis, PatchSpec, TrackSample, TrackerConfig};
use evshake::{Event, Polarity, SensorGeometry};
use proptest::prelude::*;

fn geometry() -> SensorGeometry {
    SensorGeometry::centered(200, 160, 100.0).unwrap()
}

fn cloud() -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec((0u64..400, 40u16..80, 30u16..70), 1..400).prop_map(|raw| {
        let mut t = 0;
        raw.into_iter()
            .map(|(dt, x, y)| {
                t += dt;
                Event::new(t, x, y, Polarity::On)
            })
            .collect()
    })
}

fn config() -> TrackerConfig {
    TrackerConfig {
        w_min: 1.0,
        emit_period_s: 0.0,
        ..TrackerConfig::default()
    }
}

fn run(events: &[Event], patch: PatchSpec) -> Vec<TrackSample> {
    track_stream(events, &[patch], config(), &geometry())
        .unwrap()
        .remove(0)
}

/// Cross product sign test against every edge of the hull.
fn inside_hull(points: &[(f64, f64)], p: (f64, f64)) -> bool {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        let (lo, hi) = (pts[0], pts[pts.len() - 1]);
        let cross = (hi.0 - lo.0) * (p.1 - lo.1) - (hi.1 - lo.1) * (p.0 - lo.0);
        let within = |v: f64, a: f64, b: f64| v >= a.min(b) - 1e-9 && v <= a.max(b) + 1e-9;
        return cross.abs() < 1e-9 && within(p.0, lo.0, hi.0) && within(p.1, lo.1, hi.1);
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &q in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0
            {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) >= -1e-9)
}

proptest! {
    #[test]
    fn translation_moves_every_sample(events in cloud(), dx in 0u16..60, dy in 0u16..50) {
        let patch = PatchSpec::new(0, (60.0, 50.0), 18.0);
        let moved: Vec<Event> = events.iter().map(|e| Event::new(e.t, e.x + dx, e.y + dy, e.polarity)).collect();
        let shifted = PatchSpec::new(0, (60.0 + f64::from(dx), 50.0 + f64::from(dy)), 18.0);
        let a = run(&events, patch);
        let b = run(&moved, shifted);
        prop_assert_eq!(a.len(), b.len());
        for (s, m) in a.iter().zip(&b) {
            prop_assert_eq!(s.t, m.t);
            prop_assert!((m.u - s.u - f64::from(dx)).abs() < 1e-9);
            prop_assert!((m.v - s.v - f64::from(dy)).abs() < 1e-9);
        }
    }

    #[test]
    fn centroid_stays_in_hull_of_inputs(events in cloud()) {
        let patch = PatchSpec::new(0, (60.0, 50.0), 12.0);
        let mut points = vec![patch.center];
        points.extend(
            events
                .iter()
                .map(|e| (f64::from(e.x), f64::from(e.y)))
                .filter(|&(x, y)| patch.contains(x, y)),
        );
        for s in run(&events, patch) {
            prop_assert!(inside_hull(&points, (s.u, s.v)), "({}, {}) outside hull", s.u, s.v);
        }
    }
}

#[test]
fn sinusoidal_cloud_is_attenuated_by_the_gain() {
    let (amp, omega) = (20.0, 300.0);
    // one event every 10 us at the rounded position of a point on a circle
    let events: Vec<Event> = (0..100_000u64)
        .map(|k| {
            let t = k * 10;
            let phase = omega * t as f64 * 1e-6;
            let x = (100.0 + amp * phase.cos()).round() as u16;
            let y = (80.0 + amp * phase.sin()).round() as u16;
            Event::new(t, x, y, Polarity::On)
        })
        .collect();
    let patch = PatchSpec::new(0, (100.0, 80.0), 30.0);
    for tau in [2e-4, 1e-3, 3e-3] {
        let cfg = TrackerConfig {
            tau_s: tau,
            ..TrackerConfig::default()
        };
        let samples = track_stream(&events, &[patch], cfg, &geometry())
            .unwrap()
            .remove(0);
        // skip the start-up transient
        let steady: Vec<TrackSample> = samples.into_iter().filter(|s| s.t > 100_000).collect();
        let expected = amp * attenuation_gain(omega, tau);
        for axis in Axis::BOTH {
            let fit = fit_sinusoid(&steady, axis, omega).unwrap();
            let measured = fit.a.hypot(fit.b);
            assert!(
                (measured / expected - 1.0).abs() < 0.01,
                "tau {tau} {axis:?}: {measured} vs {expected}"
            );
        }
    }
}
