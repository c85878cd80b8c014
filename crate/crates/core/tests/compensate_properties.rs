use evshake::apps::{default_board_scene, default_geometry, default_oscillation};
use evshake::compensate::{accumulate_compensated, compensate_fixed, AxisPair, RegionMap};
use evshake::ekf::Snapshot;
use evshake::frame::disjoint_windows;
use evshake::metrics::{frame_variance, median};
use evshake::sim::{simulate, EventModel, MotionSource, OscillatorConfig};
use evshake::{Event, Polarity, SensorGeometry};
use proptest::prelude::*;

fn snapshot() -> impl Strategy<Value = Snapshot> {
    (
        -3.0f64..3.0,
        30.0f64..500.0,
        -6.0f64..6.0,
        -6.0f64..6.0,
        0u64..1_000_000,
    )
        .prop_map(|(theta, omega, a, b, t_last)| Snapshot {
            theta,
            omega,
            a,
            b,
            c: 0.0,
            t_last,
        })
}

fn stream() -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec((0u64..500, 0u16..40, 0u16..30, any::<bool>()), 0..300).prop_map(|raw| {
        let mut t = 0;
        raw.into_iter()
            .map(|(dt, x, y, on)| {
                t += dt;
                Event::new(t, x, y, Polarity::from_sign(on))
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn order_and_count_are_preserved(events in stream(), u in snapshot(), v in snapshot()) {
        let g = SensorGeometry::centered(40, 30, 30.0).unwrap();
        let out = compensate_fixed(&events, &RegionMap::single(AxisPair { u, v }), &g).unwrap();
        prop_assert_eq!(out.len(), events.len());
        for (c, e) in out.iter().zip(&events) {
            prop_assert_eq!(c.t, e.t);
            prop_assert_eq!(c.polarity, e.polarity);
            prop_assert!(c.xi < 40 && c.yi < 30);
            let outside = c.x.round() < 0.0 || c.x.round() > 39.0 || c.y.round() < 0.0 || c.y.round() > 29.0;
            prop_assert_eq!(c.out_of_bounds, outside);
        }
    }
}

#[test]
fn true_parameters_recover_virtual_positions() {
    let g = default_geometry();
    let osc = OscillatorConfig::new(2.5, 1.5, 280.0, 0.7, -1.1).unwrap();
    let sim = simulate(
        &default_board_scene(),
        &MotionSource::image_plane(osc),
        &g,
        0.2,
        &EventModel::default(),
        5,
    )
    .unwrap();
    let out = compensate_fixed(
        &sim.events,
        &RegionMap::single(AxisPair::from_oscillator(&osc)),
        &g,
    )
    .unwrap();
    let mut within = 0;
    for (e, c) in sim.events.iter().zip(&out) {
        let (vx, vy) = sim.virtual_position(e);
        let r = (c.x - vx).hypot(c.y - vy);
        assert!(r < 1e-9, "residual {r}");
        within += usize::from(r < 1.0);
    }
    assert!(within as f64 >= 0.99 * out.len() as f64);
}

#[test]
fn wrong_frequency_blurs_the_compensated_frames() {
    let g = default_geometry();
    let osc = default_oscillation();
    let sim = simulate(
        &default_board_scene(),
        &MotionSource::image_plane(osc),
        &g,
        0.3,
        &EventModel::default(),
        1,
    )
    .unwrap();
    let variance = |pair: AxisPair| {
        let out = compensate_fixed(&sim.events, &RegionMap::single(pair), &g).unwrap();
        let v: Vec<f64> = disjoint_windows(0, 300_000, 10_000)
            .into_iter()
            .map(|w| frame_variance(&accumulate_compensated(&out, w, 160, 120)).unwrap())
            .collect();
        median(&v)
    };
    let truth = AxisPair::from_oscillator(&osc);
    let mut corrupt = truth;
    corrupt.u.omega *= 1.1;
    corrupt.v.omega *= 1.1;
    let (good, bad) = (variance(truth), variance(corrupt));
    assert!(
        bad < good,
        "variance {bad} with +10% omega, {good} with the truth"
    );
}
