//! Per-event removal of the predicted oscillation.
//!
//! Every event is moved by minus the oscillatory offset predicted for its
//! timestamp, which places it in the static virtual frame. States are either
//! fixed up front or estimated online from centroid trackers.

use std::hint::black_box;
use std::io::{BufWriter, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ekf::{AxisFilter, NoiseConfig, SinusoidState, Snapshot};
use crate::error::{Error, Result};
use crate::event::{Event, Polarity, SensorGeometry};
use crate::frame::AccumFrame;
use crate::freqest::{initialize, InitConfig, SinusoidInit};
use crate::sim::{OscillatorConfig, Rect};
use crate::track::{PatchSpec, TrackSample, Tracker, TrackerConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensatedEvent {
    pub t: u64,
    pub x: f64,
    pub y: f64,
    pub xi: u16,
    pub yi: u16,
    pub polarity: Polarity,
    pub out_of_bounds: bool,
}

/// Oscillation of both axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisPair {
    pub u: Snapshot,
    pub v: Snapshot,
}

impl AxisPair {
    pub fn zero() -> Self {
        AxisPair {
            u: Snapshot::zero(),
            v: Snapshot::zero(),
        }
    }

    pub fn from_states(u: &SinusoidState, v: &SinusoidState) -> Self {
        AxisPair {
            u: Snapshot::from(u),
            v: Snapshot::from(v),
        }
    }

    /// Exact states for a known oscillation: `A cos(ωt + φ)` is
    /// `a sin ωt + b cos ωt` with `a = -A sin φ`, `b = A cos φ`.
    pub fn from_oscillator(osc: &OscillatorConfig) -> Self {
        let axis = |amp: f64, phi: f64| Snapshot {
            theta: 0.0,
            omega: osc.omega,
            a: -amp * phi.sin(),
            b: amp * phi.cos(),
            c: 0.0,
            t_last: 0,
        };
        AxisPair {
            u: axis(osc.amp_x, osc.phi_x),
            v: axis(osc.amp_y, osc.phi_y),
        }
    }

    /// Motion from batch fits of centroid samples, with the tracker's
    /// low-pass of time constant `tau_s` removed.
    pub fn from_fits(u: &SinusoidInit, v: &SinusoidInit, tau_s: f64) -> Result<Self> {
        let noise = NoiseConfig::default();
        let su = SinusoidState::init(u, &noise)?.lag_corrected(tau_s);
        let sv = SinusoidState::init(v, &noise)?.lag_corrected(tau_s);
        Ok(AxisPair::from_states(&su, &sv))
    }

    /// Mean motion of several pairs, aligned at their latest reference time.
    pub fn average(pairs: &[AxisPair]) -> Self {
        match pairs {
            [] => AxisPair::zero(),
            [one] => *one,
            _ => average_pairs(pairs),
        }
    }

    #[inline]
    pub fn offset_at(&self, t_us: u64) -> (f64, f64) {
        (self.u.offset_at(t_us), self.v.offset_at(t_us))
    }
}

/// Which motion applies where. The first region containing the raw pixel
/// wins; pixels outside every region use `fallback`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    pub regions: Vec<(Rect, AxisPair)>,
    pub fallback: AxisPair,
}

impl RegionMap {
    pub fn single(pair: AxisPair) -> Self {
        RegionMap {
            regions: Vec::new(),
            fallback: pair,
        }
    }

    #[inline]
    pub fn lookup(&self, x: f64, y: f64) -> &AxisPair {
        self.regions
            .iter()
            .find(|(r, _)| r.contains(x, y))
            .map_or(&self.fallback, |(_, p)| p)
    }
}

#[inline]
fn place(e: &Event, dx: f64, dy: f64, width: u16, height: u16) -> CompensatedEvent {
    let x = f64::from(e.x) - dx;
    let y = f64::from(e.y) - dy;
    let rx = x.round();
    let ry = y.round();
    let max_x = f64::from(width - 1);
    let max_y = f64::from(height - 1);
    let out = !(rx >= 0.0 && ry >= 0.0 && rx <= max_x && ry <= max_y);
    CompensatedEvent {
        t: e.t,
        x,
        y,
        xi: rx.clamp(0.0, max_x) as u16,
        yi: ry.clamp(0.0, max_y) as u16,
        polarity: e.polarity,
        out_of_bounds: out,
    }
}

/// Hot path for a single motion: offsets are recomputed only when the
/// timestamp changes.
pub fn compensate_into(
    events: &[Event],
    pair: &AxisPair,
    geometry: &SensorGeometry,
    out: &mut Vec<CompensatedEvent>,
) {
    out.reserve(events.len());
    let mut cached_t = u64::MAX;
    let mut off = (0.0, 0.0);
    for e in events {
        if e.t != cached_t {
            cached_t = e.t;
            off = pair.offset_at(e.t);
        }
        out.push(place(e, off.0, off.1, geometry.width, geometry.height));
    }
}

fn check_order(events: &[Event]) -> Result<()> {
    if let Some(i) = events.windows(2).position(|w| w[1].t < w[0].t) {
        return Err(Error::Ordering {
            index: i as u64 + 1,
            previous: events[i].t,
            t: events[i + 1].t,
        });
    }
    Ok(())
}

/// Compensates a whole stream with fixed motion.
pub fn compensate_fixed(
    events: &[Event],
    map: &RegionMap,
    geometry: &SensorGeometry,
) -> Result<Vec<CompensatedEvent>> {
    check_order(events)?;
    let mut out = Vec::with_capacity(events.len());
    if map.regions.is_empty() {
        compensate_into(events, &map.fallback, geometry, &mut out);
    } else {
        for e in events {
            let pair = map.lookup(f64::from(e.x), f64::from(e.y));
            let (dx, dy) = pair.offset_at(e.t);
            out.push(place(e, dx, dy, geometry.width, geometry.height));
        }
    }
    Ok(out)
}

/// [`compensate_fixed`] split over threads; output order matches input.
pub fn compensate_fixed_par(
    events: &[Event],
    map: &RegionMap,
    geometry: &SensorGeometry,
    chunk: usize,
) -> Result<Vec<CompensatedEvent>> {
    check_order(events)?;
    let parts: Vec<Vec<CompensatedEvent>> = events
        .par_chunks(chunk.max(1))
        .map(|c| {
            let mut out = Vec::with_capacity(c.len());
            if map.regions.is_empty() {
                compensate_into(c, &map.fallback, geometry, &mut out);
            } else {
                out.extend(c.iter().map(|e| {
                    let (dx, dy) = map.lookup(f64::from(e.x), f64::from(e.y)).offset_at(e.t);
                    place(e, dx, dy, geometry.width, geometry.height)
                }));
            }
            out
        })
        .collect();
    Ok(parts.concat())
}

/// Trackers feeding a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedRegion {
    /// `None` covers the pixels no other region claims.
    pub region: Option<Rect>,
    pub patch_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingConfig {
    pub patches: Vec<PatchSpec>,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Events are buffered for this long before the filters start.
    #[serde(default = "default_init_window")]
    pub init_window_s: f64,
    #[serde(default = "default_capacity")]
    pub buffer_capacity: usize,
    /// Empty means every tracker drives the whole frame.
    #[serde(default)]
    pub regions: Vec<TrackedRegion>,
    #[serde(default)]
    pub record_traces: bool,
}

fn default_init_window() -> f64 {
    0.2
}

fn default_capacity() -> usize {
    50_000_000
}

impl TrackingConfig {
    pub fn new(patches: Vec<PatchSpec>) -> Self {
        TrackingConfig {
            patches,
            tracker: TrackerConfig::default(),
            init: InitConfig::default(),
            noise: NoiseConfig::default(),
            init_window_s: default_init_window(),
            buffer_capacity: default_capacity(),
            regions: Vec::new(),
            record_traces: false,
        }
    }
}

/// Filters driven by one tracker.
#[derive(Debug, Clone)]
pub struct TrackerFilters {
    pub patch: PatchSpec,
    pub u: AxisFilter,
    pub v: AxisFilter,
    /// Samples consumed after initialization, in arrival order.
    pub samples: Vec<TrackSample>,
    /// `(t_us, A_u, A_v)` after every update, lag-corrected.
    pub amplitudes: Vec<(u64, f64, f64)>,
}

impl TrackerFilters {
    fn step(&mut self, s: &TrackSample, tau_s: f64) -> Result<(f64, f64)> {
        let iu = self.u.step(s.t, s.u)?;
        let iv = self.v.step(s.t, s.v)?;
        let au = self.u.state.lag_corrected(tau_s).amplitude_phase().0;
        let av = self.v.state.lag_corrected(tau_s).amplitude_phase().0;
        self.amplitudes.push((s.t, au, av));
        self.samples.push(*s);
        Ok((iu.value, iv.value))
    }

    /// Current motion with the tracker's low-pass removed.
    pub fn pair(&self, tau_s: f64) -> AxisPair {
        AxisPair::from_states(
            &self.u.state.lag_corrected(tau_s),
            &self.v.state.lag_corrected(tau_s),
        )
    }
}

struct RegionFilters {
    region: Option<Rect>,
    members: Vec<usize>,
}

/// Streaming compensation with online estimation. Events arriving before the
/// filters start are held in a bounded buffer and released once they can be
/// compensated.
pub struct TrackingCompensator {
    cfg: TrackingConfig,
    geometry: SensorGeometry,
    trackers: Vec<Tracker>,
    pending_samples: Vec<Vec<TrackSample>>,
    buffer: Vec<Event>,
    filters: Option<Vec<Option<TrackerFilters>>>,
    regions: Vec<RegionFilters>,
    first_t: Option<u64>,
    last_t: Option<u64>,
    count: u64,
    /// Innovations `(patch id, t_us, u, v)`.
    pub innovations: Vec<(u32, u64, f64, f64)>,
}

impl TrackingCompensator {
    pub fn new(cfg: TrackingConfig, geometry: &SensorGeometry) -> Result<Self> {
        if cfg.patches.is_empty() {
            return Err(Error::config(
                "tracking compensation needs at least one patch",
            ));
        }
        if !(cfg.init_window_s > 0.0) {
            return Err(Error::config("initialization window must be positive"));
        }
        cfg.noise.validate()?;
        let trackers = cfg
            .patches
            .iter()
            .map(|p| Tracker::new(*p, cfg.tracker, geometry))
            .collect::<Result<Vec<_>>>()?;
        let index_of = |id: u32| {
            cfg.patches
                .iter()
                .position(|p| p.id == id)
                .ok_or_else(|| Error::config(format!("region refers to unknown patch {id}")))
        };
        let regions = if cfg.regions.is_empty() {
            vec![RegionFilters {
                region: None,
                members: (0..cfg.patches.len()).collect(),
            }]
        } else {
            cfg.regions
                .iter()
                .map(|r| {
                    Ok(RegionFilters {
                        region: r.region,
                        members: r
                            .patch_ids
                            .iter()
                            .map(|&id| index_of(id))
                            .collect::<Result<_>>()?,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        };
        Ok(TrackingCompensator {
            pending_samples: vec![Vec::new(); trackers.len()],
            trackers,
            buffer: Vec::new(),
            filters: None,
            regions,
            first_t: None,
            last_t: None,
            count: 0,
            innovations: Vec::new(),
            geometry: *geometry,
            cfg,
        })
    }

    pub fn is_initialized(&self) -> bool {
        self.filters.is_some()
    }

    /// Feeds one event; returns every event that became ready.
    pub fn push(&mut self, e: &Event) -> Result<Vec<CompensatedEvent>> {
        if let Some(prev) = self.last_t {
            if e.t < prev {
                return Err(Error::Ordering {
                    index: self.count,
                    previous: prev,
                    t: e.t,
                });
            }
        }
        self.last_t = Some(e.t);
        self.count += 1;
        let first = *self.first_t.get_or_insert(e.t);

        let mut fresh = Vec::new();
        for (i, tr) in self.trackers.iter_mut().enumerate() {
            if let Some(s) = tr.ingest(e)? {
                fresh.push((i, s));
            }
        }

        if self.filters.is_none() {
            for (i, s) in fresh {
                self.pending_samples[i].push(s);
            }
            if self.buffer.len() >= self.cfg.buffer_capacity {
                return Err(Error::BufferOverflow(self.cfg.buffer_capacity));
            }
            self.buffer.push(*e);
            if (e.t - first) as f64 * 1e-6 >= self.cfg.init_window_s {
                self.start_filters()?;
                return Ok(self.release_buffer());
            }
            return Ok(Vec::new());
        }

        let tau = self.cfg.tracker.tau_s;
        let filters = self.filters.as_mut().unwrap();
        for (i, s) in fresh {
            if let Some(f) = filters[i].as_mut() {
                let (iu, iv) = f.step(&s, tau)?;
                self.innovations.push((s.id, s.t, iu, iv));
            }
        }
        let pair = self.pair_for(f64::from(e.x), f64::from(e.y));
        let (dx, dy) = pair.offset_at(e.t);
        Ok(vec![place(
            e,
            dx,
            dy,
            self.geometry.width,
            self.geometry.height,
        )])
    }

    /// Flushes the buffer at end of stream, starting the filters on whatever
    /// was collected if the window never filled.
    pub fn finish(&mut self) -> Result<Vec<CompensatedEvent>> {
        if self.filters.is_none() {
            if self.buffer.is_empty() {
                return Ok(Vec::new());
            }
            self.start_filters()?;
        }
        Ok(self.release_buffer())
    }

    fn start_filters(&mut self) -> Result<()> {
        let tau = self.cfg.tracker.tau_s;
        let mut filters = Vec::with_capacity(self.trackers.len());
        for (i, samples) in self.pending_samples.iter().enumerate() {
            let patch = self.cfg.patches[i];
            let init = match initialize(samples, &self.cfg.init) {
                Ok(init) => init,
                Err(Error::NoPeak | Error::InsufficientData(_) | Error::DegenerateFit(_)) => {
                    filters.push(None);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut f = TrackerFilters {
                patch,
                u: AxisFilter::new(&init.u.fit, self.cfg.noise, self.cfg.record_traces)?,
                v: AxisFilter::new(&init.v.fit, self.cfg.noise, self.cfg.record_traces)?,
                samples: Vec::new(),
                amplitudes: Vec::new(),
            };
            for s in samples {
                let (iu, iv) = f.step(s, tau)?;
                self.innovations.push((s.id, s.t, iu, iv));
            }
            filters.push(Some(f));
        }
        for r in &self.regions {
            if r.members.iter().all(|&i| filters[i].is_none()) {
                return Err(Error::InsufficientData(format!(
                    "no tracker in region {:?} found an oscillation",
                    r.region
                )));
            }
        }
        self.filters = Some(filters);
        self.pending_samples.iter_mut().for_each(Vec::clear);
        Ok(())
    }

    fn release_buffer(&mut self) -> Vec<CompensatedEvent> {
        let buffer = std::mem::take(&mut self.buffer);
        buffer
            .iter()
            .map(|e| {
                let (dx, dy) = self.pair_for(f64::from(e.x), f64::from(e.y)).offset_at(e.t);
                place(e, dx, dy, self.geometry.width, self.geometry.height)
            })
            .collect()
    }

    fn pair_for(&self, x: f64, y: f64) -> AxisPair {
        let filters = self.filters.as_ref().expect("filters started");
        let region = self
            .regions
            .iter()
            .find(|r| r.region.is_some_and(|rect| rect.contains(x, y)))
            .or_else(|| self.regions.iter().find(|r| r.region.is_none()));
        let Some(region) = region else {
            return AxisPair::zero();
        };
        let tau = self.cfg.tracker.tau_s;
        let pairs: Vec<AxisPair> = region
            .members
            .iter()
            .filter_map(|&i| filters[i].as_ref().map(|f| f.pair(tau)))
            .collect();
        if pairs.len() == 1 {
            return pairs[0];
        }
        average_pairs(&pairs)
    }

    pub fn filters(&self) -> Vec<&TrackerFilters> {
        self.filters.iter().flatten().flatten().collect()
    }

    pub fn into_filters(self) -> Vec<TrackerFilters> {
        self.filters.into_iter().flatten().flatten().collect()
    }
}

/// A pair whose offsets equal the mean of the given pairs' offsets at any
/// time, valid when they share one frequency. Phases are aligned to the
/// latest `t_last`.
fn average_pairs(pairs: &[AxisPair]) -> AxisPair {
    let t_ref = pairs
        .iter()
        .map(|p| p.u.t_last.max(p.v.t_last))
        .max()
        .unwrap_or(0);
    let n = pairs.len() as f64;
    let mean_axis = |pick: fn(&AxisPair) -> Snapshot| {
        let mut a = 0.0;
        let mut b = 0.0;
        let mut omega = 0.0;
        let mut c = 0.0;
        for p in pairs {
            let s = pick(p);
            let (sn, cs) = s.phase_at(t_ref).sin_cos();
            // a sin θ + b cos θ with θ = θ_ref + ω (t - t_ref) expressed at θ_ref = 0
            a += s.a * cs - s.b * sn;
            b += s.a * sn + s.b * cs;
            omega += s.omega;
            c += s.c;
        }
        Snapshot {
            theta: 0.0,
            omega: omega / n,
            a: a / n,
            b: b / n,
            c: c / n,
            t_last: t_ref,
        }
    };
    AxisPair {
        u: mean_axis(|p| p.u),
        v: mean_axis(|p| p.v),
    }
}

pub enum CompensationMode {
    FixedState(RegionMap),
    Tracking(TrackingConfig),
}

pub struct CompensationOutput {
    pub events: Vec<CompensatedEvent>,
    /// Filters of the tracking mode; empty for fixed states.
    pub filters: Vec<TrackerFilters>,
    pub innovations: Vec<(u32, u64, f64, f64)>,
}

pub fn compensate_stream(
    events: &[Event],
    mode: &CompensationMode,
    geometry: &SensorGeometry,
) -> Result<CompensationOutput> {
    match mode {
        CompensationMode::FixedState(map) => Ok(CompensationOutput {
            events: compensate_fixed(events, map, geometry)?,
            filters: Vec::new(),
            innovations: Vec::new(),
        }),
        CompensationMode::Tracking(cfg) => {
            let mut comp = TrackingCompensator::new(cfg.clone(), geometry)?;
            let mut out = Vec::with_capacity(events.len());
            for e in events {
                out.extend(comp.push(e)?);
            }
            out.extend(comp.finish()?);
            let innovations = std::mem::take(&mut comp.innovations);
            Ok(CompensationOutput {
                events: out,
                filters: comp.into_filters(),
                innovations,
            })
        }
    }
}

/// Counts in-bounds compensated events per rounded pixel over `[t0, t1)`.
pub fn accumulate_compensated(
    events: &[CompensatedEvent],
    window: (u64, u64),
    width: usize,
    height: usize,
) -> AccumFrame {
    let mut frame = AccumFrame::zeros(width, height, window);
    let lo = events.partition_point(|e| e.t < window.0);
    let hi = events.partition_point(|e| e.t < window.1);
    for e in events[lo..hi].iter().filter(|e| !e.out_of_bounds) {
        frame.add(e.t, i64::from(e.xi), i64::from(e.yi));
    }
    frame
}

/// Rounded, clamped events in the core event type.
pub fn to_events(events: &[CompensatedEvent]) -> Vec<Event> {
    events
        .iter()
        .map(|c| Event::new(c.t, c.xi, c.yi, c.polarity))
        .collect()
}

/// CSV `t_us,x,y,p` with sub-pixel coordinates to three decimals.
pub fn write_compensated_csv<W: Write>(sink: W, events: &[CompensatedEvent]) -> Result<()> {
    let mut w = BufWriter::new(sink);
    writeln!(w, "t_us,x,y,p")?;
    for e in events {
        writeln!(w, "{},{:.3},{:.3},{}", e.t, e.x, e.y, e.polarity.as_i8())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub events: usize,
    pub runs: usize,
    pub ns_per_event_mean: f64,
    pub ns_per_event_std: f64,
    pub mev_per_s: f64,
}

/// Uniformly scattered events at `rate_mev` million events per second.
pub fn synthetic_events(
    n: usize,
    geometry: &SensorGeometry,
    rate_mev: f64,
    seed: u64,
) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let t = (i as f64 / rate_mev) as u64;
            Event::new(
                t,
                rng.gen_range(0..geometry.width),
                rng.gen_range(0..geometry.height),
                Polarity::from_sign(rng.gen()),
            )
        })
        .collect()
}

/// Times the fixed-state hot path over preloaded events. Output goes to a
/// reused chunk buffer so that allocation stays out of the measurement.
pub fn throughput_bench(
    events: &[Event],
    pair: &AxisPair,
    geometry: &SensorGeometry,
    runs: usize,
) -> BenchReport {
    const CHUNK: usize = 1 << 16;
    let mut out = Vec::with_capacity(CHUNK);
    let mut per_event = Vec::with_capacity(runs);
    for _ in 0..runs.max(1) {
        let start = Instant::now();
        let mut sink = 0.0;
        for c in events.chunks(CHUNK) {
            out.clear();
            compensate_into(c, pair, geometry, &mut out);
            sink += out[out.len() - 1].x;
        }
        black_box(sink);
        per_event.push(start.elapsed().as_nanos() as f64 / events.len().max(1) as f64);
    }
    let n = per_event.len() as f64;
    let mean = per_event.iter().sum::<f64>() / n;
    let var = per_event.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    BenchReport {
        events: events.len(),
        runs: per_event.len(),
        ns_per_event_mean: mean,
        ns_per_event_std: var.sqrt(),
        mev_per_s: 1e3 / mean,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::camera_offset;

    fn geom() -> SensorGeometry {
        SensorGeometry::centered(64, 48, 50.0).unwrap()
    }

    fn snap(omega: f64, a: f64, b: f64) -> Snapshot {
        Snapshot {
            theta: 0.0,
            omega,
            a,
            b,
            c: 0.0,
            t_last: 0,
        }
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let g = geom();
        let events = synthetic_events(5000, &g, 1.0, 1);
        let out = compensate_fixed(&events, &RegionMap::single(AxisPair::zero()), &g).unwrap();
        assert_eq!(out.len(), events.len());
        for (e, c) in events.iter().zip(&out) {
            assert_eq!((c.x, c.y), (f64::from(e.x), f64::from(e.y)));
            assert_eq!((c.xi, c.yi, c.t, c.polarity), (e.x, e.y, e.t, e.polarity));
            assert!(!c.out_of_bounds);
        }
    }

    #[test]
    fn subtracts_predicted_offset() {
        let g = geom();
        let pair = AxisPair {
            u: snap(100.0, 2.0, 0.0),
            v: snap(100.0, 0.0, -1.5),
        };
        let e = Event::new(5000, 10, 0, Polarity::Off);
        let c = compensate_fixed(&[e], &RegionMap::single(pair), &g).unwrap()[0];
        let th = 100.0 * 5e-3f64;
        assert!((c.x - (10.0 - 2.0 * th.sin())).abs() < 1e-12);
        assert!((c.y - (0.0 + 1.5 * th.cos())).abs() < 1e-12);
        // y = 0 + 1.5 cos(0.5) rounds to 1
        assert_eq!((c.yi, c.out_of_bounds), (1, false));
    }

    #[test]
    fn out_of_bounds_is_clamped_and_flagged() {
        let g = geom();
        let pair = AxisPair {
            u: snap(0.0, 0.0, 5.0),
            v: snap(0.0, 0.0, 0.0),
        };
        let c = compensate_fixed(
            &[Event::new(0, 2, 3, Polarity::On)],
            &RegionMap::single(pair),
            &g,
        )
        .unwrap()[0];
        assert_eq!((c.xi, c.out_of_bounds), (0, true));
        assert_eq!(c.x, -3.0);
    }

    #[test]
    fn regions_pick_their_motion() {
        let g = geom();
        let left = AxisPair {
            u: snap(0.0, 0.0, 1.0),
            v: snap(0.0, 0.0, 0.0),
        };
        let map = RegionMap {
            regions: vec![(
                Rect {
                    x0: 0.0,
                    y0: 0.0,
                    x1: 32.0,
                    y1: 48.0,
                },
                left,
            )],
            fallback: AxisPair::zero(),
        };
        let ev = [
            Event::new(0, 10, 5, Polarity::On),
            Event::new(0, 40, 5, Polarity::On),
        ];
        let out = compensate_fixed(&ev, &map, &g).unwrap();
        assert_eq!(out[0].x, 9.0);
        assert_eq!(out[1].x, 40.0);
    }

    #[test]
    fn parallel_matches_serial_and_rejects_disorder() {
        let g = geom();
        let events = synthetic_events(20_000, &g, 2.0, 4);
        let pair = AxisPair {
            u: snap(300.0, 1.0, 2.0),
            v: snap(300.0, -2.0, 1.0),
        };
        let map = RegionMap::single(pair);
        assert_eq!(
            compensate_fixed(&events, &map, &g).unwrap(),
            compensate_fixed_par(&events, &map, &g, 777).unwrap()
        );
        let bad = [
            Event::new(5, 0, 0, Polarity::On),
            Event::new(4, 0, 0, Polarity::On),
        ];
        assert!(matches!(
            compensate_fixed(&bad, &map, &g),
            Err(Error::Ordering { index: 1, .. })
        ));
    }

    #[test]
    fn averaged_pairs_average_offsets() {
        let p1 = AxisPair {
            u: Snapshot {
                theta: 0.4,
                t_last: 1000,
                ..snap(200.0, 1.0, 0.5)
            },
            v: snap(200.0, 0.0, 1.0),
        };
        let p2 = AxisPair {
            u: Snapshot {
                theta: -1.0,
                t_last: 3000,
                ..snap(200.0, 2.0, -0.5)
            },
            v: snap(200.0, 1.0, 0.0),
        };
        let avg = average_pairs(&[p1, p2]);
        for t in [0u64, 1234, 99_999] {
            let (a, b) = (p1.offset_at(t), p2.offset_at(t));
            let m = avg.offset_at(t);
            assert!((m.0 - 0.5 * (a.0 + b.0)).abs() < 1e-9);
            assert!((m.1 - 0.5 * (a.1 + b.1)).abs() < 1e-9);
        }
    }

    #[test]
    fn oscillator_states_reproduce_offsets() {
        let osc = OscillatorConfig::new(2.5, 1.5, 250.0, 0.7, -2.0).unwrap();
        let pair = AxisPair::from_oscillator(&osc);
        for t in [0u64, 777, 123_456, 2_000_001] {
            let (u, v) = pair.offset_at(t);
            let (x, y) = camera_offset(t as f64 * 1e-6, &osc);
            assert!((u - x).abs() < 1e-12 && (v - y).abs() < 1e-12);
        }
    }

    #[test]
    fn compensated_csv_has_three_decimals() {
        let c = CompensatedEvent {
            t: 7,
            x: 1.23456,
            y: -0.5,
            xi: 1,
            yi: 0,
            polarity: Polarity::Off,
            out_of_bounds: true,
        };
        let mut buf = Vec::new();
        write_compensated_csv(&mut buf, &[c]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t_us,x,y,p\n7,1.235,-0.500,-1\n"
        );
    }

    #[test]
    fn bench_reports_positive_rate() {
        let g = geom();
        let events = synthetic_events(100_000, &g, 10.0, 2);
        let r = throughput_bench(&events, &AxisPair::zero(), &g, 3);
        assert!(r.ns_per_event_mean > 0.0 && r.ns_per_event_mean.is_finite());
        assert_eq!(r.runs, 3);
    }
}
