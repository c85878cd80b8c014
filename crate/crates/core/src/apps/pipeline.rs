use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::scenes::{default_board_scene, default_geometry, default_oscillation};
use crate::compensate::{
    accumulate_compensated, compensate_stream, to_events, write_compensated_csv, AxisPair,
    CompensatedEvent, CompensationMode, TrackingConfig,
};
use crate::ekf::{write_trace_csv, AxisFilter, SinusoidState};
use crate::error::{Error, Result};
use crate::event::{Event, SensorGeometry};
use crate::frame::{accumulate, disjoint_windows, AccumFrame};
use crate::freqest::{initialize, MotionInit};
use crate::io::write_events_file;
use crate::metrics::{
    median, window_metrics, write_metrics_csv, EdgeConfig, MetricRow, MetricSelection,
};
use crate::sim::{simulate, EventModel, MotionSource, PlaneTruth, SceneSpec};
use crate::track::{track_stream, write_track_csv, PatchSpec, TrackSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Simulate,
    Track,
    Estimate,
    Ekf,
    Compensate,
    Metrics,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Simulate,
        Stage::Track,
        Stage::Estimate,
        Stage::Ekf,
        Stage::Compensate,
        Stage::Metrics,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Track => "track",
            Stage::Estimate => "estimate",
            Stage::Ekf => "ekf",
            Stage::Compensate => "compensate",
            Stage::Metrics => "metrics",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub window_ms: f64,
    pub selection: MetricSelection,
    pub edges: EdgeConfig,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            window_ms: 10.0,
            selection: MetricSelection::default(),
            edges: EdgeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub geometry: SensorGeometry,
    pub scene: SceneSpec,
    pub motion: MotionSource,
    pub model: EventModel,
    pub duration_s: f64,
    pub seed: u64,
    /// Stages to run; must be a leading run of the full stage list.
    pub stages: Vec<Stage>,
    /// File name of the simulated events; `.csv` selects CSV.
    pub event_file: String,
    pub tracking: TrackingConfig,
    pub metrics: MetricsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            geometry: default_geometry(),
            scene: default_board_scene(),
            motion: MotionSource::image_plane(default_oscillation()),
            model: EventModel {
                noise_rate_hz: 1.0,
                ..EventModel::default()
            },
            duration_s: 1.0,
            seed: 1,
            stages: Stage::ALL.to_vec(),
            event_file: "events.evst".into(),
            tracking: TrackingConfig::new(vec![PatchSpec::new(0, (80.0, 60.0), 56.0)]),
            metrics: MetricsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() || self.stages[..] != Stage::ALL[..self.stages.len().min(7)] {
            return Err(Error::config(
                "stages must start at `simulate` and follow simulate, track, estimate, ekf, compensate, metrics, report",
            ));
        }
        if !(self.metrics.window_ms > 0.0) {
            return Err(Error::config("metric window must be positive"));
        }
        if self.event_file.is_empty() || Path::new(&self.event_file).components().count() != 1 {
            return Err(Error::config("event file must be a plain file name"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub wall_ms: f64,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    /// Set when a stage failed; the stages list ends before it.
    pub error: Option<String>,
}

#[derive(Serialize)]
struct TruthSidecar<'a> {
    geometry: &'a SensorGeometry,
    duration_us: u64,
    seed: u64,
    planes: &'a [PlaneTruth],
}

/// Batch initialization result of one tracker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerEstimate {
    pub id: u32,
    pub init: Option<MotionInit>,
    /// Why initialization failed, when it did.
    pub error: Option<String>,
}

/// Output of the `estimate` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    /// Time constant of the trackers that produced the samples.
    pub tau_s: f64,
    pub trackers: Vec<TrackerEstimate>,
}

impl EstimateReport {
    /// Fits the first `cfg.init_window_s` of every tracker's samples.
    /// Trackers without a usable oscillation are recorded with their error.
    pub fn from_samples(streams: &[Vec<TrackSample>], cfg: &TrackingConfig) -> Result<Self> {
        let mut trackers = Vec::with_capacity(streams.len());
        for (patch, samples) in cfg.patches.iter().zip(streams) {
            let cut = samples.first().map_or(0, |s| s.t) + (cfg.init_window_s * 1e6) as u64;
            let n = samples.partition_point(|s| s.t < cut);
            let (init, error) = match initialize(&samples[..n], &cfg.init) {
                Ok(init) => (Some(init), None),
                Err(e @ (Error::NoPeak | Error::InsufficientData(_) | Error::DegenerateFit(_))) => {
                    (None, Some(e.to_string()))
                }
                Err(e) => return Err(e),
            };
            trackers.push(TrackerEstimate {
                id: patch.id,
                init,
                error,
            });
        }
        if trackers.iter().all(|t| t.init.is_none()) {
            return Err(Error::InsufficientData(
                "no tracker found an oscillation".into(),
            ));
        }
        Ok(EstimateReport {
            tau_s: cfg.tracker.tau_s,
            trackers,
        })
    }

    /// Lag-corrected motion averaged over the trackers that initialized.
    pub fn motion(&self) -> Result<AxisPair> {
        let pairs = self
            .trackers
            .iter()
            .filter_map(|t| t.init.as_ref())
            .map(|i| AxisPair::from_fits(&i.u.fit, &i.v.fit, self.tau_s))
            .collect::<Result<Vec<_>>>()?;
        if pairs.is_empty() {
            return Err(Error::InsufficientData(
                "estimate holds no initialized tracker".into(),
            ));
        }
        Ok(AxisPair::average(&pairs))
    }
}

#[derive(Serialize)]
struct FinalState {
    id: u32,
    u: SinusoidState,
    v: SinusoidState,
    rejected_u: usize,
    rejected_v: usize,
}

#[derive(Serialize)]
struct MetricSummary {
    entropy: f64,
    variance: f64,
    grad_mag: f64,
    num_components: f64,
    avg_len: f64,
    junctions: f64,
}

impl MetricSummary {
    fn of(rows: &[MetricRow]) -> Self {
        let col = |f: fn(&MetricRow) -> f64| median(&rows.iter().map(f).collect::<Vec<_>>());
        MetricSummary {
            entropy: col(|r| r.entropy),
            variance: col(|r| r.variance),
            grad_mag: col(|r| r.grad_mag),
            num_components: col(|r| r.num_components as f64),
            avg_len: col(|r| r.avg_len),
            junctions: col(|r| r.junctions as f64),
        }
    }
}

#[derive(Serialize)]
struct TrackerSummary {
    id: u32,
    omega: f64,
    amplitude_u: f64,
    amplitude_v: f64,
}

#[derive(Serialize)]
struct Report {
    events: usize,
    truth: Vec<PlaneTruth>,
    trackers: Vec<TrackerSummary>,
    /// RMS distance between compensated and true virtual-frame positions.
    residual_rms_px: Option<f64>,
    within_1px: Option<f64>,
    metrics_raw: Option<MetricSummary>,
    metrics_compensated: Option<MetricSummary>,
}

#[derive(Default)]
struct RunState {
    geometry: Option<SensorGeometry>,
    events: Vec<Event>,
    truth: Vec<PlaneTruth>,
    duration_us: u64,
    samples: Vec<Vec<TrackSample>>,
    inits: Vec<Option<MotionInit>>,
    compensated: Vec<CompensatedEvent>,
    tracker_summary: Vec<TrackerSummary>,
    residual: Option<(f64, f64)>,
    metrics_raw: Vec<MetricRow>,
    metrics_comp: Vec<MetricRow>,
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

/// Reads a JSON pipeline config, applies a seed override and runs it.
pub fn run_pipeline_file(config: &Path, seed: Option<u64>, out_dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(config)?;
    let mut cfg: PipelineConfig = serde_json::from_str(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    run_pipeline(&cfg, out_dir)
}

/// Runs the configured stages in order, writing every artifact and a
/// `manifest.json` into `out_dir`. A failing stage aborts the run; the
/// manifest then records the error and the stages that completed.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config: cfg.clone(),
        stages: Vec::new(),
        error: None,
    };
    let mut st = RunState::default();
    for &stage in &cfg.stages {
        let start = Instant::now();
        match run_stage(stage, cfg, out_dir, &mut st) {
            Ok(outputs) => manifest.stages.push(StageRecord {
                stage,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                outputs,
            }),
            Err(e) => {
                let err = Error::Stage {
                    stage: stage.name(),
                    source: Box::new(e),
                };
                manifest.error = Some(err.to_string());
                write_json(&out_dir.join("manifest.json"), &manifest)?;
                return Err(err);
            }
        }
    }
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn run_stage(
    stage: Stage,
    cfg: &PipelineConfig,
    dir: &Path,
    st: &mut RunState,
) -> Result<Vec<String>> {
    let file = |name: &str| -> (PathBuf, String) { (dir.join(name), name.to_string()) };
    match stage {
        Stage::Simulate => {
            let sim = simulate(
                &cfg.scene,
                &cfg.motion,
                &cfg.geometry,
                cfg.duration_s,
                &cfg.model,
                cfg.seed,
            )?;
            let (ev_path, ev_name) = file(&cfg.event_file);
            write_events_file(
                &ev_path,
                &sim.events,
                sim.geometry.width,
                sim.geometry.height,
            )?;
            let (truth_path, truth_name) = file("truth.json");
            write_json(
                &truth_path,
                &TruthSidecar {
                    geometry: &sim.geometry,
                    duration_us: sim.duration_us,
                    seed: cfg.seed,
                    planes: &sim.truth,
                },
            )?;
            st.geometry = Some(sim.geometry);
            st.duration_us = sim.duration_us;
            st.events = sim.events;
            st.truth = sim.truth;
            Ok(vec![ev_name, truth_name])
        }
        Stage::Track => {
            let g = st.geometry.as_ref().expect("simulate ran");
            st.samples = track_stream(&st.events, &cfg.tracking.patches, cfg.tracking.tracker, g)?;
            let mut all: Vec<TrackSample> = st.samples.iter().flatten().copied().collect();
            all.sort_by_key(|s| (s.t, s.id));
            let (path, name) = file("tracks.csv");
            write_track_csv(BufWriter::new(File::create(path)?), &all)?;
            Ok(vec![name])
        }
        Stage::Estimate => {
            let report = EstimateReport::from_samples(&st.samples, &cfg.tracking)?;
            st.inits = report.trackers.iter().map(|t| t.init.clone()).collect();
            let (path, name) = file("estimate.json");
            write_json(&path, &report)?;
            Ok(vec![name])
        }
        Stage::Ekf => {
            let mut outputs = Vec::new();
            let mut finals = Vec::new();
            let tau = cfg.tracking.tracker.tau_s;
            st.tracker_summary.clear();
            for ((patch, samples), init) in
                cfg.tracking.patches.iter().zip(&st.samples).zip(&st.inits)
            {
                let Some(init) = init else { continue };
                let mut u = AxisFilter::new(&init.u.fit, cfg.tracking.noise, true)?;
                let mut v = AxisFilter::new(&init.v.fit, cfg.tracking.noise, true)?;
                for s in samples {
                    u.step(s.t, s.u)?;
                    v.step(s.t, s.v)?;
                }
                for (axis, f) in [("u", &u), ("v", &v)] {
                    let (path, name) = file(&format!("ekf_{}_{axis}.csv", patch.id));
                    write_trace_csv(BufWriter::new(File::create(path)?), f.trace())?;
                    outputs.push(name);
                }
                st.tracker_summary.push(TrackerSummary {
                    id: patch.id,
                    omega: 0.5 * (u.state.omega + v.state.omega),
                    amplitude_u: u.state.lag_corrected(tau).amplitude_phase().0,
                    amplitude_v: v.state.lag_corrected(tau).amplitude_phase().0,
                });
                finals.push(FinalState {
                    id: patch.id,
                    u: u.state,
                    v: v.state,
                    rejected_u: u.rejected,
                    rejected_v: v.rejected,
                });
            }
            let (path, name) = file("ekf_states.json");
            write_json(&path, &finals)?;
            outputs.push(name);
            Ok(outputs)
        }
        Stage::Compensate => {
            let g = st.geometry.as_ref().expect("simulate ran");
            let out = compensate_stream(
                &st.events,
                &CompensationMode::Tracking(cfg.tracking.clone()),
                g,
            )?;
            st.compensated = out.events;
            let (csv_path, csv_name) = file("compensated.csv");
            write_compensated_csv(BufWriter::new(File::create(csv_path)?), &st.compensated)?;
            let (ev_path, ev_name) = file("compensated.evst");
            write_events_file(&ev_path, &to_events(&st.compensated), g.width, g.height)?;
            if !st.truth.is_empty() {
                let mut sq = 0.0;
                let mut within = 0usize;
                for (e, c) in st.events.iter().zip(&st.compensated) {
                    let (x, y) = (f64::from(e.x), f64::from(e.y));
                    let Some(plane) = st
                        .truth
                        .iter()
                        .find(|p| p.region.is_none_or(|r| r.contains(x, y)))
                    else {
                        continue;
                    };
                    let (du, dv) = crate::sim::camera_offset(e.t as f64 * 1e-6, &plane.oscillation);
                    let d2 = (c.x - (x - du)).powi(2) + (c.y - (y - dv)).powi(2);
                    sq += d2;
                    within += usize::from(d2 < 1.0);
                }
                let n = st.events.len().max(1) as f64;
                st.residual = Some(((sq / n).sqrt(), within as f64 / n));
            }
            Ok(vec![csv_name, ev_name])
        }
        Stage::Metrics => {
            let g = st.geometry.as_ref().expect("simulate ran");
            let (w, h) = (usize::from(g.width), usize::from(g.height));
            let len = (cfg.metrics.window_ms * 1e3).round().max(1.0) as u64;
            let windows = disjoint_windows(0, st.duration_us, len);
            let raw: Vec<AccumFrame> = windows
                .iter()
                .map(|&win| accumulate(&st.events, win, w, h))
                .collect();
            st.metrics_raw = window_metrics(&raw, &cfg.metrics.selection, &cfg.metrics.edges)?;
            let (raw_path, raw_name) = file("metrics_raw.csv");
            write_metrics_csv(BufWriter::new(File::create(raw_path)?), &st.metrics_raw)?;
            let mut outputs = vec![raw_name];
            if !st.compensated.is_empty() {
                let comp: Vec<AccumFrame> = windows
                    .iter()
                    .map(|&win| accumulate_compensated(&st.compensated, win, w, h))
                    .collect();
                st.metrics_comp =
                    window_metrics(&comp, &cfg.metrics.selection, &cfg.metrics.edges)?;
                let (path, name) = file("metrics_compensated.csv");
                write_metrics_csv(BufWriter::new(File::create(path)?), &st.metrics_comp)?;
                outputs.push(name);
            }
            Ok(outputs)
        }
        Stage::Report => {
            let summary = |rows: &[MetricRow]| (!rows.is_empty()).then(|| MetricSummary::of(rows));
            let report = Report {
                events: st.events.len(),
                truth: st.truth.clone(),
                trackers: std::mem::take(&mut st.tracker_summary),
                residual_rms_px: st.residual.map(|r| r.0),
                within_1px: st.residual.map(|r| r.1),
                metrics_raw: summary(&st.metrics_raw),
                metrics_compensated: summary(&st.metrics_comp),
            };
            let (path, name) = file("report.json");
            write_json(&path, &report)?;
            Ok(vec![name])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_prefix_rule() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.stages = vec![Stage::Simulate];
        assert!(cfg.validate().is_ok());
        cfg.stages = vec![Stage::Track];
        assert!(cfg.validate().is_err());
        cfg.stages = vec![Stage::Simulate, Stage::Estimate];
        assert!(cfg.validate().is_err());
        cfg.stages = Vec::new();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = PipelineConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: PipelineConfig =
            serde_json::from_str(r#"{"seed": 9, "stages": ["simulate"]}"#).unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.stages, vec![Stage::Simulate]);
        assert_eq!(partial.scene, cfg.scene);
    }

    #[test]
    fn event_file_must_be_a_name() {
        let cfg = PipelineConfig {
            event_file: "../escape.evst".into(),
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
