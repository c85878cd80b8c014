use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use evshake::apps::{
    default_geometry, depth_scene, estimate_scene_frequency, min_detectable_distance,
    min_distance_for, relative_depth, run_pipeline, DepthConfig, EstimateReport, FrequencyConfig,
    MetricsConfig, PipelineConfig, Stage,
};
use evshake::compensate::{
    compensate_stream, to_events, write_compensated_csv, CompensationMode, RegionMap,
    TrackingConfig,
};
use evshake::frame::{accumulate, disjoint_windows};
use evshake::io::{read_events_file, write_events_file};
use evshake::metrics::{window_metrics, write_metrics_csv};
use evshake::sim::{simulate, simulate_moving_target, EventModel, MovingTargetSpec};
use evshake::track::{read_track_csv, track_stream, write_track_csv, PatchSpec, TrackSample};
use evshake::{Event, SensorGeometry};

/// Simulate, estimate and compensate camera vibration in event streams.
#[derive(Parser)]
#[command(name = "evshake", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct EventInput {
    /// Event file; `.csv` is read as CSV, anything else as binary.
    #[arg(long)]
    events: PathBuf,
    /// Sensor geometry JSON, needed to bound CSV input.
    #[arg(long)]
    geometry: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a vibrating-camera event stream and its truth sidecar.
    Simulate(Common),
    /// Centroid tracks of the configured patches.
    Track {
        #[command(flatten)]
        input: EventInput,
        #[command(flatten)]
        common: Common,
    },
    /// Frequency and sinusoid fits from a track file.
    Estimate {
        #[arg(long)]
        tracks: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Move events into the static virtual frame.
    Compensate {
        #[command(flatten)]
        input: EventInput,
        /// Fixed motion from an `estimate` report instead of live tracking.
        #[arg(long)]
        state: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Per-window frame metrics.
    Metrics {
        #[command(flatten)]
        input: EventInput,
        #[command(flatten)]
        common: Common,
    },
    /// Vibration frequency of a target seen by a static camera.
    Freq {
        #[arg(long)]
        events: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Relative depth of two planes from their oscillation amplitudes.
    Depth {
        #[arg(long)]
        events: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Farthest distance at which the vibration still moves a point by one pixel.
    Mindist {
        /// Rotation radius in metres.
        #[arg(long)]
        radius_m: f64,
        /// Resolution along the measured axis, overriding the geometry.
        #[arg(long, requires = "fov_deg")]
        resolution: Option<f64>,
        /// Field of view along the measured axis, degrees.
        #[arg(long, requires = "resolution")]
        fov_deg: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Run every stage from simulation to report.
    Pipeline(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Track { .. } => "track",
            Command::Estimate { .. } => "estimate",
            Command::Compensate { .. } => "compensate",
            Command::Metrics { .. } => "metrics",
            Command::Freq { .. } => "freq",
            Command::Depth { .. } => "depth",
            Command::Mindist { .. } => "mindist",
            Command::Pipeline(_) => "pipeline",
        }
    }
}

#[derive(Deserialize)]
struct FreqJob {
    patch: PatchSpec,
    #[serde(default)]
    frequency: FrequencyConfig,
    geometry: Option<SensorGeometry>,
    truth_hz: Option<f64>,
    /// Simulated when no event file is given.
    target: Option<MovingTargetSpec>,
    #[serde(default)]
    model: EventModel,
}

#[derive(Deserialize)]
struct DepthSceneSpec {
    z1_m: f64,
    z2_m: f64,
    #[serde(default = "default_depth_duration")]
    duration_s: f64,
}

fn default_depth_duration() -> f64 {
    1.0
}

#[derive(Deserialize)]
struct DepthJob {
    planes: Option<[Vec<PatchSpec>; 2]>,
    #[serde(default)]
    depth: DepthConfig,
    geometry: Option<SensorGeometry>,
    truth_ratio: Option<f64>,
    /// Simulated when no event file is given.
    scene: Option<DepthSceneSpec>,
}

#[derive(Serialize)]
struct MindistReport {
    radius_m: f64,
    resolution_px: Option<f64>,
    fov_deg: Option<f64>,
    distance_m: f64,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn config_or_default<T: DeserializeOwned + Default>(common: &Common) -> Result<T> {
    common
        .config
        .as_deref()
        .map_or_else(|| Ok(T::default()), read_json)
}

fn require_config<T: DeserializeOwned>(common: &Common) -> Result<T> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| anyhow!("--config is required"))?;
    read_json(path)
}

fn write_report<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(out.join(name), &text)?;
    println!("{text}");
    Ok(())
}

fn load_events(input: &EventInput) -> Result<(Vec<Event>, SensorGeometry)> {
    let given: Option<SensorGeometry> = input.geometry.as_deref().map(read_json).transpose()?;
    load_with(&input.events, given)
}

fn load_with(path: &Path, given: Option<SensorGeometry>) -> Result<(Vec<Event>, SensorGeometry)> {
    let stream = read_events_file(path, given.map(|g| (g.width, g.height)))
        .with_context(|| format!("reading {}", path.display()))?;
    let geometry = match given {
        Some(g) => g,
        // focal length plays no part in tracking, compensation or metrics
        None => SensorGeometry::centered(stream.width, stream.height, f64::from(stream.width))?,
    };
    Ok((stream.events, geometry))
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(common) => {
            let mut cfg: PipelineConfig = config_or_default(&common)?;
            cfg.stages = vec![Stage::Simulate];
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let manifest = run_pipeline(&cfg, &common.out)?;
            println!("{}", serde_json::to_string_pretty(&manifest.stages)?);
        }
        Command::Track { input, common } => {
            let tracking: TrackingConfig = require_config(&common)?;
            let (events, geometry) = load_events(&input)?;
            fs::create_dir_all(&common.out)?;
            let streams = track_stream(&events, &tracking.patches, tracking.tracker, &geometry)?;
            let mut all: Vec<TrackSample> = streams.into_iter().flatten().collect();
            all.sort_by_key(|s| (s.t, s.id));
            write_track_csv(create(&common.out, "tracks.csv")?, &all)?;
            println!(
                "{} samples from {} patches",
                all.len(),
                tracking.patches.len()
            );
        }
        Command::Estimate { tracks, common } => {
            let tracking: TrackingConfig = require_config(&common)?;
            let samples = read_track_csv(
                File::open(&tracks).with_context(|| format!("opening {}", tracks.display()))?,
            )?;
            let streams: Vec<Vec<TrackSample>> = tracking
                .patches
                .iter()
                .map(|p| samples.iter().filter(|s| s.id == p.id).copied().collect())
                .collect();
            fs::create_dir_all(&common.out)?;
            let report = EstimateReport::from_samples(&streams, &tracking)?;
            write_report(&common.out, "estimate.json", &report)?;
        }
        Command::Compensate {
            input,
            state,
            common,
        } => {
            let (events, geometry) = load_events(&input)?;
            let mode = match (&state, &common.config) {
                (Some(path), _) => {
                    let report: EstimateReport = read_json(path)?;
                    CompensationMode::FixedState(RegionMap::single(report.motion()?))
                }
                (None, Some(_)) => CompensationMode::Tracking(require_config(&common)?),
                (None, None) => bail!("give --state or a tracking --config"),
            };
            fs::create_dir_all(&common.out)?;
            let out = compensate_stream(&events, &mode, &geometry)?;
            write_compensated_csv(create(&common.out, "compensated.csv")?, &out.events)?;
            write_events_file(
                &common.out.join("compensated.evst"),
                &to_events(&out.events),
                geometry.width,
                geometry.height,
            )?;
            let flagged = out.events.iter().filter(|e| e.out_of_bounds).count();
            println!(
                "{} events compensated, {flagged} out of bounds",
                out.events.len()
            );
        }
        Command::Metrics { input, common } => {
            let cfg: MetricsConfig = config_or_default(&common)?;
            if !(cfg.window_ms > 0.0) {
                bail!("metric window must be positive");
            }
            let (events, geometry) = load_events(&input)?;
            fs::create_dir_all(&common.out)?;
            let end = events.last().map_or(0, |e| e.t + 1);
            let len = (cfg.window_ms * 1e3).round().max(1.0) as u64;
            let (w, h) = (usize::from(geometry.width), usize::from(geometry.height));
            let frames: Vec<_> = disjoint_windows(0, end, len)
                .into_iter()
                .map(|win| accumulate(&events, win, w, h))
                .collect();
            let rows = window_metrics(&frames, &cfg.selection, &cfg.edges)?;
            write_metrics_csv(create(&common.out, "metrics.csv")?, &rows)?;
            println!("{} windows", rows.len());
        }
        Command::Freq { events, common } => {
            let job: FreqJob = require_config(&common)?;
            let (events, geometry) = match events {
                Some(path) => load_with(&path, job.geometry)?,
                None => {
                    let target = job
                        .target
                        .as_ref()
                        .ok_or_else(|| anyhow!("config needs `target` without --events"))?;
                    let geometry = job.geometry.unwrap_or_else(default_geometry);
                    let sim = simulate_moving_target(
                        target,
                        &geometry,
                        &job.model,
                        common.seed.unwrap_or(1),
                    )?;
                    (sim.events, geometry)
                }
            };
            let truth = job.truth_hz.or(job.target.as_ref().map(|t| t.freq_hz));
            fs::create_dir_all(&common.out)?;
            let report =
                estimate_scene_frequency(&events, &job.patch, &geometry, &job.frequency, truth)?;
            write_report(&common.out, "freq.json", &report)?;
        }
        Command::Depth { events, common } => {
            let job: DepthJob = require_config(&common)?;
            let (events, geometry, planes, truth) = match events {
                Some(path) => {
                    let (ev, g) = load_with(&path, job.geometry)?;
                    let planes = job
                        .planes
                        .clone()
                        .ok_or_else(|| anyhow!("config needs `planes` with --events"))?;
                    (ev, g, planes, job.truth_ratio)
                }
                None => {
                    let spec = job
                        .scene
                        .as_ref()
                        .ok_or_else(|| anyhow!("config needs `scene` without --events"))?;
                    let ds = depth_scene(spec.z1_m, spec.z2_m)?;
                    let model = EventModel::default();
                    let sim = simulate(
                        &ds.scene,
                        &ds.motion,
                        &ds.geometry,
                        spec.duration_s,
                        &model,
                        common.seed.unwrap_or(1),
                    )?;
                    let planes = job.planes.clone().unwrap_or(ds.patches);
                    (
                        sim.events,
                        ds.geometry,
                        planes,
                        Some(job.truth_ratio.unwrap_or(ds.truth_ratio)),
                    )
                }
            };
            fs::create_dir_all(&common.out)?;
            let report = relative_depth(
                &events,
                [&planes[0], &planes[1]],
                &geometry,
                &job.depth,
                truth,
            )?;
            write_report(&common.out, "depth.json", &report)?;
        }
        Command::Mindist {
            radius_m,
            resolution,
            fov_deg,
            common,
        } => {
            let distance_m = match (resolution, fov_deg) {
                (Some(res), Some(fov)) => min_distance_for(res, fov.to_radians(), radius_m)?,
                _ => {
                    let geometry: SensorGeometry = config_or_default_geometry(&common)?;
                    min_detectable_distance(&geometry, radius_m)?
                }
            };
            fs::create_dir_all(&common.out)?;
            let report = MindistReport {
                radius_m,
                resolution_px: resolution,
                fov_deg,
                distance_m,
            };
            write_report(&common.out, "mindist.json", &report)?;
        }
        Command::Pipeline(common) => {
            let mut cfg: PipelineConfig = config_or_default(&common)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let manifest = run_pipeline(&cfg, &common.out)?;
            for s in &manifest.stages {
                println!(
                    "{:<10} {:>9.1} ms  {}",
                    s.stage.name(),
                    s.wall_ms,
                    s.outputs.join(" ")
                );
            }
        }
    }
    Ok(())
}

fn config_or_default_geometry(common: &Common) -> Result<SensorGeometry> {
    common
        .config
        .as_deref()
        .map_or_else(|| Ok(default_geometry()), read_json)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error in `{name}`: {e:#}");
            ExitCode::FAILURE
        }
    }
}
