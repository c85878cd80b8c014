//! End-user applications built on the pipeline stages.

mod depth;
mod frequency;
mod pipeline;
mod scenes;

pub use depth::{
    absolute_depth, min_detectable_distance, min_distance_for, pixel_shift, relative_depth,
    tracker_amplitude, DepthConfig, DepthRatioReport, TrackerAmplitude,
};
pub use frequency::{estimate_scene_frequency, trial_frequency, FrequencyConfig, FrequencyReport};
pub use pipeline::{
    run_pipeline, run_pipeline_file, EstimateReport, Manifest, MetricsConfig, PipelineConfig,
    Stage, StageRecord, TrackerEstimate,
};
pub use scenes::{
    default_board_scene, default_geometry, default_oscillation, depth_scene, depth_scene_patches,
    DepthScene, DEPTH_SCENE_DEPTHS_M,
};
