use std::f64::consts::PI;

use crate::error::Result;
use crate::event::SensorGeometry;
use crate::sim::{DepthPlane, MotionSource, OscillatorConfig, Pattern, Rect, SceneSpec};
use crate::track::PatchSpec;

/// 160x120 sensor with a 150 px focal length.
pub fn default_geometry() -> SensorGeometry {
    SensorGeometry::centered(160, 120, 150.0).expect("valid default geometry")
}

/// An 8x6 checkerboard of 12 px squares centred on the default sensor.
pub fn default_board_scene() -> SceneSpec {
    SceneSpec::single_plane(Pattern::Checkerboard { period_px: 12.0 }, 1.0)
        .with_extent(Rect::new(32.0, 24.0, 128.0, 96.0))
}

/// Circular motion of 3 px radius at 300 rad/s.
pub fn default_oscillation() -> OscillatorConfig {
    OscillatorConfig::circular(3.0, 300.0, 0.0).expect("valid default oscillation")
}

/// `(far, near)` plane depths of the three synthetic depth scenes.
pub const DEPTH_SCENE_DEPTHS_M: [(f64, f64); 3] = [(0.641, 0.210), (0.641, 0.321), (0.641, 0.406)];

const DEPTH_FOV_DEG: f64 = 51.7;
const DEPTH_RADIUS_M: f64 = 0.003;
const DEPTH_OMEGA: f64 = 300.0;
const DEPTH_PITCH_PX: f64 = 101.3;

/// A two-plane scene with its motion and trackers.
#[derive(Debug, Clone)]
pub struct DepthScene {
    pub geometry: SensorGeometry,
    pub scene: SceneSpec,
    pub motion: MotionSource,
    /// Trackers on plane 1 (left half) and plane 2 (right half).
    pub patches: [Vec<PatchSpec>; 2],
    /// `Z_2 / Z_1`.
    pub truth_ratio: f64,
}

/// Disks of radius 16 px on a 101.3 px pitch over a 640x480 sensor with a
/// 51.7 degree vertical field of view. The left half is plane 1 at `z1_m`,
/// the right half plane 2 at `z2_m`; the camera circles with a 3 mm radius.
pub fn depth_scene(z1_m: f64, z2_m: f64) -> Result<DepthScene> {
    let (w, h) = (640u16, 480u16);
    let geometry = SensorGeometry::from_vertical_fov(w, h, DEPTH_FOV_DEG.to_radians())?;
    let half = f64::from(w) / 2.0;
    let scene = SceneSpec {
        pattern: Pattern::Disks {
            radius_px: 16.0,
            pitch_px: DEPTH_PITCH_PX,
        },
        contrast: 1.0,
        background: 0.0,
        extent: None,
        depth_planes: vec![
            DepthPlane {
                region: Some(Rect::new(0.0, 0.0, half, f64::from(h))),
                depth_m: z1_m,
            },
            DepthPlane {
                region: Some(Rect::new(half, 0.0, f64::from(w), f64::from(h))),
                depth_m: z2_m,
            },
        ],
    };
    // pixel amplitude of a plane at 1 m; planes scale by 1/Z
    let oscillation = OscillatorConfig::circular(
        geometry.focal_length * DEPTH_RADIUS_M,
        DEPTH_OMEGA,
        PI / 4.0,
    )?;
    let motion = MotionSource::ImagePlane {
        oscillation,
        reference_depth_m: Some(1.0),
    };
    Ok(DepthScene {
        geometry,
        scene,
        motion,
        patches: depth_scene_patches(),
        truth_ratio: z2_m / z1_m,
    })
}

/// Two disk trackers per plane of [`depth_scene`].
pub fn depth_scene_patches() -> [Vec<PatchSpec>; 2] {
    let c = |i: f64| (i + 0.5) * DEPTH_PITCH_PX;
    let half = 28.0;
    [
        vec![
            PatchSpec::new(0, (c(1.0), c(1.0)), half),
            PatchSpec::new(1, (c(1.0), c(2.0)), half),
        ],
        vec![
            PatchSpec::new(2, (c(4.0), c(1.0)), half),
            PatchSpec::new(3, (c(4.0), c(2.0)), half),
        ],
    ]
}
