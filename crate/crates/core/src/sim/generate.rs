use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{Pattern, Rect, SceneSpec, Texture};
use super::{
    camera_offset, motor_speed, steady_state, BaselineMotion, MotorParams, OscillatorConfig,
    PhysicalOscillator,
};
use crate::error::{Error, Result};
use crate::event::{Event, Polarity, SensorGeometry};

/// Contrast-threshold pixel model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventModel {
    /// Log-intensity change that triggers an event.
    #[serde(rename = "C")]
    pub contrast_threshold: f64,
    pub refractory_us: f64,
    /// Integration step of the latent intensity; crossing times are linearly
    /// interpolated inside a step.
    pub step_us: f64,
    /// Rate of uniformly distributed noise events per pixel, Hz.
    #[serde(default)]
    pub noise_rate_hz: f64,
}

impl Default for EventModel {
    fn default() -> Self {
        EventModel {
            contrast_threshold: 0.2,
            refractory_us: 100.0,
            step_us: 50.0,
            noise_rate_hz: 0.0,
        }
    }
}

impl EventModel {
    fn validate(&self) -> Result<()> {
        if !(self.contrast_threshold > 0.0) {
            return Err(Error::config("contrast threshold must be positive"));
        }
        if !(self.step_us > 0.0) || !(self.refractory_us >= 0.0) || !(self.noise_rate_hz >= 0.0) {
            return Err(Error::config(
                "event model needs step > 0, refractory >= 0, noise >= 0",
            ));
        }
        Ok(())
    }
}

/// Where the oscillation comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MotionSource {
    /// Amplitudes in pixels for a plane at `reference_depth_m` (default: the
    /// first depth plane); other planes scale by inverse depth.
    ImagePlane {
        #[serde(flatten)]
        oscillation: OscillatorConfig,
        #[serde(default)]
        reference_depth_m: Option<f64>,
    },
    /// Circular steady-state motion of the forced oscillator. The drive
    /// frequency is the motor speed at `V_A` when a motor is given.
    Physical {
        #[serde(flatten)]
        oscillator: PhysicalOscillator,
        #[serde(rename = "V_A", default)]
        voltage: Option<f64>,
        #[serde(default)]
        motor: Option<MotorParams>,
    },
}

impl MotionSource {
    pub fn image_plane(oscillation: OscillatorConfig) -> Self {
        MotionSource::ImagePlane {
            oscillation,
            reference_depth_m: None,
        }
    }

    /// Apparent motion of every depth plane of `scene`.
    pub fn plane_oscillations(
        &self,
        scene: &SceneSpec,
        geometry: &SensorGeometry,
    ) -> Result<Vec<OscillatorConfig>> {
        match *self {
            MotionSource::ImagePlane {
                oscillation,
                reference_depth_m,
            } => {
                oscillation.validate()?;
                let z_ref = reference_depth_m.unwrap_or(scene.depth_planes[0].depth_m);
                if !(z_ref > 0.0) {
                    return Err(Error::config("reference depth must be positive"));
                }
                Ok(scene
                    .depth_planes
                    .iter()
                    .map(|p| oscillation.scaled(z_ref / p.depth_m))
                    .collect())
            }
            MotionSource::Physical {
                mut oscillator,
                voltage,
                motor,
            } => {
                if let (Some(v), Some(m)) = (voltage, motor) {
                    m.validate()?;
                    oscillator.omega_drive = motor_speed(v, &m);
                }
                let (amp, lag) = steady_state(&oscillator)?;
                let baseline = BaselineMotion::circular(amp, oscillator.omega_drive, -lag);
                scene
                    .depth_planes
                    .iter()
                    .map(|p| baseline.image_plane(geometry.focal_length, p.depth_m))
                    .collect()
            }
        }
    }
}

/// Ground-truth motion of one depth plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneTruth {
    pub region: Option<Rect>,
    #[serde(rename = "Z_m")]
    pub depth_m: f64,
    pub oscillation: OscillatorConfig,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub events: Vec<Event>,
    pub truth: Vec<PlaneTruth>,
    pub geometry: SensorGeometry,
    pub duration_us: u64,
}

impl SimOutput {
    pub fn plane_at(&self, x: f64, y: f64) -> Option<&PlaneTruth> {
        self.truth
            .iter()
            .find(|p| p.region.map_or(true, |r| r.contains(x, y)))
    }

    /// True image-plane offset at pixel `(x, y)` and time `t_us`.
    pub fn offset_at(&self, x: f64, y: f64, t_us: u64) -> (f64, f64) {
        self.plane_at(x, y).map_or((0.0, 0.0), |p| {
            camera_offset(t_us as f64 * 1e-6, &p.oscillation)
        })
    }

    /// Where the event's scene point sits in the static virtual frame.
    pub fn virtual_position(&self, e: &Event) -> (f64, f64) {
        let (x, y) = (f64::from(e.x), f64::from(e.y));
        let (du, dv) = self.offset_at(x, y, e.t);
        (x - du, y - dv)
    }
}

/// Renders events for `scene` seen by a camera vibrating according to `motion`.
///
/// Each pixel integrates the latent log intensity `L(p, t) = texture(p - offset(t))`
/// on a fixed step. Whenever `|L - L_ref|` reaches the contrast threshold an
/// event is emitted at the linearly interpolated crossing time and `L_ref`
/// moves by one threshold. Crossings inside the refractory period are held
/// back until it ends. The output is sorted by time, then row, then column.
pub fn simulate(
    scene: &SceneSpec,
    motion: &MotionSource,
    geometry: &SensorGeometry,
    duration_s: f64,
    model: &EventModel,
    seed: u64,
) -> Result<SimOutput> {
    geometry.validate()?;
    scene.validate(geometry)?;
    model.validate()?;
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::config("duration must be positive"));
    }
    let oscillations = motion.plane_oscillations(scene, geometry)?;
    let max_amp = oscillations
        .iter()
        .map(|o| o.max_amplitude())
        .fold(0.0, f64::max);
    let texture = Texture::render(scene, geometry, max_amp.ceil() as usize + 3);

    let duration_us = (duration_s * 1e6).round() as u64;
    let n_steps = (duration_us as f64 / model.step_us).ceil() as usize;
    let offsets: Vec<Vec<(f64, f64)>> = oscillations
        .iter()
        .map(|osc| {
            (0..=n_steps)
                .map(|k| camera_offset(k as f64 * model.step_us * 1e-6, osc))
                .collect()
        })
        .collect();

    let mut raw: Vec<(u64, u16, u16, Polarity)> = Vec::new();
    let end = duration_us as f64;
    for y in 0..geometry.height {
        for x in 0..geometry.width {
            let (px, py) = (f64::from(x), f64::from(y));
            let plane = scene.plane_of(px, py).expect("validated partition");
            if !texture.varies_near(px, py, oscillations[plane].max_amplitude() + 1.0) {
                continue;
            }
            let rest = texture.sample(px, py);
            let start = texture.sample(px - offsets[plane][0].0, py - offsets[plane][0].1);
            let mut pixel = PixelState::new(rest, start, model.contrast_threshold);
            for (k, &(du, dv)) in offsets[plane].iter().enumerate().skip(1) {
                let level = texture.sample(px - du, py - dv);
                let t_b = k as f64 * model.step_us;
                pixel.advance(t_b - model.step_us, t_b, level, model, |t, pol| {
                    if t < end {
                        raw.push((t.round() as u64, x, y, pol));
                    }
                });
            }
        }
    }

    if model.noise_rate_hz > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total_rate = model.noise_rate_hz * geometry.pixel_count() as f64 * 1e-6;
        let mut t = 0.0;
        loop {
            let u: f64 = rng.gen::<f64>();
            t += -(1.0 - u).ln() / total_rate;
            if t >= end {
                break;
            }
            let x = rng.gen_range(0..geometry.width);
            let y = rng.gen_range(0..geometry.height);
            let pol = Polarity::from_sign(rng.gen::<bool>());
            raw.push((t as u64, x, y, pol));
        }
    }

    raw.sort_unstable_by_key(|&(t, x, y, p)| (t, y, x, p));
    let events = raw
        .into_iter()
        .map(|(t, x, y, p)| Event::new(t, x, y, p))
        .collect();
    let truth = scene
        .depth_planes
        .iter()
        .zip(&oscillations)
        .map(|(p, osc)| PlaneTruth {
            region: p.region,
            depth_m: p.depth_m,
            oscillation: *osc,
        })
        .collect();
    Ok(SimOutput {
        events,
        truth,
        geometry: *geometry,
        duration_us,
    })
}

struct PixelState {
    level: f64,
    reference: f64,
    last_event: f64,
}

impl PixelState {
    /// Reference set at `rest`, then carried silently to `level`.
    fn new(rest: f64, level: f64, c: f64) -> Self {
        PixelState {
            level,
            reference: rest + c * ((level - rest) / c).trunc(),
            last_event: f64::NEG_INFINITY,
        }
    }

    /// Integrates from `(t_a, self.level)` to `(t_b, level_b)`.
    #[inline]
    fn advance(
        &mut self,
        t_a: f64,
        t_b: f64,
        level_b: f64,
        model: &EventModel,
        mut emit: impl FnMut(f64, Polarity),
    ) {
        let level_a = self.level;
        self.level = level_b;
        let c = model.contrast_threshold;
        loop {
            let diff = level_b - self.reference;
            if diff.abs() < c {
                return;
            }
            let sign = diff.signum();
            let target = self.reference + sign * c;
            let slope = level_b - level_a;
            // fraction of the step at which the target level is reached
            let frac = if slope == 0.0 || (target - level_a) * sign <= 0.0 {
                0.0
            } else {
                ((target - level_a) / slope).clamp(0.0, 1.0)
            };
            let t_cross = t_a + frac * (t_b - t_a);
            let t_event = t_cross.max(self.last_event + model.refractory_us);
            if t_event > t_b {
                return;
            }
            emit(t_event, Polarity::from_sign(sign > 0.0));
            self.reference = target;
            self.last_event = t_event;
        }
    }
}

/// Static camera watching a target that travels around a circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingTargetSpec {
    pub freq_hz: f64,
    pub radius_px: f64,
    #[serde(default = "default_target")]
    pub pattern: Pattern,
    #[serde(default = "default_target_contrast")]
    pub contrast: f64,
    pub duration_s: f64,
}

fn default_target() -> Pattern {
    Pattern::Triangle { side_px: 24.0 }
}

fn default_target_contrast() -> f64 {
    1.0
}

impl MovingTargetSpec {
    pub fn new(freq_hz: f64, radius_px: f64, duration_s: f64) -> Self {
        MovingTargetSpec {
            freq_hz,
            radius_px,
            pattern: default_target(),
            contrast: default_target_contrast(),
            duration_s,
        }
    }

    pub fn trajectory(&self) -> Result<OscillatorConfig> {
        if !(self.freq_hz > 0.0) {
            return Err(Error::config("target frequency must be positive"));
        }
        OscillatorConfig::circular(
            self.radius_px,
            2.0 * std::f64::consts::PI * self.freq_hz,
            0.0,
        )
    }
}

/// The target is drawn on a uniform background, so translating it is the same
/// as shifting the whole image; the truth records the target's trajectory.
pub fn simulate_moving_target(
    spec: &MovingTargetSpec,
    geometry: &SensorGeometry,
    model: &EventModel,
    seed: u64,
) -> Result<SimOutput> {
    let scene = SceneSpec::single_plane(spec.pattern.clone(), spec.contrast);
    let motion = MotionSource::image_plane(spec.trajectory()?);
    simulate(&scene, &motion, geometry, spec.duration_s, model, seed)
}
