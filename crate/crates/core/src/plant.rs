//! Deterministic user + prosthesis + ground plant.
//!
//! Kinematic template playback: each activity has periodic knee, thigh and
//! vertical-load waveforms over the gait cycle. The knee follows its template
//! through a first-order lag whose time constant shrinks as the commanded
//! stiffness grows, which is how the controller feeds back into the plant.
//! Sensor channels are synthesized per powertrain placement and corrupted by
//! seeded Gaussian noise.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{imu_reading_for_pose, FreshMask, RawSensorFrame, RefreshSchedule, SegmentAngles};
use crate::model::{ActivityMode, DeviceSpec, Placement, PlacementConfig, Side};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlantError {
    #[error("insufficient travel: walked {travelled:.3} m, walkway ends at {required:.3} m")]
    InsufficientTravel { travelled: f64, required: f64 },
    #[error("no profile configured for {0}")]
    MissingProfile(ActivityMode),
    #[error("invalid plant configuration: {0}")]
    Invalid(String),
}

fn smoothstep(s: f64) -> f64 {
    s * s * (3.0 - 2.0 * s)
}

/// Peak slope of [`smoothstep`] on [0, 1].
const SMOOTHSTEP_PEAK_SLOPE: f64 = 1.5;

/// Piecewise-cubic periodic waveform through `(phase %, value)` knots with
/// zero slope at every knot. The first knot is at 0 % and the last at 100 %
/// with the same value, so the waveform is continuous across cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct Keyframes {
    knots: Vec<(f64, f64)>,
}

impl Keyframes {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self, PlantError> {
        let ok = knots.len() >= 2
            && knots[0].0 == 0.0
            && knots[knots.len() - 1].0 == 100.0
            && knots[0].1 == knots[knots.len() - 1].1
            && knots.windows(2).all(|w| w[1].0 > w[0].0);
        if !ok {
            return Err(PlantError::Invalid(format!("malformed keyframes {knots:?}")));
        }
        Ok(Self { knots })
    }

    pub fn eval(&self, phi: f64) -> f64 {
        let phi = phi.rem_euclid(100.0);
        let i = self.knots.partition_point(|k| k.0 <= phi).clamp(1, self.knots.len() - 1);
        let (p0, v0) = self.knots[i - 1];
        let (p1, v1) = self.knots[i];
        v0 + (v1 - v0) * smoothstep((phi - p0) / (p1 - p0))
    }

    pub fn min(&self) -> f64 {
        self.knots.iter().map(|k| k.1).fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.knots.iter().map(|k| k.1).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest |d value / d phase| in units per percent.
    pub fn peak_slope(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| SMOOTHSTEP_PEAK_SLOPE * (w[1].1 - w[0].1).abs() / (w[1].0 - w[0].0))
            .fold(0.0, f64::max)
    }
}

/// A periodic signal over gait phase in percent.
#[derive(Debug, Clone, PartialEq)]
pub enum Waveform {
    Keyframes(Keyframes),
    /// `mean + amplitude * cos(2π (φ − peak_phase) / 100)`
    Cosine { mean: f64, amplitude: f64, peak_phase: f64 },
    /// Double-hump stance load normalized to `peak`, zero in swing.
    DoubleHump { stance_pct: f64, peak: f64 },
}

/// `sin(πs) + 0.25 sin(3πs)` peaks where `cos²(πs) = 5/12`.
fn double_hump_max() -> f64 {
    let x = (5.0f64 / 12.0).sqrt().acos();
    x.sin() + 0.25 * (3.0 * x).sin()
}

impl Waveform {
    pub fn eval(&self, phi: f64) -> f64 {
        match self {
            Waveform::Keyframes(k) => k.eval(phi),
            Waveform::Cosine {
                mean,
                amplitude,
                peak_phase,
            } => mean + amplitude * (2.0 * PI * (phi - peak_phase) / 100.0).cos(),
            Waveform::DoubleHump { stance_pct, peak } => {
                let phi = phi.rem_euclid(100.0);
                if phi >= *stance_pct {
                    return 0.0;
                }
                let s = phi / stance_pct;
                let h = (PI * s).sin() + 0.25 * (3.0 * PI * s).sin();
                (peak * h / double_hump_max()).max(0.0)
            }
        }
    }
}

/// Per-activity template settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivityProfileConfig {
    pub activity: ActivityMode,
    /// Knee range of motion over a cycle, deg.
    pub rom: f64,
    /// Peak swing-flexion velocity, deg/s. When set, the swing-flexion
    /// segment duration is chosen to hit it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_velocity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeverageConfig {
    pub below_knee: f64,
    pub above_knee: f64,
}

impl Default for LeverageConfig {
    fn default() -> Self {
        Self {
            below_knee: 1.0,
            above_knee: 0.33,
        }
    }
}

impl LeverageConfig {
    pub fn factor(&self, placement: PlacementConfig) -> f64 {
        match placement.placement() {
            Placement::BelowKnee => self.below_knee,
            Placement::AboveKnee => self.above_knee,
        }
    }
}

/// Knobs that make the left and right limbs differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsymmetryConfig {
    /// Gait phase (% of the prosthetic cycle) at which the sound foot lands.
    /// 50 gives equal step times.
    pub sound_contact_phase: f64,
    /// Stance fraction of the sound limb.
    pub sound_stance_fraction: f64,
    /// Extra forward reach of the prosthetic foot at contact, m.
    pub prosthetic_reach: f64,
    /// Extra lateral offset of each foot, m (outward positive).
    pub prosthetic_lateral: f64,
    pub sound_lateral: f64,
}

impl Default for AsymmetryConfig {
    fn default() -> Self {
        Self {
            sound_contact_phase: 50.0,
            sound_stance_fraction: 0.6,
            prosthetic_reach: 0.0,
            prosthetic_lateral: 0.0,
            sound_lateral: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    /// steps/min
    pub cadence: f64,
    /// m
    pub stride_length: f64,
    /// Prosthetic-limb stance fraction of the gait cycle.
    pub stance_fraction: f64,
    /// Peak stance load, fraction of body weight.
    pub load_peak: f64,
    /// Knee extension floor of the templates, deg.
    pub knee_floor: f64,
    /// Knee tracking time constant at zero stiffness, s.
    pub tracking_time_constant: f64,
    /// Stiffness at which the tracking time constant halves, Nm/deg.
    pub stiffness_ref: f64,
    /// Effective stance moment arm at leverage 1, m.
    pub moment_arm: f64,
    pub leverage: LeverageConfig,
    /// Cross-fade time between activity templates, s.
    pub blend_time: f64,
    /// Duration of one sit/stand cycle, s.
    pub sit_stand_cycle: f64,
    pub prosthetic_side: Side,
    /// Lateral distance between the feet, m.
    pub step_width: f64,
    pub walkway_start: f64,
    pub walkway_length: f64,
    pub asymmetry: AsymmetryConfig,
    pub activities: Vec<ActivityProfileConfig>,
}

impl Default for PlantConfig {
    fn default() -> Self {
        let activity = |activity, rom, peak_velocity| ActivityProfileConfig {
            activity,
            rom,
            peak_velocity,
        };
        Self {
            cadence: 87.6,
            stride_length: stride_length_for(1.135, 87.6),
            stance_fraction: 0.6,
            load_peak: 1.1,
            knee_floor: 3.0,
            tracking_time_constant: 0.012,
            stiffness_ref: 1.0,
            moment_arm: 0.0385,
            leverage: LeverageConfig::default(),
            blend_time: 0.3,
            sit_stand_cycle: 8.0,
            prosthetic_side: Side::Right,
            step_width: 0.12,
            walkway_start: 0.0,
            walkway_length: 8.0,
            asymmetry: AsymmetryConfig::default(),
            activities: vec![
                activity(ActivityMode::LevelWalk, 75.8, Some(345.0)),
                activity(ActivityMode::RampAscent, 40.0, None),
                activity(ActivityMode::RampDescent, 45.0, None),
                activity(ActivityMode::StairAscent, 80.0, None),
                activity(ActivityMode::StairDescent, 70.0, None),
                activity(ActivityMode::SitStand, 87.0, None),
            ],
        }
    }
}

/// Stride length that gives `speed` m/s at `cadence` steps/min.
pub fn stride_length_for(speed: f64, cadence: f64) -> f64 {
    speed * 120.0 / cadence
}

impl PlantConfig {
    /// Walking speed implied by stride length and cadence, m/s.
    pub fn speed(&self) -> f64 {
        self.stride_length * self.cadence / 120.0
    }

    pub fn with_speed_cadence(mut self, speed: f64, cadence: f64) -> Self {
        self.cadence = cadence;
        self.stride_length = stride_length_for(speed, cadence);
        self
    }

    pub fn set_activity(&mut self, activity: ActivityMode, rom: f64, peak_velocity: Option<f64>) {
        let entry = ActivityProfileConfig {
            activity,
            rom,
            peak_velocity,
        };
        match self.activities.iter_mut().find(|a| a.activity == activity) {
            Some(slot) => *slot = entry,
            None => self.activities.push(entry),
        }
    }

    pub fn check(&self) -> Result<(), String> {
        let positive = [
            ("cadence", self.cadence),
            ("stride_length", self.stride_length),
            ("load_peak", self.load_peak),
            ("tracking_time_constant", self.tracking_time_constant),
            ("stiffness_ref", self.stiffness_ref),
            ("sit_stand_cycle", self.sit_stand_cycle),
            ("walkway_length", self.walkway_length),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("plant.{name} must be > 0"));
            }
        }
        let non_negative = [
            ("moment_arm", self.moment_arm),
            ("blend_time", self.blend_time),
            ("step_width", self.step_width),
            ("knee_floor", self.knee_floor),
            ("leverage.below_knee", self.leverage.below_knee),
            ("leverage.above_knee", self.leverage.above_knee),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("plant.{name} must be >= 0"));
            }
        }
        for (name, f) in [
            ("stance_fraction", self.stance_fraction),
            ("asymmetry.sound_stance_fraction", self.asymmetry.sound_stance_fraction),
        ] {
            if !(f > 0.2 && f < 0.9) {
                return Err(format!("plant.{name} must be in (0.2, 0.9)"));
            }
        }
        let sc = self.asymmetry.sound_contact_phase;
        if !(sc > 0.0 && sc < 100.0) {
            return Err("plant.asymmetry.sound_contact_phase must be in (0, 100)".into());
        }
        for mode in ActivityMode::ALL {
            if !self.activities.iter().any(|a| a.activity == mode) {
                return Err(format!("plant.activities has no entry for {mode}"));
            }
        }
        for a in &self.activities {
            if self.activities.iter().filter(|b| b.activity == a.activity).count() > 1 {
                return Err(format!("plant.activities has duplicate entries for {}", a.activity));
            }
            GaitProfile::build(a.activity, self).map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

/// Default swing-flexion segment length when no velocity target is given, %.
const DEFAULT_FLEXION_PCT: f64 = 24.0;
const MIN_FLEXION_PCT: f64 = 15.0;
const MAX_FLEXION_PCT: f64 = 40.0;

/// Templates and timing for one activity.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitProfile {
    pub activity: ActivityMode,
    /// steps/min
    pub cadence: f64,
    /// m
    pub stride_length: f64,
    /// s
    pub cycle_time: f64,
    pub knee: Keyframes,
    pub thigh: Waveform,
    /// Fraction of body weight.
    pub load: Waveform,
    /// deg
    pub rom: f64,
    pub stance_fraction: f64,
    /// Whether the body moves forward and feet land on the walkway.
    pub travels: bool,
}

impl GaitProfile {
    pub fn build(activity: ActivityMode, cfg: &PlantConfig) -> Result<Self, PlantError> {
        let settings = cfg
            .activities
            .iter()
            .find(|a| a.activity == activity)
            .ok_or(PlantError::MissingProfile(activity))?;
        let rom = settings.rom;
        if !(rom > 0.0 && rom.is_finite()) {
            return Err(PlantError::Invalid(format!("{activity} rom must be > 0")));
        }
        let floor = cfg.knee_floor;
        let at = |frac: f64| floor + frac * rom;

        if activity == ActivityMode::SitStand {
            let knee = Keyframes::new(vec![
                (0.0, at(0.0)),
                (30.0, at(0.0)),
                (45.0, at(1.0)),
                (70.0, at(1.0)),
                (85.0, at(0.0)),
                (100.0, at(0.0)),
            ])?;
            // Thigh tilts forward (negative) to horizontal when seated.
            let thigh = Waveform::Keyframes(Keyframes::new(vec![
                (0.0, 0.0),
                (30.0, 0.0),
                (45.0, -90.0),
                (70.0, -90.0),
                (85.0, 0.0),
                (100.0, 0.0),
            ])?);
            let load = Waveform::Keyframes(Keyframes::new(vec![
                (0.0, 0.5),
                (30.0, 0.5),
                (45.0, 0.1),
                (70.0, 0.1),
                (74.0, 0.6),
                (85.0, 0.5),
                (100.0, 0.5),
            ])?);
            return Ok(Self {
                activity,
                cadence: 0.0,
                stride_length: 0.0,
                cycle_time: cfg.sit_stand_cycle,
                knee,
                thigh,
                load,
                rom,
                stance_fraction: 1.0,
                travels: false,
            });
        }

        let cycle_time = 120.0 / cfg.cadence;
        // Swing-flexion rise as a fraction of rom, per activity.
        let (flex_start, flex_from) = match activity {
            ActivityMode::LevelWalk => (48.0, 0.0),
            ActivityMode::RampAscent => (48.0, 0.0),
            ActivityMode::RampDescent => (45.0, 0.45),
            ActivityMode::StairAscent => (50.0, 0.05),
            ActivityMode::StairDescent => (55.0, 0.7),
            ActivityMode::SitStand => unreachable!(),
        };
        let flex_pct = match settings.peak_velocity {
            Some(v) => {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(PlantError::Invalid(format!("{activity} peak_velocity must be > 0")));
                }
                // Peak smoothstep slope is 1.5 Δθ / T_segment.
                let seg_time = SMOOTHSTEP_PEAK_SLOPE * (1.0 - flex_from) * rom / v;
                100.0 * seg_time / cycle_time
            }
            None => DEFAULT_FLEXION_PCT,
        };
        if !(MIN_FLEXION_PCT..=MAX_FLEXION_PCT).contains(&flex_pct) {
            return Err(PlantError::Invalid(format!(
                "{activity}: peak velocity needs a {flex_pct:.1}% swing-flexion segment, \
                 outside [{MIN_FLEXION_PCT}, {MAX_FLEXION_PCT}]"
            )));
        }
        let flex_end = flex_start + flex_pct;
        let knots: Vec<(f64, f64)> = match activity {
            ActivityMode::LevelWalk => vec![
                (0.0, 0.05),
                (12.0, 0.22),
                (35.0, 0.0),
                (flex_start, 0.0),
                (flex_end, 1.0),
                (100.0, 0.05),
            ],
            ActivityMode::RampAscent => vec![
                (0.0, 0.30),
                (10.0, 0.32),
                (38.0, 0.0),
                (flex_start, 0.0),
                (flex_end, 1.0),
                (100.0, 0.30),
            ],
            ActivityMode::RampDescent => vec![
                (0.0, 0.0),
                (25.0, 0.55),
                (flex_start, 0.45),
                (flex_end, 1.0),
                (100.0, 0.0),
            ],
            ActivityMode::StairAscent => vec![
                (0.0, 0.70),
                (35.0, 0.0),
                (flex_start, 0.05),
                (flex_end, 1.0),
                (100.0, 0.70),
            ],
            ActivityMode::StairDescent => vec![
                (0.0, 0.0),
                (40.0, 0.7),
                (flex_start, 0.7),
                (flex_end, 1.0),
                (100.0, 0.0),
            ],
            ActivityMode::SitStand => unreachable!(),
        };
        let knee = Keyframes::new(knots.into_iter().map(|(p, f)| (p, at(f))).collect())?;

        // Hip flexion h(φ) = mean + amp cos(...) peaking late in swing; the
        // thigh tilt is its negative under the segment sign convention.
        let (mean, amplitude) = match activity {
            ActivityMode::LevelWalk => (10.0, 20.0),
            ActivityMode::RampAscent => (18.0, 22.0),
            ActivityMode::RampDescent => (8.0, 18.0),
            ActivityMode::StairAscent => (30.0, 32.0),
            ActivityMode::StairDescent => (12.0, 18.0),
            ActivityMode::SitStand => unreachable!(),
        };
        let thigh = Waveform::Cosine {
            mean: -mean,
            amplitude: -amplitude,
            peak_phase: 95.0,
        };
        let stance_pct = 100.0 * cfg.stance_fraction;
        Ok(Self {
            activity,
            cadence: cfg.cadence,
            stride_length: cfg.stride_length,
            cycle_time,
            knee,
            thigh,
            load: Waveform::DoubleHump {
                stance_pct,
                peak: cfg.load_peak,
            },
            rom,
            stance_fraction: cfg.stance_fraction,
            travels: true,
        })
    }

    /// Forward speed of the body, m/s.
    pub fn speed(&self) -> f64 {
        if self.travels {
            self.stride_length / self.cycle_time
        } else {
            0.0
        }
    }

    /// Peak knee angular velocity of the template itself, deg/s.
    pub fn template_peak_velocity(&self) -> f64 {
        self.knee.peak_slope() * 100.0 / self.cycle_time
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub seed: u64,
    /// Standard deviations per channel: deg, deg, deg/s, N, Nm.
    pub theta_imu: f64,
    pub q: f64,
    pub q_dot: f64,
    pub f_vertical: f64,
    pub m_sagittal: f64,
    /// Walkway footfall jitter, m and s.
    pub footfall_position: f64,
    pub footfall_time: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            seed: 7,
            theta_imu: 0.5,
            q: 0.1,
            q_dot: 0.5,
            f_vertical: 5.0,
            m_sagittal: 0.2,
            footfall_position: 0.005,
            footfall_time: 0.004,
        }
    }
}

impl NoiseModel {
    pub fn zero(seed: u64) -> Self {
        Self {
            seed,
            theta_imu: 0.0,
            q: 0.0,
            q_dot: 0.0,
            f_vertical: 0.0,
            m_sagittal: 0.0,
            footfall_position: 0.0,
            footfall_time: 0.0,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        for (name, sd) in [
            ("theta_imu", self.theta_imu),
            ("q", self.q),
            ("q_dot", self.q_dot),
            ("f_vertical", self.f_vertical),
            ("m_sagittal", self.m_sagittal),
            ("footfall_position", self.footfall_position),
            ("footfall_time", self.footfall_time),
        ] {
            if !(sd >= 0.0 && sd.is_finite()) {
                return Err(format!("noise.{name} must be >= 0"));
            }
        }
        Ok(())
    }
}

/// One foot contact on the walkway.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footfall {
    pub t_contact: f64,
    pub t_liftoff: f64,
    pub x: f64,
    pub y: f64,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WalkwayRecord {
    pub footfalls: Vec<Footfall>,
}

/// Completed footfalls and total forward travel of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlantHistory {
    pub footfalls: Vec<Footfall>,
    /// m
    pub travel: f64,
}

/// Walkway footprint along the direction of travel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkwayWindow {
    pub start: f64,
    pub length: f64,
}

impl WalkwayWindow {
    pub fn new(start: f64, length: f64) -> Self {
        Self { start, length }
    }

    pub fn end(&self) -> f64 {
        self.start + self.length
    }
}

/// Footfalls landing on the walkway, optionally with the first and last
/// removed.
pub fn emit_walkway(history: &PlantHistory, window: WalkwayWindow, trim: bool) -> Result<WalkwayRecord, PlantError> {
    if history.travel < window.end() {
        return Err(PlantError::InsufficientTravel {
            travelled: history.travel,
            required: window.end(),
        });
    }
    let mut footfalls: Vec<Footfall> = history
        .footfalls
        .iter()
        .filter(|f| f.x >= window.start && f.x <= window.end())
        .copied()
        .collect();
    footfalls.sort_by(|a, b| a.t_contact.total_cmp(&b.t_contact));
    if trim {
        if footfalls.len() <= 2 {
            footfalls.clear();
        } else {
            footfalls.pop();
            footfalls.remove(0);
        }
    }
    Ok(WalkwayRecord { footfalls })
}

/// What the controller hands the plant each period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantDrive {
    /// Commanded torque, Nm. Recorded but not integrated; the plant is
    /// kinematic.
    pub tau_cmd: f64,
    /// Active impedance stiffness, Nm/deg.
    pub stiffness: f64,
}

#[derive(Debug, Clone)]
struct Blend {
    from: GaitProfile,
    elapsed: f64,
}

#[derive(Debug, Clone, Copy)]
struct OpenContact {
    index: usize,
}

#[derive(Debug, Clone, Copy)]
enum GaitEvent {
    Contact(Side),
    Liftoff(Side),
}

/// Simulated user and prosthesis.
#[derive(Debug, Clone)]
pub struct Plant {
    cfg: PlantConfig,
    placement: PlacementConfig,
    noise: NoiseModel,
    spec: DeviceSpec,
    body_weight: f64,
    dt: f64,
    rng: ChaCha8Rng,
    imu_schedule: RefreshSchedule,
    loadcell_schedule: RefreshSchedule,

    tick: u64,
    t: f64,
    /// Unwrapped gait phase, %.
    phase: f64,
    profile: GaitProfile,
    blend: Option<Blend>,
    knee: f64,
    knee_velocity: f64,
    body_x: f64,
    footfalls: Vec<(Footfall, bool)>,
    open: [Option<OpenContact>; 2],
    held: RawSensorFrame,
    last_tau: f64,
}

fn side_index(side: Side) -> usize {
    match side {
        Side::Left => 0,
        Side::Right => 1,
    }
}

impl Plant {
    pub fn new(
        cfg: PlantConfig,
        activity: ActivityMode,
        placement: PlacementConfig,
        noise: NoiseModel,
        spec: DeviceSpec,
        body_weight: f64,
    ) -> Result<Self, PlantError> {
        let profile = GaitProfile::build(activity, &cfg)?;
        let knee = profile.knee.eval(0.0);
        let mut plant = Self {
            rng: ChaCha8Rng::seed_from_u64(noise.seed),
            imu_schedule: RefreshSchedule::new(spec.imu_rate, spec.encoder_rate),
            loadcell_schedule: RefreshSchedule::new(spec.loadcell_rate, spec.encoder_rate),
            dt: spec.dt(),
            cfg,
            placement,
            noise,
            spec,
            body_weight,
            tick: 0,
            t: 0.0,
            phase: 0.0,
            profile,
            blend: None,
            knee,
            knee_velocity: 0.0,
            body_x: 0.0,
            footfalls: Vec::new(),
            open: [None, None],
            held: RawSensorFrame {
                t: 0.0,
                theta_imu: 0.0,
                q: 0.0,
                q_dot: 0.0,
                f_vertical: 0.0,
                m_sagittal: 0.0,
                fresh: FreshMask::NONE,
            },
            last_tau: 0.0,
        };
        if plant.profile.travels {
            plant.record_event(GaitEvent::Contact(plant.cfg.prosthetic_side), 0.0);
        }
        Ok(plant)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn activity(&self) -> ActivityMode {
        self.profile.activity
    }

    pub fn profile(&self) -> &GaitProfile {
        &self.profile
    }

    /// Gait phase in [0, 100).
    pub fn gait_phase(&self) -> f64 {
        self.phase.rem_euclid(100.0)
    }

    /// True knee angle, deg.
    pub fn knee(&self) -> f64 {
        self.knee
    }

    pub fn last_tau(&self) -> f64 {
        self.last_tau
    }

    fn blend_weight(&self) -> f64 {
        match &self.blend {
            Some(b) if self.cfg.blend_time > 0.0 => smoothstep((b.elapsed / self.cfg.blend_time).clamp(0.0, 1.0)),
            _ => 1.0,
        }
    }

    fn blended(&self, f: impl Fn(&GaitProfile, f64) -> f64) -> f64 {
        let phi = self.gait_phase();
        let now = f(&self.profile, phi);
        match &self.blend {
            Some(b) => {
                let w = self.blend_weight();
                (1.0 - w) * f(&b.from, phi) + w * now
            }
            None => now,
        }
    }

    fn knee_target(&self) -> f64 {
        self.blended(|p, phi| p.knee.eval(phi))
    }

    /// Physical thigh and shank tilt, deg.
    pub fn pose(&self) -> SegmentAngles {
        let theta_thigh = self.blended(|p, phi| p.thigh.eval(phi));
        SegmentAngles {
            theta_shank: theta_thigh + self.knee,
            theta_thigh,
        }
    }

    /// Noise-free vertical load, N.
    pub fn true_load(&self) -> f64 {
        self.blended(|p, phi| p.load.eval(phi)) * self.body_weight
    }

    /// Noise-free sagittal moment at the load cell, Nm.
    pub fn true_moment(&self) -> f64 {
        -self.true_load() * self.cfg.moment_arm * self.cfg.leverage.factor(self.placement)
    }

    /// Switches to another activity's templates, cross-fading over
    /// `blend_time`. Moving between walking-type and sit/stand activities
    /// restarts the cycle.
    pub fn switch_activity(&mut self, activity: ActivityMode) -> Result<(), PlantError> {
        if activity == self.profile.activity {
            return Ok(());
        }
        let next = GaitProfile::build(activity, &self.cfg)?;
        let restart = next.travels != self.profile.travels;
        let from = std::mem::replace(&mut self.profile, next);
        self.blend = Some(Blend { from, elapsed: 0.0 });
        if restart {
            self.phase = (self.phase / 100.0).ceil() * 100.0;
            if !self.profile.travels {
                // Contacts without a liftoff never reach the walkway.
                self.open = [None, None];
            } else {
                self.record_event(GaitEvent::Contact(self.cfg.prosthetic_side), self.t);
            }
        }
        Ok(())
    }

    /// Event targets in % of the prosthetic cycle.
    fn event_targets(&self) -> [(f64, GaitEvent); 4] {
        let p = self.cfg.prosthetic_side;
        let s = p.opposite();
        let sc = self.cfg.asymmetry.sound_contact_phase;
        [
            (0.0, GaitEvent::Contact(p)),
            (100.0 * self.profile.stance_fraction, GaitEvent::Liftoff(p)),
            (sc, GaitEvent::Contact(s)),
            (
                (sc + 100.0 * self.cfg.asymmetry.sound_stance_fraction).rem_euclid(100.0),
                GaitEvent::Liftoff(s),
            ),
        ]
    }

    fn gaussian(&mut self, sd: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        sd * z
    }

    fn record_event(&mut self, event: GaitEvent, t: f64) {
        match event {
            GaitEvent::Contact(side) => {
                let is_prosthetic = side == self.cfg.prosthetic_side;
                let reach = if is_prosthetic { self.cfg.asymmetry.prosthetic_reach } else { 0.0 };
                let lateral = if is_prosthetic {
                    self.cfg.asymmetry.prosthetic_lateral
                } else {
                    self.cfg.asymmetry.sound_lateral
                };
                let outward = 0.5 * self.cfg.step_width + lateral;
                let y = match side {
                    Side::Left => -outward,
                    Side::Right => outward,
                };
                // Body position at the event time, interpolated within the tick.
                let x_body = self.body_x + (t - self.t) * self.profile.speed();
                let jitter_x = self.gaussian(self.noise.footfall_position);
                let jitter_t = self.gaussian(self.noise.footfall_time);
                let footfall = Footfall {
                    t_contact: t + jitter_t,
                    t_liftoff: f64::NAN,
                    x: x_body + reach + jitter_x,
                    y,
                    side,
                };
                self.footfalls.push((footfall, false));
                self.open[side_index(side)] = Some(OpenContact {
                    index: self.footfalls.len() - 1,
                });
            }
            GaitEvent::Liftoff(side) => {
                if let Some(open) = self.open[side_index(side)].take() {
                    let jitter_t = self.gaussian(self.noise.footfall_time);
                    let (footfall, done) = &mut self.footfalls[open.index];
                    footfall.t_liftoff = (t + jitter_t).max(footfall.t_contact);
                    *done = true;
                }
            }
        }
    }

    /// Advances the plant by one control period under `drive`.
    pub fn advance(&mut self, drive: PlantDrive) {
        let dt = self.dt;
        self.last_tau = drive.tau_cmd;
        let rate = 100.0 / self.profile.cycle_time;
        let prev_phase = self.phase;
        let next_phase = prev_phase + rate * dt;

        if self.profile.travels {
            let mut crossings: Vec<(f64, GaitEvent)> = Vec::new();
            for (target, event) in self.event_targets() {
                let mut k = ((prev_phase - target) / 100.0).floor() + 1.0;
                loop {
                    let p = target + 100.0 * k;
                    if p > next_phase {
                        break;
                    }
                    if p > prev_phase {
                        crossings.push((self.t + (p - prev_phase) / rate, event));
                    }
                    k += 1.0;
                }
            }
            crossings.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (t, event) in crossings {
                self.record_event(event, t);
            }
        }

        self.body_x += self.profile.speed() * dt;
        self.phase = next_phase;
        self.t = (self.tick + 1) as f64 * dt;
        self.tick += 1;
        if let Some(b) = &mut self.blend {
            b.elapsed += dt;
            if b.elapsed >= self.cfg.blend_time {
                self.blend = None;
            }
        }

        let target = self.knee_target();
        let stiffness = drive.stiffness.max(0.0);
        let tau = self.cfg.tracking_time_constant / (1.0 + stiffness / self.cfg.stiffness_ref);
        let alpha = 1.0 - (-dt / tau).exp();
        let knee = (self.knee + alpha * (target - self.knee)).clamp(self.spec.theta_min, self.spec.theta_max);
        self.knee_velocity = (knee - self.knee) / dt;
        self.knee = knee;
    }

    /// Samples every sensor at the current time. Channels not due for a
    /// refresh on this tick hold their previous value.
    pub fn sense(&mut self) -> RawSensorFrame {
        let tick = self.tick;
        let mut fresh = FreshMask::ENCODER;
        let mut frame = self.held;
        frame.t = self.t;

        let q_noise = self.gaussian(self.noise.q);
        let q_dot_noise = self.gaussian(self.noise.q_dot);
        frame.q = self.knee + q_noise;
        frame.q_dot = self.knee_velocity + q_dot_noise;

        if self.imu_schedule.is_fresh(tick) {
            fresh.insert(FreshMask::IMU);
            let reading = imu_reading_for_pose(self.placement, self.pose());
            let noise = self.gaussian(self.noise.theta_imu);
            frame.theta_imu = crate::model::wrap_degrees(reading + noise);
        }
        if self.loadcell_schedule.is_fresh(tick) {
            fresh.insert(FreshMask::LOADCELL);
            let f_noise = self.gaussian(self.noise.f_vertical);
            let m_noise = self.gaussian(self.noise.m_sagittal);
            frame.f_vertical = self.true_load() + f_noise;
            frame.m_sagittal = self.true_moment() + m_noise;
        }
        frame.fresh = fresh;
        self.held = frame;
        frame
    }

    /// Advance then sense.
    pub fn step(&mut self, drive: PlantDrive) -> RawSensorFrame {
        self.advance(drive);
        self.sense()
    }

    pub fn history(&self) -> PlantHistory {
        PlantHistory {
            footfalls: self.footfalls.iter().filter(|(_, done)| *done).map(|(f, _)| *f).collect(),
            travel: self.body_x,
        }
    }
}
