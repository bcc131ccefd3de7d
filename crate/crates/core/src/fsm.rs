//! Activity selection and the gait-phase state machine.
//!
//! The operator picks the activity (a key-fob press becomes a pending mode
//! request). The state machine advances through the phases of that activity
//! from load-cell and IMU-derived signals, and every tick the impedance cell
//! for the current (activity, phase) produces the joint torque.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{RawSensorFrame, SegmentAngles};
use crate::impedance::{impedance_torque, saturate, ImpedanceParams, ParamTable};
use crate::model::{ActivityMode, DeviceSpec, JointState, UnknownName};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GaitPhase {
    EarlyStance,
    LateStance,
    SwingFlexion,
    SwingExtension,
    Seated,
    Rising,
    Standing,
    Lowering,
}

impl GaitPhase {
    pub const CYCLIC: [GaitPhase; 4] = [
        GaitPhase::EarlyStance,
        GaitPhase::LateStance,
        GaitPhase::SwingFlexion,
        GaitPhase::SwingExtension,
    ];
    pub const SIT_STAND: [GaitPhase; 4] = [
        GaitPhase::Seated,
        GaitPhase::Rising,
        GaitPhase::Standing,
        GaitPhase::Lowering,
    ];
    pub const ALL: [GaitPhase; 8] = [
        GaitPhase::EarlyStance,
        GaitPhase::LateStance,
        GaitPhase::SwingFlexion,
        GaitPhase::SwingExtension,
        GaitPhase::Seated,
        GaitPhase::Rising,
        GaitPhase::Standing,
        GaitPhase::Lowering,
    ];

    pub fn phases_for(mode: ActivityMode) -> &'static [GaitPhase] {
        if mode.is_cyclic() {
            &Self::CYCLIC
        } else {
            &Self::SIT_STAND
        }
    }

    pub fn is_cyclic(self) -> bool {
        Self::CYCLIC.contains(&self)
    }

    /// Successor in the fixed phase order of this phase's family.
    pub fn next(self) -> GaitPhase {
        use GaitPhase::*;
        match self {
            EarlyStance => LateStance,
            LateStance => SwingFlexion,
            SwingFlexion => SwingExtension,
            SwingExtension => EarlyStance,
            Seated => Rising,
            Rising => Standing,
            Standing => Lowering,
            Lowering => Seated,
        }
    }

    pub fn is_stance(self) -> bool {
        matches!(self, GaitPhase::EarlyStance | GaitPhase::LateStance)
    }

    pub fn as_str(self) -> &'static str {
        use GaitPhase::*;
        match self {
            EarlyStance => "EarlyStance",
            LateStance => "LateStance",
            SwingFlexion => "SwingFlexion",
            SwingExtension => "SwingExtension",
            Seated => "Seated",
            Rising => "Rising",
            Standing => "Standing",
            Lowering => "Lowering",
        }
    }
}

impl fmt::Display for GaitPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GaitPhase {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GaitPhase::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| UnknownName::new("gait phase", s))
    }
}

/// Condition on one sensor-derived signal. Load thresholds are fractions of
/// body weight, angles deg, velocities deg/s. Comparisons are inclusive for
/// load and angle, strict for velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Guard {
    LoadAbove(f64),
    LoadBelow(f64),
    ThighBelow(f64),
    ThighAbove(f64),
    KneeBelow(f64),
    KneeAbove(f64),
    VelocityBelow(f64),
    VelocityAbove(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuardInputs {
    /// Vertical load over body weight.
    pub load: f64,
    pub thigh: f64,
    pub knee: f64,
    pub knee_velocity: f64,
}

impl Guard {
    pub fn holds(&self, x: &GuardInputs) -> bool {
        match *self {
            Guard::LoadAbove(v) => x.load >= v,
            Guard::LoadBelow(v) => x.load <= v,
            Guard::ThighBelow(v) => x.thigh <= v,
            Guard::ThighAbove(v) => x.thigh >= v,
            Guard::KneeBelow(v) => x.knee <= v,
            Guard::KneeAbove(v) => x.knee >= v,
            Guard::VelocityBelow(v) => x.knee_velocity < v,
            Guard::VelocityAbove(v) => x.knee_velocity > v,
        }
    }

    fn threshold(&self) -> f64 {
        match *self {
            Guard::LoadAbove(v)
            | Guard::LoadBelow(v)
            | Guard::ThighBelow(v)
            | Guard::ThighAbove(v)
            | Guard::KneeBelow(v)
            | Guard::KneeAbove(v)
            | Guard::VelocityBelow(v)
            | Guard::VelocityAbove(v) => v,
        }
    }

    /// (signal name, is an upper-side trigger)
    fn band_side(&self) -> (&'static str, bool) {
        match self {
            Guard::LoadAbove(_) => ("load", true),
            Guard::LoadBelow(_) => ("load", false),
            Guard::ThighAbove(_) => ("thigh", true),
            Guard::ThighBelow(_) => ("thigh", false),
            Guard::KneeAbove(_) => ("knee", true),
            Guard::KneeBelow(_) => ("knee", false),
            Guard::VelocityAbove(_) => ("velocity", true),
            Guard::VelocityBelow(_) => ("velocity", false),
        }
    }
}

/// Exit rule of one phase. The guard must hold continuously for `dwell`
/// seconds before the machine advances to `from.next()`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRule {
    pub from: GaitPhase,
    pub guard: Guard,
    /// s
    pub dwell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSet {
    pub rules: Vec<TransitionRule>,
}

/// Threshold block from which a rule set is built. Thresholds need per-
/// placement calibration, so a session carries one block per placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Heel strike: load rises to this fraction of body weight.
    pub heel_strike_load: f64,
    /// Toe off: load falls to this fraction of body weight.
    pub toe_off_load: f64,
    /// Early to late stance: the hip extends and the thigh tilts back past
    /// this angle, deg.
    pub late_stance_thigh: f64,
    /// Swing flexion to extension: knee velocity drops below this, deg/s.
    pub swing_reversal_velocity: f64,
    /// Seated to rising: load fraction.
    pub rise_load: f64,
    /// Rising to standing: knee angle, deg.
    pub stand_knee: f64,
    /// Standing to lowering: knee angle, deg.
    pub lower_knee: f64,
    /// Lowering to seated: load fraction.
    pub sit_load: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            heel_strike_load: 0.20,
            toe_off_load: 0.10,
            late_stance_thigh: -5.0,
            swing_reversal_velocity: 0.0,
            rise_load: 0.35,
            stand_knee: 10.0,
            lower_knee: 15.0,
            sit_load: 0.20,
        }
    }
}

impl Thresholds {
    pub fn to_rules(&self, dwell: f64) -> RuleSet {
        use GaitPhase::*;
        let rule = |from, guard| TransitionRule { from, guard, dwell };
        RuleSet {
            rules: vec![
                rule(EarlyStance, Guard::ThighAbove(self.late_stance_thigh)),
                rule(LateStance, Guard::LoadBelow(self.toe_off_load)),
                rule(SwingFlexion, Guard::VelocityBelow(self.swing_reversal_velocity)),
                rule(SwingExtension, Guard::LoadAbove(self.heel_strike_load)),
                rule(Seated, Guard::LoadAbove(self.rise_load)),
                rule(Rising, Guard::KneeBelow(self.stand_knee)),
                rule(Standing, Guard::KneeAbove(self.lower_knee)),
                rule(Lowering, Guard::LoadBelow(self.sit_load)),
            ],
        }
    }
}

impl Default for RuleSet {
    fn default() -> Self {
        Thresholds::default().to_rules(DEFAULT_DWELL)
    }
}

/// Debounce dwell, s (15 ticks at 250 Hz).
pub const DEFAULT_DWELL: f64 = 0.060;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RuleViolation {
    #[error("phase {0} has no exit rule")]
    MissingExit(GaitPhase),
    #[error("phase {0} has more than one exit rule")]
    DuplicateExit(GaitPhase),
    #[error("exit rule of {phase} has dwell {dwell} s; dwell must be > 0")]
    NonPositiveDwell { phase: GaitPhase, dwell: f64 },
    #[error("exit rule of {0} has a non-finite threshold")]
    NonFiniteThreshold(GaitPhase),
    #[error("inverted {signal} band: lower trigger {lower} ({lower_phase}) >= upper trigger {upper} ({upper_phase})")]
    InvertedBand {
        signal: &'static str,
        lower: f64,
        lower_phase: GaitPhase,
        upper: f64,
        upper_phase: GaitPhase,
    },
}

/// Checks totality, positive dwell and non-inverted threshold bands.
pub fn validate_rules(rules: &RuleSet) -> Result<(), Vec<RuleViolation>> {
    let mut violations = Vec::new();
    for phase in GaitPhase::ALL {
        match rules.rules.iter().filter(|r| r.from == phase).count() {
            0 => violations.push(RuleViolation::MissingExit(phase)),
            1 => {}
            _ => violations.push(RuleViolation::DuplicateExit(phase)),
        }
    }
    for rule in &rules.rules {
        if !(rule.dwell > 0.0 && rule.dwell.is_finite()) {
            violations.push(RuleViolation::NonPositiveDwell {
                phase: rule.from,
                dwell: rule.dwell,
            });
        }
        if !rule.guard.threshold().is_finite() {
            violations.push(RuleViolation::NonFiniteThreshold(rule.from));
        }
    }
    // Within a phase family, every falling trigger on a signal must sit below
    // every rising trigger on the same signal.
    for family in [&GaitPhase::CYCLIC, &GaitPhase::SIT_STAND] {
        let members: Vec<&TransitionRule> = rules
            .rules
            .iter()
            .filter(|r| family.contains(&r.from))
            .collect();
        for lower in &members {
            let (signal, upper_side) = lower.guard.band_side();
            if upper_side {
                continue;
            }
            for upper in &members {
                let (other, is_upper) = upper.guard.band_side();
                if other == signal && is_upper && lower.guard.threshold() >= upper.guard.threshold() {
                    violations.push(RuleViolation::InvertedBand {
                        signal,
                        lower: lower.guard.threshold(),
                        lower_phase: lower.from,
                        upper: upper.guard.threshold(),
                        upper_phase: upper.from,
                    });
                }
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Transition events raised on one tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransitionEvent {
    HeelStrike,
    ToeOff,
    PhaseAdvance,
    ModeSwitch,
}

impl TransitionEvent {
    const ALL: [TransitionEvent; 4] = [
        TransitionEvent::HeelStrike,
        TransitionEvent::ToeOff,
        TransitionEvent::PhaseAdvance,
        TransitionEvent::ModeSwitch,
    ];

    fn bit(self) -> u8 {
        match self {
            TransitionEvent::HeelStrike => 1,
            TransitionEvent::ToeOff => 2,
            TransitionEvent::PhaseAdvance => 4,
            TransitionEvent::ModeSwitch => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TransitionEvent::HeelStrike => "HeelStrike",
            TransitionEvent::ToeOff => "ToeOff",
            TransitionEvent::PhaseAdvance => "PhaseAdvance",
            TransitionEvent::ModeSwitch => "ModeSwitch",
        }
    }
}

/// Small set of [`TransitionEvent`]s. Written to logs as `A|B`, empty when
/// nothing happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EventSet(u8);

impl EventSet {
    pub fn insert(&mut self, event: TransitionEvent) {
        self.0 |= event.bit();
    }

    pub fn contains(self, event: TransitionEvent) -> bool {
        self.0 & event.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = TransitionEvent> {
        TransitionEvent::ALL.into_iter().filter(move |e| self.contains(*e))
    }
}

impl fmt::Display for EventSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            f.write_str(e.as_str())?;
        }
        Ok(())
    }
}

impl FromStr for EventSet {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut set = EventSet::default();
        for name in s.split('|').map(str::trim).filter(|n| !n.is_empty()) {
            let event = TransitionEvent::ALL
                .into_iter()
                .find(|e| e.as_str() == name)
                .ok_or_else(|| UnknownName::new("event", name))?;
            set.insert(event);
        }
        Ok(set)
    }
}

impl Serialize for EventSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EventSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything the controller carries from one tick to the next.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    pub mode: ActivityMode,
    pub phase: GaitPhase,
    /// s
    pub time_in_phase: f64,
    pub last_event: Option<TransitionEvent>,
    /// Events raised on the most recent tick.
    pub events: EventSet,
    pub tau_cmd: f64,
    pub saturated: bool,
    /// Parameters used for the most recent torque.
    pub active_params: ImpedanceParams,
    pub pending_mode: Option<ActivityMode>,
    /// Set when the torque could not be computed; torque is zeroed.
    pub fault: bool,
    hold_ticks: u32,
}

impl ControllerState {
    /// Starts at the entry phase of `mode`: early stance for cyclic modes,
    /// standing for sit/stand.
    pub fn new(mode: ActivityMode) -> Self {
        Self {
            mode,
            phase: entry_phase(mode),
            time_in_phase: 0.0,
            last_event: None,
            events: EventSet::default(),
            tau_cmd: 0.0,
            saturated: false,
            active_params: ImpedanceParams::new(0.0, 0.0, 0.0),
            pending_mode: None,
            fault: false,
            hold_ticks: 0,
        }
    }

    /// Records a key-fob request. Only one request is pending at a time and
    /// the latest one wins; requesting the active mode clears it.
    pub fn request_mode(mut self, mode: ActivityMode) -> Self {
        self.pending_mode = (mode != self.mode).then_some(mode);
        self
    }
}

fn entry_phase(mode: ActivityMode) -> GaitPhase {
    if mode.is_cyclic() {
        GaitPhase::EarlyStance
    } else {
        GaitPhase::Standing
    }
}

/// Settings that are not transition rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerSettings {
    pub body_weight: f64,
    /// Duration of the sit/stand equilibrium ramp, s.
    pub sit_stand_ramp: f64,
}

/// Validated rule set plus everything needed to run ticks.
#[derive(Debug, Clone)]
pub struct GaitController {
    exits: [(Guard, u32); 8],
    settings: ControllerSettings,
    spec: DeviceSpec,
    dt: f64,
}

impl GaitController {
    pub fn new(rules: &RuleSet, settings: ControllerSettings, spec: DeviceSpec) -> Result<Self, Vec<RuleViolation>> {
        validate_rules(rules)?;
        let dt = spec.dt();
        let exits = GaitPhase::ALL.map(|phase| {
            let rule = rules.rules.iter().find(|r| r.from == phase).expect("validated");
            // Guard must be true on dwell_ticks + 1 consecutive ticks, which
            // spans exactly `dwell` seconds.
            let dwell_ticks = (rule.dwell / dt - 1e-9).ceil().max(1.0) as u32;
            (rule.guard, dwell_ticks)
        });
        Ok(Self {
            exits,
            settings,
            spec,
            dt,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn exit_of(&self, phase: GaitPhase) -> (Guard, u32) {
        let idx = GaitPhase::ALL.iter().position(|p| *p == phase).expect("all phases");
        self.exits[idx]
    }

    /// Advances the controller by one control period.
    ///
    /// At most one phase transition is evaluated per tick: the exit rule of
    /// the current phase. A pending mode switch is applied on entry into
    /// early stance (cyclic modes) or on any tick spent standing (sit/stand).
    pub fn tick(
        &self,
        state: &ControllerState,
        frame: &RawSensorFrame,
        angles: &SegmentAngles,
        table: &ParamTable,
    ) -> ControllerState {
        let mut next = *state;
        next.events = EventSet::default();

        let inputs = GuardInputs {
            load: frame.f_vertical / self.settings.body_weight,
            thigh: angles.theta_thigh,
            knee: frame.q,
            knee_velocity: frame.q_dot,
        };
        let (guard, dwell_ticks) = self.exit_of(state.phase);
        next.hold_ticks = if guard.holds(&inputs) { state.hold_ticks + 1 } else { 0 };

        if next.hold_ticks > dwell_ticks {
            let from = state.phase;
            next.phase = from.next();
            next.time_in_phase = 0.0;
            next.hold_ticks = 0;
            let event = match (from, next.phase) {
                (GaitPhase::SwingExtension, GaitPhase::EarlyStance) => TransitionEvent::HeelStrike,
                (GaitPhase::LateStance, GaitPhase::SwingFlexion) => TransitionEvent::ToeOff,
                _ => TransitionEvent::PhaseAdvance,
            };
            next.events.insert(event);
            next.last_event = Some(event);

            if next.phase == GaitPhase::EarlyStance {
                if let Some(target) = next.pending_mode.take() {
                    next.mode = target;
                    next.phase = entry_phase(target);
                    next.events.insert(TransitionEvent::ModeSwitch);
                    next.last_event = Some(TransitionEvent::ModeSwitch);
                }
            }
        } else {
            next.time_in_phase = state.time_in_phase + self.dt;
        }

        if next.mode == ActivityMode::SitStand && next.phase == GaitPhase::Standing {
            if let Some(target) = next.pending_mode.take() {
                next.mode = target;
                next.phase = entry_phase(target);
                next.time_in_phase = 0.0;
                next.hold_ticks = 0;
                next.events.insert(TransitionEvent::ModeSwitch);
                next.last_event = Some(TransitionEvent::ModeSwitch);
            }
        }

        let joint = JointState::new(frame.q, frame.q_dot);
        match self
            .params_for(&next, table)
            .and_then(|p| impedance_torque(&joint, &p).map(|tau| (p, tau)))
        {
            Ok((params, tau)) => {
                let sat = saturate(tau, &self.spec);
                next.active_params = params;
                next.tau_cmd = sat.torque;
                next.saturated = sat.saturated;
                next.fault = false;
            }
            Err(err) => {
                log::warn!("zeroing torque: {err}");
                next.tau_cmd = 0.0;
                next.saturated = false;
                next.fault = true;
            }
        }
        next
    }

    fn params_for(
        &self,
        state: &ControllerState,
        table: &ParamTable,
    ) -> Result<ImpedanceParams, crate::impedance::ImpedanceError> {
        let mut params = table.lookup(state.mode, state.phase)?;
        if state.mode == ActivityMode::SitStand {
            let ramp = |from: GaitPhase, to: GaitPhase| -> Result<f64, _> {
                let a = table.lookup(ActivityMode::SitStand, from)?.theta_eq;
                let b = table.lookup(ActivityMode::SitStand, to)?.theta_eq;
                let s = if self.settings.sit_stand_ramp > 0.0 {
                    (state.time_in_phase / self.settings.sit_stand_ramp).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                Ok(a + (b - a) * s)
            };
            match state.phase {
                GaitPhase::Rising => params.theta_eq = ramp(GaitPhase::Seated, GaitPhase::Standing)?,
                GaitPhase::Lowering => params.theta_eq = ramp(GaitPhase::Standing, GaitPhase::Seated)?,
                _ => {}
            }
        }
        Ok(params)
    }
}
