//! Closed-loop sessions: plant, state machine and impedance law stepped
//! together on the control clock.
//!
//! Each tick runs in a fixed order: queued commands, plant sensing, segment
//! angles, controller tick, logging, plant advance. Runs are deterministic in
//! (config, script, seed).

use std::str::FromStr;

use crate::analysis::{spatiotemporal, summarize_trials, AnalysisError, SdConvention, SummaryRow};
use crate::config::{ConfigError, SessionConfig};
use crate::fsm::{ControllerState, GaitController, GaitPhase, TransitionEvent};
use crate::geometry::{segment_angles, GeometryError, RawSensorFrame};
use crate::impedance::{ImpedanceError, ImpedanceParams, ParamTable};
use crate::logs::{SensorLog, StateLog, StateRecord};
use crate::model::ActivityMode;
use crate::plant::{emit_walkway, Plant, PlantDrive, PlantError, PlantHistory, WalkwayRecord, WalkwayWindow};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("script line {line}: {message}")]
    Script { line: usize, message: String },
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid transition rules: {0}")]
    Rules(String),
    #[error("duration must be finite and >= 0, got {0}")]
    Duration(f64),
}

/// An operator action applied at a tick boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    /// Key-fob activity request.
    RequestMode(ActivityMode),
    /// Impedance cell edit.
    UpdateParams {
        activity: ActivityMode,
        phase: GaitPhase,
        params: ImpedanceParams,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptEvent {
    /// s
    pub t: f64,
    pub command: Command,
}

/// Time-stamped key-fob events, one per line:
///
/// ```text
/// # comment
/// 12.0, request_mode, StairAscent
/// ```
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventScript {
    /// Sorted by time; equal times keep file order.
    pub events: Vec<ScriptEvent>,
}

impl FromStr for EventScript {
    type Err = SessionError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut events = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| SessionError::Script { line, message };
            let fields: Vec<&str> = content.split(',').map(str::trim).collect();
            let [t, action, arg] = fields[..] else {
                return Err(err(format!("expected 't, action, argument', found {} fields", fields.len())));
            };
            let t: f64 = t.parse().map_err(|_| err(format!("bad time '{t}'")))?;
            if !(t >= 0.0 && t.is_finite()) {
                return Err(err(format!("time must be finite and >= 0, got {t}")));
            }
            let command = match action {
                "request_mode" => Command::RequestMode(arg.parse().map_err(|e| err(format!("{e}")))?),
                other => return Err(err(format!("unknown action '{other}'"))),
            };
            events.push(ScriptEvent { t, command });
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        Ok(Self { events })
    }
}

/// Everything observable about one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickSample {
    pub frame: RawSensorFrame,
    pub state: ControllerState,
}

/// The stepped closed loop.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    config: SessionConfig,
    controller: GaitController,
    plant: Plant,
    table: ParamTable,
    state: ControllerState,
    /// Bumped on every accepted parameter update.
    revision: u64,
    sensor_log: SensorLog,
    state_log: StateLog,
}

impl ClosedLoop {
    pub fn new(config: &SessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        let controller = GaitController::new(&config.rules(), config.controller_settings(), config.device.clone())
            .map_err(|v| SessionError::Rules(v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")))?;
        let plant = Plant::new(
            config.plant.clone(),
            config.initial_mode,
            config.placement,
            config.noise.clone(),
            config.device.clone(),
            config.participant.body_weight(),
        )?;
        Ok(Self {
            controller,
            plant,
            table: config.impedance.clone(),
            state: ControllerState::new(config.initial_mode),
            revision: 0,
            sensor_log: SensorLog::default(),
            state_log: StateLog::default(),
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    /// Time of the next tick, s.
    pub fn time(&self) -> f64 {
        self.plant.time()
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn table(&self) -> &ParamTable {
        &self.table
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn apply(&mut self, command: Command) -> Result<(), ImpedanceError> {
        match command {
            Command::RequestMode(mode) => {
                self.state = self.state.request_mode(mode);
                Ok(())
            }
            Command::UpdateParams { activity, phase, params } => {
                self.table.apply_update(activity, phase, params, &self.config.device)?;
                self.revision += 1;
                Ok(())
            }
        }
    }

    /// Runs one control period.
    pub fn step(&mut self) -> Result<TickSample, SessionError> {
        let frame = self.plant.sense();
        let angles = segment_angles(&frame, self.config.placement)?;
        self.state = self.controller.tick(&self.state, &frame, &angles, &self.table);
        if self.state.events.contains(TransitionEvent::ModeSwitch) {
            self.plant.switch_activity(self.state.mode)?;
        }
        self.sensor_log.frames.push(frame);
        self.state_log.records.push(StateRecord {
            t: frame.t,
            mode: self.state.mode,
            phase: self.state.phase,
            events: self.state.events,
            tau_cmd: self.state.tau_cmd,
            saturated: self.state.saturated,
        });
        self.plant.advance(PlantDrive {
            tau_cmd: self.state.tau_cmd,
            stiffness: self.state.active_params.k,
        });
        Ok(TickSample {
            frame,
            state: self.state,
        })
    }

    pub fn finish(self) -> SessionOutput {
        let history = self.plant.history();
        let plant = &self.config.plant;
        let window = WalkwayWindow::new(plant.walkway_start, plant.walkway_length);
        let walkway = match emit_walkway(&history, window, true) {
            Ok(record) => record,
            Err(err) => {
                log::info!("no walkway record: {err}");
                WalkwayRecord::default()
            }
        };
        let summary = summarize(&self.config, &walkway);
        SessionOutput {
            sensor_log: self.sensor_log,
            state_log: self.state_log,
            walkway,
            history,
            summary,
        }
    }
}

fn summarize(config: &SessionConfig, walkway: &WalkwayRecord) -> Vec<SummaryRow> {
    let row = spatiotemporal(walkway, &config.participant).and_then(|m| {
        summarize_trials(&[m], config.placement(), &config.condition, SdConvention::Population)
    });
    match row {
        Ok(row) => vec![row],
        Err(err @ (AnalysisError::InsufficientSteps { .. } | AnalysisError::NoSteps { .. })) => {
            log::info!("no summary row: {err}");
            Vec::new()
        }
        Err(err) => {
            log::warn!("no summary row: {err}");
            Vec::new()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutput {
    pub sensor_log: SensorLog,
    pub state_log: StateLog,
    /// Trimmed footfalls on the walkway; empty when the run did not cover it.
    pub walkway: WalkwayRecord,
    pub history: PlantHistory,
    /// One row when the walkway record supports analysis.
    pub summary: Vec<SummaryRow>,
}

/// Number of control ticks in `duration` seconds.
pub fn tick_count(duration: f64, dt: f64) -> Result<u64, SessionError> {
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(SessionError::Duration(duration));
    }
    Ok((duration / dt).round() as u64)
}

/// Runs a full closed-loop session, applying script events at the first
/// tick at or after their time stamp.
pub fn scripted_session(config: &SessionConfig, script: &EventScript, duration: f64) -> Result<SessionOutput, SessionError> {
    let mut lp = ClosedLoop::new(config)?;
    let dt = config.device.dt();
    let ticks = tick_count(duration, dt)?;
    let mut pending = script.events.iter().peekable();
    for _ in 0..ticks {
        let now = lp.time();
        while let Some(ev) = pending.next_if(|ev| ev.t <= now + 1e-9) {
            if let Err(err) = lp.apply(ev.command) {
                log::warn!("script event at t={} rejected: {err}", ev.t);
            }
        }
        lp.step()?;
    }
    Ok(lp.finish())
}
