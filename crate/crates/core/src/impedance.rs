//! Joint-level impedance law and its parameter tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::fsm::GaitPhase;
use crate::model::{ActivityMode, DeviceSpec, JointState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImpedanceError {
    #[error("non-finite impedance input `{0}`")]
    NonFinite(&'static str),
    #[error("no impedance parameters for ({mode}, {phase})")]
    MissingCell { mode: ActivityMode, phase: GaitPhase },
    #[error("invalid impedance parameters for ({mode}, {phase}): {reason}")]
    InvalidParams {
        mode: ActivityMode,
        phase: GaitPhase,
        reason: String,
    },
    #[error("({mode}, {phase}) is not tunable")]
    NotTunable { mode: ActivityMode, phase: GaitPhase },
}

/// Spring-damper parameters: stiffness `k` (Nm/deg), damping `b`
/// (Nm·s/deg) and equilibrium angle `theta_eq` (deg).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceParams {
    pub k: f64,
    pub b: f64,
    pub theta_eq: f64,
}

impl ImpedanceParams {
    pub const fn new(k: f64, b: f64, theta_eq: f64) -> Self {
        Self { k, b, theta_eq }
    }

    pub fn check(&self, spec: &DeviceSpec) -> Result<(), String> {
        if !(self.k.is_finite() && self.b.is_finite() && self.theta_eq.is_finite()) {
            return Err("parameters must be finite".into());
        }
        if self.k < 0.0 {
            return Err(format!("k must be >= 0 (got {})", self.k));
        }
        if self.b < 0.0 {
            return Err(format!("b must be >= 0 (got {})", self.b));
        }
        if !spec.contains_angle(self.theta_eq) {
            return Err(format!(
                "theta_eq {} outside mechanical range [{}, {}]",
                self.theta_eq, spec.theta_min, spec.theta_max
            ));
        }
        Ok(())
    }
}

/// `tau = -k (theta - theta_eq) - b theta_dot`, unsaturated.
pub fn impedance_torque(state: &JointState, params: &ImpedanceParams) -> Result<f64, ImpedanceError> {
    for (name, v) in [
        ("theta", state.theta),
        ("theta_dot", state.theta_dot),
        ("k", params.k),
        ("b", params.b),
        ("theta_eq", params.theta_eq),
    ] {
        if !v.is_finite() {
            return Err(ImpedanceError::NonFinite(name));
        }
    }
    Ok(-params.k * (state.theta - params.theta_eq) - params.b * state.theta_dot)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Saturation {
    pub torque: f64,
    /// True when the request exceeded the limit and was clamped.
    pub saturated: bool,
}

pub fn saturate(torque: f64, spec: &DeviceSpec) -> Saturation {
    let limit = spec.torque_limit;
    let clamped = torque.clamp(-limit, limit);
    Saturation {
        torque: clamped,
        saturated: torque.abs() > limit,
    }
}

pub type CellKey = (ActivityMode, GaitPhase);

/// Impedance parameters for every (activity, phase) cell the controller can
/// reach, plus the subset exposed to live tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParamTableRepr", try_from = "ParamTableRepr")]
pub struct ParamTable {
    cells: BTreeMap<CellKey, ImpedanceParams>,
    tunable: BTreeMap<CellKey, bool>,
}

impl ParamTable {
    pub fn empty() -> Self {
        Self {
            cells: BTreeMap::new(),
            tunable: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, mode: ActivityMode, phase: GaitPhase, params: ImpedanceParams, tunable: bool) {
        self.cells.insert((mode, phase), params);
        self.tunable.insert((mode, phase), tunable);
    }

    pub fn lookup(&self, mode: ActivityMode, phase: GaitPhase) -> Result<ImpedanceParams, ImpedanceError> {
        self.cells
            .get(&(mode, phase))
            .copied()
            .ok_or(ImpedanceError::MissingCell { mode, phase })
    }

    pub fn is_tunable(&self, mode: ActivityMode, phase: GaitPhase) -> bool {
        self.tunable.get(&(mode, phase)).copied().unwrap_or(false)
    }

    pub fn cells(&self) -> impl Iterator<Item = (CellKey, ImpedanceParams, bool)> + '_ {
        self.cells
            .iter()
            .map(|(key, p)| (*key, *p, self.is_tunable(key.0, key.1)))
    }

    /// Cells the FSM can reach that have no entry.
    pub fn missing_cells(&self) -> Vec<CellKey> {
        reachable_cells()
            .filter(|key| !self.cells.contains_key(key))
            .collect()
    }

    pub fn check(&self, spec: &DeviceSpec) -> Result<(), ImpedanceError> {
        if let Some(&(mode, phase)) = self.missing_cells().first() {
            return Err(ImpedanceError::MissingCell { mode, phase });
        }
        for (&(mode, phase), params) in &self.cells {
            params
                .check(spec)
                .map_err(|reason| ImpedanceError::InvalidParams { mode, phase, reason })?;
        }
        Ok(())
    }

    /// Replaces one whole cell. The triple is validated first and either
    /// lands completely or not at all.
    pub fn apply_update(
        &mut self,
        mode: ActivityMode,
        phase: GaitPhase,
        params: ImpedanceParams,
        spec: &DeviceSpec,
    ) -> Result<(), ImpedanceError> {
        if !self.cells.contains_key(&(mode, phase)) {
            return Err(ImpedanceError::MissingCell { mode, phase });
        }
        if !self.is_tunable(mode, phase) {
            return Err(ImpedanceError::NotTunable { mode, phase });
        }
        params
            .check(spec)
            .map_err(|reason| ImpedanceError::InvalidParams { mode, phase, reason })?;
        self.cells.insert((mode, phase), params);
        Ok(())
    }
}

/// Every (activity, phase) pair the state machine can visit.
pub fn reachable_cells() -> impl Iterator<Item = CellKey> {
    ActivityMode::ALL
        .into_iter()
        .flat_map(|mode| GaitPhase::phases_for(mode).iter().map(move |&phase| (mode, phase)))
}

/// (k Nm/deg, b Nm·s/deg, theta_eq deg)
type Cell = (f64, f64, f64);

impl Default for ParamTable {
    /// Hand-tuned, non-clinical defaults that keep the simulated gait stable.
    fn default() -> Self {
        use ActivityMode::*;
        use GaitPhase::*;
        let rows: [(ActivityMode, [Cell; 4]); 5] = [
            (LevelWalk, [(2.5, 0.05, 5.0), (0.6, 0.02, 30.0), (0.3, 0.010, 60.0), (0.2, 0.015, 5.0)]),
            (RampAscent, [(3.0, 0.06, 15.0), (2.2, 0.05, 8.0), (0.3, 0.010, 65.0), (0.2, 0.015, 15.0)]),
            (RampDescent, [(2.0, 0.08, 20.0), (1.8, 0.06, 20.0), (0.3, 0.010, 60.0), (0.2, 0.015, 5.0)]),
            (StairAscent, [(1.2, 0.05, 10.0), (0.5, 0.02, 30.0), (0.4, 0.010, 85.0), (0.25, 0.015, 60.0)]),
            (StairDescent, [(1.5, 0.10, 45.0), (1.5, 0.10, 60.0), (0.3, 0.010, 80.0), (0.2, 0.015, 10.0)]),
        ];
        let mut table = ParamTable::empty();
        for (mode, cells) in rows {
            for (phase, (k, b, theta_eq)) in GaitPhase::CYCLIC.into_iter().zip(cells) {
                table.insert(mode, phase, ImpedanceParams::new(k, b, theta_eq), true);
            }
        }
        // Rising/Lowering ramp theta_eq between the Seated and Standing cells.
        table.insert(SitStand, Seated, ImpedanceParams::new(0.5, 0.05, 90.0), true);
        table.insert(SitStand, Rising, ImpedanceParams::new(3.0, 0.08, 45.0), true);
        table.insert(SitStand, Standing, ImpedanceParams::new(3.0, 0.08, 0.0), true);
        table.insert(SitStand, Lowering, ImpedanceParams::new(2.0, 0.12, 45.0), true);
        table
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellRepr {
    activity: ActivityMode,
    phase: GaitPhase,
    k: f64,
    b: f64,
    theta_eq: f64,
    #[serde(default = "default_true")]
    tunable: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamTableRepr {
    cells: Vec<CellRepr>,
}

impl From<ParamTable> for ParamTableRepr {
    fn from(table: ParamTable) -> Self {
        let cells = table
            .cells()
            .map(|((activity, phase), p, tunable)| CellRepr {
                activity,
                phase,
                k: p.k,
                b: p.b,
                theta_eq: p.theta_eq,
                tunable,
            })
            .collect();
        Self { cells }
    }
}

impl TryFrom<ParamTableRepr> for ParamTable {
    type Error = String;

    fn try_from(repr: ParamTableRepr) -> Result<Self, Self::Error> {
        let mut table = ParamTable::empty();
        for c in repr.cells {
            if table.cells.contains_key(&(c.activity, c.phase)) {
                return Err(format!("duplicate impedance cell ({}, {})", c.activity, c.phase));
            }
            table.insert(c.activity, c.phase, ImpedanceParams::new(c.k, c.b, c.theta_eq), c.tunable);
        }
        Ok(table)
    }
}
