//! Shared domain types and unit conventions.
//!
//! Angles are degrees with knee flexion positive (0 = full extension),
//! angular velocities are deg/s, torques Nm and forces N.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.81;

/// Where the actuator/sensor body sits relative to the knee axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Placement {
    AboveKnee,
    BelowKnee,
}

impl Placement {
    pub const ALL: [Placement; 2] = [Placement::AboveKnee, Placement::BelowKnee];

    pub fn as_str(self) -> &'static str {
        match self {
            Placement::AboveKnee => "AboveKnee",
            Placement::BelowKnee => "BelowKnee",
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Placement {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "AboveKnee" | "above-knee" | "above_knee" => Ok(Placement::AboveKnee),
            "BelowKnee" | "below-knee" | "below_knee" => Ok(Placement::BelowKnee),
            _ => Err(UnknownName::new("placement", s)),
        }
    }
}

/// Segment the IMU is rigidly attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImuMount {
    ShankFixed,
    ThighFixed,
}

/// Which side of the knee the load cell sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoadCellSite {
    /// Distal, between the prosthesis and the ground.
    GroundSide,
    /// Proximal, between the knee and the socket (or bone-anchored interface).
    SocketSide,
}

/// Powertrain placement together with the sensor semantics it implies.
///
/// Only the placement is stored; IMU mount and load-cell site are derived, so
/// an inconsistent combination cannot be constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlacementConfig {
    placement: Placement,
}

impl PlacementConfig {
    pub const fn new(placement: Placement) -> Self {
        Self { placement }
    }

    pub fn placement(&self) -> Placement {
        self.placement
    }

    pub fn imu_mount(&self) -> ImuMount {
        match self.placement {
            Placement::BelowKnee => ImuMount::ShankFixed,
            Placement::AboveKnee => ImuMount::ThighFixed,
        }
    }

    pub fn loadcell_site(&self) -> LoadCellSite {
        match self.placement {
            Placement::BelowKnee => LoadCellSite::GroundSide,
            Placement::AboveKnee => LoadCellSite::SocketSide,
        }
    }
}

impl From<Placement> for PlacementConfig {
    fn from(placement: Placement) -> Self {
        Self::new(placement)
    }
}

/// Device constants. `device_mass` is metadata and not used by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceSpec {
    /// Nm
    pub torque_limit: f64,
    /// Hz
    pub loadcell_rate: u32,
    /// Hz, also the control-loop rate.
    pub encoder_rate: u32,
    /// Hz
    pub imu_rate: u32,
    /// kg
    pub device_mass: f64,
    /// Mechanical stop range, deg.
    pub theta_min: f64,
    pub theta_max: f64,
}

impl Default for DeviceSpec {
    fn default() -> Self {
        Self {
            torque_limit: 100.0,
            loadcell_rate: 100,
            encoder_rate: 250,
            imu_rate: 250,
            device_mass: 1.8,
            theta_min: 0.0,
            theta_max: 120.0,
        }
    }
}

impl DeviceSpec {
    /// Control period in seconds.
    pub fn dt(&self) -> f64 {
        1.0 / f64::from(self.encoder_rate)
    }

    pub fn contains_angle(&self, theta: f64) -> bool {
        theta >= self.theta_min && theta <= self.theta_max
    }

    /// Returns the first violated invariant, if any.
    pub fn check(&self) -> Result<(), String> {
        if !(self.torque_limit > 0.0 && self.torque_limit.is_finite()) {
            return Err("torque_limit must be > 0".into());
        }
        for (name, rate) in [
            ("loadcell_rate", self.loadcell_rate),
            ("encoder_rate", self.encoder_rate),
            ("imu_rate", self.imu_rate),
        ] {
            if rate == 0 {
                return Err(format!("{name} must be > 0"));
            }
        }
        // Slower channels are scheduled on the encoder grid.
        if self.loadcell_rate > self.encoder_rate {
            return Err("loadcell_rate must not exceed encoder_rate".into());
        }
        if self.imu_rate > self.encoder_rate {
            return Err("imu_rate must not exceed encoder_rate".into());
        }
        if !(self.device_mass >= 0.0 && self.device_mass.is_finite()) {
            return Err("device_mass must be >= 0".into());
        }
        if !(self.theta_min.is_finite() && self.theta_max.is_finite())
            || self.theta_min >= self.theta_max
        {
            return Err("theta_min must be < theta_max".into());
        }
        Ok(())
    }
}

/// Knee joint kinematic state plus the last commanded torque.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointState {
    /// deg
    pub theta: f64,
    /// deg/s
    pub theta_dot: f64,
    /// Nm
    pub tau_cmd: f64,
}

impl JointState {
    pub fn new(theta: f64, theta_dot: f64) -> Self {
        Self {
            theta,
            theta_dot,
            tau_cmd: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantProfile {
    pub id: String,
    /// kg
    pub body_mass: f64,
    /// cm
    pub height: f64,
}

impl ParticipantProfile {
    /// Body weight in newtons.
    pub fn body_weight(&self) -> f64 {
        self.body_mass * GRAVITY
    }

    pub fn check(&self) -> Result<(), String> {
        if !(self.body_mass > 0.0 && self.body_mass.is_finite()) {
            return Err("body_mass must be > 0".into());
        }
        if !(self.height > 0.0 && self.height.is_finite()) {
            return Err("height must be > 0".into());
        }
        Ok(())
    }
}

impl Default for ParticipantProfile {
    fn default() -> Self {
        Self {
            id: "TF01".into(),
            body_mass: 106.1,
            height: 190.5,
        }
    }
}

/// Activity selected by the operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActivityMode {
    LevelWalk,
    RampAscent,
    RampDescent,
    StairAscent,
    StairDescent,
    SitStand,
}

impl ActivityMode {
    pub const ALL: [ActivityMode; 6] = [
        ActivityMode::LevelWalk,
        ActivityMode::RampAscent,
        ActivityMode::RampDescent,
        ActivityMode::StairAscent,
        ActivityMode::StairDescent,
        ActivityMode::SitStand,
    ];

    /// Modes that run the four-phase stance/swing cycle.
    pub fn is_cyclic(self) -> bool {
        self != ActivityMode::SitStand
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActivityMode::LevelWalk => "LevelWalk",
            ActivityMode::RampAscent => "RampAscent",
            ActivityMode::RampDescent => "RampDescent",
            ActivityMode::StairAscent => "StairAscent",
            ActivityMode::StairDescent => "StairDescent",
            ActivityMode::SitStand => "SitStand",
        }
    }
}

impl fmt::Display for ActivityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivityMode {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActivityMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnknownName::new("activity mode", s))
    }
}

/// Foot side on the walkway.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "Left",
            Side::Right => "Right",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Side {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Left" | "L" => Ok(Side::Left),
            "Right" | "R" => Ok(Side::Right),
            _ => Err(UnknownName::new("side", s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} `{name}`")]
pub struct UnknownName {
    pub kind: &'static str,
    pub name: String,
}

impl UnknownName {
    pub fn new(kind: &'static str, name: &str) -> Self {
        Self {
            kind,
            name: name.to_owned(),
        }
    }
}

/// Wraps an angle in degrees to (−180, 180].
pub fn wrap_degrees(angle: f64) -> f64 {
    if angle > -180.0 && angle <= 180.0 {
        return angle;
    }
    angle - 360.0 * ((angle - 180.0) / 360.0).ceil()
}
