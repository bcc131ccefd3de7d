//! Powered prosthetic knee: hierarchical impedance controller, closed-loop
//! gait simulator and gait-analysis pipeline.
//!
//! The controller stacks three levels. An operator-selected activity mode
//! picks the parameter set, a gait-phase state machine driven by the load
//! cell and IMU picks the cell, and a joint impedance law turns that cell into
//! torque. The simulator runs it against a kinematic plant at a fixed 250 Hz
//! step under either powertrain placement.

pub mod analysis;
pub mod config;
pub mod fsm;
pub mod geometry;
pub mod impedance;
pub mod logs;
pub mod model;
pub mod plant;
pub mod protocol;
pub mod server;
pub mod session;

pub use config::{load_config, SessionConfig};
pub use fsm::{ControllerState, GaitController, GaitPhase};
pub use geometry::{segment_angles, RawSensorFrame, SegmentAngles};
pub use impedance::{impedance_torque, saturate, ImpedanceParams, ParamTable};
pub use model::{ActivityMode, DeviceSpec, Placement, PlacementConfig};
