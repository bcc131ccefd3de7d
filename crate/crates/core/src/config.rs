//! Session configuration file (TOML).
//!
//! One file defines a full session: placement, device, participant,
//! impedance tables, state-machine thresholds, plant and noise. Every section
//! except `placement` may be omitted and takes its default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fsm::{validate_rules, ControllerSettings, RuleSet, Thresholds, DEFAULT_DWELL};
use crate::impedance::ParamTable;
use crate::model::{ActivityMode, DeviceSpec, ParticipantProfile, Placement, PlacementConfig};
use crate::plant::{NoiseModel, PlantConfig};

/// Directory searched for `session.toml` when no config path is given.
pub const CONFIG_DIR_ENV: &str = "KNEESIM_CONFIG_DIR";
pub const DEFAULT_CONFIG_FILE: &str = "session.toml";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {cause}")]
    Read {
        path: PathBuf,
        cause: std::io::Error,
    },
    #[error("{origin}:{line}:{column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config: {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FsmConfig {
    /// Debounce dwell for every transition, s.
    pub dwell: f64,
    /// Equilibrium ramp duration during rising and lowering, s.
    pub sit_stand_ramp: f64,
    pub above_knee: Thresholds,
    pub below_knee: Thresholds,
}

impl Default for FsmConfig {
    fn default() -> Self {
        Self {
            dwell: DEFAULT_DWELL,
            sit_stand_ramp: 1.0,
            above_knee: Thresholds::default(),
            below_knee: Thresholds::default(),
        }
    }
}

impl FsmConfig {
    pub fn thresholds(&self, placement: Placement) -> &Thresholds {
        match placement {
            Placement::AboveKnee => &self.above_knee,
            Placement::BelowKnee => &self.below_knee,
        }
    }

    pub fn rules(&self, placement: Placement) -> RuleSet {
        self.thresholds(placement).to_rules(self.dwell)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub placement: PlacementConfig,
    /// Label of the walking condition, e.g. "self-selected".
    #[serde(default = "default_condition")]
    pub condition: String,
    /// Activity at session start.
    #[serde(default = "default_mode")]
    pub initial_mode: ActivityMode,
    #[serde(default)]
    pub device: DeviceSpec,
    #[serde(default)]
    pub participant: ParticipantProfile,
    #[serde(default)]
    pub fsm: FsmConfig,
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub impedance: ParamTable,
}

fn default_condition() -> String {
    "self-selected".to_string()
}

fn default_mode() -> ActivityMode {
    ActivityMode::LevelWalk
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            placement: Placement::AboveKnee.into(),
            condition: default_condition(),
            initial_mode: default_mode(),
            device: DeviceSpec::default(),
            participant: ParticipantProfile::default(),
            fsm: FsmConfig::default(),
            plant: PlantConfig::default(),
            noise: NoiseModel::default(),
            impedance: ParamTable::default(),
        }
    }
}

impl SessionConfig {
    pub fn placement(&self) -> Placement {
        self.placement.placement()
    }

    pub fn rules(&self) -> RuleSet {
        self.fsm.rules(self.placement())
    }

    pub fn controller_settings(&self) -> ControllerSettings {
        ControllerSettings {
            body_weight: self.participant.body_weight(),
            sit_stand_ramp: self.fsm.sit_stand_ramp,
        }
    }

    /// Checks every cross-field invariant.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.device.check().map_err(|r| invalid("device", r))?;
        self.participant.check().map_err(|r| invalid("participant", r))?;
        self.impedance
            .check(&self.device)
            .map_err(|e| invalid("impedance", e.to_string()))?;
        if !(self.fsm.sit_stand_ramp > 0.0 && self.fsm.sit_stand_ramp.is_finite()) {
            return Err(invalid("fsm.sit_stand_ramp", "must be > 0"));
        }
        for placement in Placement::ALL {
            let field = match placement {
                Placement::AboveKnee => "fsm.above_knee",
                Placement::BelowKnee => "fsm.below_knee",
            };
            validate_rules(&self.fsm.rules(placement)).map_err(|violations| {
                let reasons: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
                invalid(field, reasons.join("; "))
            })?;
        }
        self.plant.check().map_err(|r| invalid("plant", r))?;
        self.noise.check().map_err(|r| invalid("noise", r))?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

/// Parses and validates config text. `origin` names the source in errors.
pub fn parse_config(text: &str, origin: &str) -> Result<SessionConfig, ConfigError> {
    let cfg: SessionConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
        ConfigError::Parse {
            origin: origin.to_string(),
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<SessionConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|cause| ConfigError::Read {
        path: path.to_path_buf(),
        cause,
    })?;
    parse_config(&text, &path.display().to_string())
}

/// `$KNEESIM_CONFIG_DIR/session.toml` when the variable is set.
pub fn default_config_path() -> Option<PathBuf> {
    std::env::var_os(CONFIG_DIR_ENV).map(|dir| PathBuf::from(dir).join(DEFAULT_CONFIG_FILE))
}

/// The config from [`default_config_path`], or the built-in default.
pub fn load_default_config() -> Result<SessionConfig, ConfigError> {
    match default_config_path() {
        Some(path) => load_config(&path),
        None => Ok(SessionConfig::default()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsm::GaitPhase;
    use crate::impedance::ImpedanceParams;
    use crate::model::{ImuMount, LoadCellSite};
    use proptest::prelude::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = SessionConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(parse_config(&text, "default").unwrap(), cfg);
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = parse_config("placement = \"BelowKnee\"\n", "inline").unwrap();
        assert_eq!(cfg.placement(), Placement::BelowKnee);
        assert_eq!(cfg.device, DeviceSpec::default());
        assert_eq!(cfg.impedance, ParamTable::default());
    }

    #[test]
    fn above_knee_means_socket_side_load_cell() {
        let cfg = parse_config("placement = \"AboveKnee\"\n", "inline").unwrap();
        assert_eq!(cfg.placement.loadcell_site(), LoadCellSite::SocketSide);
        assert_eq!(cfg.placement.imu_mount(), ImuMount::ThighFixed);
    }

    #[test]
    fn zero_torque_limit_is_rejected() {
        let err = parse_config("placement = \"AboveKnee\"\n[device]\ntorque_limit = 0.0\n", "inline").unwrap_err();
        match err {
            ConfigError::Invalid { field, reason } => {
                assert_eq!(field, "device");
                assert!(reason.contains("torque_limit"), "{reason}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = parse_config("placement = \"AboveKnee\"\n[device]\ntorque_limit = \"lots\"\n", "inline").unwrap_err();
        match err {
            ConfigError::Parse { line, column, .. } => {
                assert_eq!(line, 3);
                assert!(column > 1);
            }
            other => panic!("{other}"),
        }
        let err = parse_config("placement = \"Sideways\"\n", "inline").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 1, .. }), "{err}");
        let err = parse_config("placement = \"AboveKnee\"\ncolour = 1\n", "inline").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn incomplete_impedance_table_is_rejected() {
        let text = "placement = \"AboveKnee\"\n[impedance]\ncells = []\n";
        assert!(matches!(
            parse_config(text, "inline"),
            Err(ConfigError::Invalid { field, .. }) if field == "impedance"
        ));
    }

    #[test]
    fn inverted_threshold_band_is_rejected() {
        let text = "placement = \"AboveKnee\"\n[fsm.below_knee]\nheel_strike_load = 0.05\n";
        assert!(matches!(
            parse_config(text, "inline"),
            Err(ConfigError::Invalid { field, .. }) if field == "fsm.below_knee"
        ));
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_config(Path::new("/nonexistent/kneesim.toml")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/kneesim.toml"));
    }

    prop_compose! {
        fn configs()(
            below in any::<bool>(),
            seed in any::<u64>(),
            cadence in 80.0f64..100.0,
            speed in 0.8f64..1.5,
            mass in 50.0f64..120.0,
            k in 0.0f64..10.0,
            b in 0.0f64..0.5,
            theta_eq in 0.0f64..120.0,
            tunable in any::<bool>(),
            dwell in 0.01f64..0.2,
            theta_sd in 0.0f64..2.0,
        ) -> SessionConfig {
            let mut cfg = SessionConfig::default();
            if below {
                cfg.placement = Placement::BelowKnee.into();
            }
            cfg.noise.seed = seed;
            cfg.noise.theta_imu = theta_sd;
            cfg.plant = cfg.plant.with_speed_cadence(speed, cadence);
            cfg.plant.set_activity(ActivityMode::LevelWalk, 60.0, None);
            cfg.participant.body_mass = mass;
            cfg.impedance.insert(ActivityMode::RampAscent, GaitPhase::LateStance, ImpedanceParams::new(k, b, theta_eq), tunable);
            cfg.fsm.dwell = dwell;
            cfg
        }
    }

    proptest! {
        #[test]
        fn config_round_trips(cfg in configs()) {
            cfg.validate().unwrap();
            let text = cfg.to_toml().unwrap();
            prop_assert_eq!(parse_config(&text, "generated").unwrap(), cfg);
        }
    }
}
