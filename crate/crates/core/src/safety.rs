//! Hardware-protection supervisor.
//!
//! Runs on the low-level side every tick and decides what current actually
//! reaches the motor:
//!
//! * `Estopped`: latched, always 0 A, until [`manual_reset`].
//! * `BoundaryRecovery`: outside the learning boundary, a constant current
//!   pushes the joint back towards the bottom of the swing.
//! * `Nominal`: the proposed current, clamped to the action saturation and then
//!   to the supply's current monitor.
//!
//! All limits are checked against *measured* values, like the real controller.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Recovery ends once the joint is this far inside the learning boundary (rad).
pub const RECOVERY_HYSTERESIS_RAD: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum SafetyConfigError {
    #[error("need 0 < learn_bound_rad < estop_bound_rad (got {0} and {1})")]
    Bounds(f64, f64),
    #[error("need 0 < action_sat_A <= supply_clamp_A (got {0} and {1})")]
    Currents(f64, f64),
    #[error("restoring current must be in (0, supply_clamp_A], got {0}")]
    Restoring(f64),
    #[error("estop_force_N must be > 0, got {0}")]
    Force(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyConfig {
    pub learn_bound_rad: f64,
    pub estop_bound_rad: f64,
    #[serde(rename = "estop_force_N")]
    pub estop_force_n: f64,
    #[serde(rename = "action_sat_A")]
    pub action_sat_a: f64,
    #[serde(rename = "supply_clamp_A")]
    pub supply_clamp_a: f64,
    /// Magnitude of the recovery command; its sign always points to q = 0.
    #[serde(rename = "restoring_current_A")]
    pub restoring_current_a: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            learn_bound_rad: 0.25,
            estop_bound_rad: 0.35,
            estop_force_n: 1700.0,
            action_sat_a: 0.75,
            supply_clamp_a: 1.5,
            restoring_current_a: 0.3,
        }
    }
}

impl SafetyConfig {
    pub fn validate(&self) -> Result<(), SafetyConfigError> {
        if !(self.learn_bound_rad > 0.0 && self.learn_bound_rad < self.estop_bound_rad) {
            return Err(SafetyConfigError::Bounds(self.learn_bound_rad, self.estop_bound_rad));
        }
        if !(self.action_sat_a > 0.0 && self.action_sat_a <= self.supply_clamp_a) {
            return Err(SafetyConfigError::Currents(self.action_sat_a, self.supply_clamp_a));
        }
        if !(self.restoring_current_a > 0.0 && self.restoring_current_a <= self.supply_clamp_a) {
            return Err(SafetyConfigError::Restoring(self.restoring_current_a));
        }
        if !(self.estop_force_n > 0.0) {
            return Err(SafetyConfigError::Force(self.estop_force_n));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SafetyMode {
    #[default]
    Nominal,
    BoundaryRecovery,
    Estopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    PositionLimit,
    ForceLimit,
    NonFiniteInput,
    Remote,
}

/// Values are NaN when unknown (remote trip) or when they caused the trip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub kind: FaultKind,
    /// Simulated time of the trip (s).
    pub time: f64,
    #[serde(with = "nan_as_null")]
    pub q_meas: f64,
    #[serde(with = "nan_as_null")]
    pub f_meas: f64,
    #[serde(with = "nan_as_null")]
    pub proposed: f64,
}

/// JSON has no NaN/inf: write non-finite values as `null`, read `null` back as NaN.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Supervisor mode plus the fault that latched it, if any.
///
/// `latched_fault.is_some()` iff `mode == Estopped`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SafetyState {
    pub mode: SafetyMode,
    pub latched_fault: Option<FaultRecord>,
}

impl SafetyState {
    pub fn is_estopped(&self) -> bool {
        self.mode == SafetyMode::Estopped
    }

    fn trip(fault: FaultRecord) -> Self {
        Self { mode: SafetyMode::Estopped, latched_fault: Some(fault) }
    }
}

/// One supervisor decision. Returns the current to apply and the next state.
pub fn supervise(
    q_meas: f64,
    f_meas: f64,
    proposed: f64,
    time: f64,
    s: &SafetyState,
    cfg: &SafetyConfig,
) -> (f64, SafetyState) {
    if s.is_estopped() {
        return (0.0, *s);
    }
    let fault = |kind| FaultRecord { kind, time, q_meas, f_meas, proposed };
    if !(q_meas.is_finite() && f_meas.is_finite() && proposed.is_finite()) {
        return (0.0, SafetyState::trip(fault(FaultKind::NonFiniteInput)));
    }
    if q_meas.abs() > cfg.estop_bound_rad {
        return (0.0, SafetyState::trip(fault(FaultKind::PositionLimit)));
    }
    if f_meas.abs() > cfg.estop_force_n {
        return (0.0, SafetyState::trip(fault(FaultKind::ForceLimit)));
    }

    let recovering = match s.mode {
        SafetyMode::BoundaryRecovery => q_meas.abs() > cfg.learn_bound_rad - RECOVERY_HYSTERESIS_RAD,
        _ => q_meas.abs() > cfg.learn_bound_rad,
    };
    if recovering {
        let restoring = -q_meas.signum() * cfg.restoring_current_a.min(cfg.supply_clamp_a);
        return (restoring, SafetyState { mode: SafetyMode::BoundaryRecovery, latched_fault: None });
    }

    let applied = proposed
        .clamp(-cfg.action_sat_a, cfg.action_sat_a)
        .clamp(-cfg.supply_clamp_a, cfg.supply_clamp_a);
    (applied, SafetyState::default())
}

/// Latches an e-stop from the remote trigger. An existing fault is preserved.
pub fn remote_shutoff(s: &SafetyState, time: f64) -> SafetyState {
    if s.is_estopped() {
        return *s;
    }
    SafetyState::trip(FaultRecord {
        kind: FaultKind::Remote,
        time,
        q_meas: f64::NAN,
        f_meas: f64::NAN,
        proposed: f64::NAN,
    })
}

/// Outcome of an operator reset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResetOutcome {
    pub state: SafetyState,
    /// The rig should zero the encoder offset.
    pub recalibrate_encoder: bool,
    /// Set when the reset was requested outside `Estopped` and ignored.
    pub warning: Option<&'static str>,
}

pub fn manual_reset(s: &SafetyState, recalibrate_encoder: bool) -> ResetOutcome {
    if !s.is_estopped() {
        return ResetOutcome {
            state: *s,
            recalibrate_encoder: false,
            warning: Some("manual reset ignored: supervisor is not e-stopped"),
        };
    }
    ResetOutcome { state: SafetyState::default(), recalibrate_encoder, warning: None }
}
