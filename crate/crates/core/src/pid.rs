//! Model-free force-tracking baseline: a first-order low-pass filter on the
//! force error feeding a PI(D) law with clamping anti-windup and output
//! saturation.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

use crate::env::{Observation, Policy};

#[derive(Debug, Error, PartialEq)]
#[error("invalid pid config: {0}")]
pub struct PidConfigError(String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidConfig {
    /// A/N
    pub kp: f64,
    /// A/(N·s)
    pub ki: f64,
    /// A·s/N
    pub kd: f64,
    /// Error filter cutoff (Hz).
    pub filter_cutoff: f64,
    /// Output saturation (A).
    pub output_sat: f64,
    /// Bound on `|ki·integral|` (A).
    pub integrator_clamp: f64,
    /// Conditional integration plus integrator clamp. Off only for demonstrations.
    pub anti_windup: bool,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self {
            kp: 0.02,
            ki: 0.002,
            kd: 0.0,
            filter_cutoff: 1.0,
            output_sat: 0.75,
            integrator_clamp: 0.75,
            anti_windup: true,
        }
    }
}

impl PidConfig {
    pub fn validate(&self) -> Result<(), PidConfigError> {
        let bad = |m: &str| Err(PidConfigError(m.into()));
        if ![self.kp, self.ki, self.kd].iter().all(|g| *g >= 0.0 && g.is_finite()) {
            return bad("gains must be finite and >= 0");
        }
        if !(self.filter_cutoff > 0.0) {
            return bad("filter_cutoff must be > 0");
        }
        if !(self.output_sat > 0.0 && self.output_sat.is_finite()) {
            return bad("output_sat must be > 0");
        }
        if !(self.integrator_clamp >= 0.0) {
            return bad("integrator_clamp must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    /// N
    pub filtered_error: f64,
    /// N·s
    pub integral: f64,
    /// N
    pub prev_filtered_error: f64,
}

/// Forward-Euler first-order low-pass: `y += α(x − y)`, `α = dt / (dt + 1/(2π·fc))`.
pub fn lpf_step(y: f64, x: f64, dt: f64, cutoff: f64) -> f64 {
    let alpha = dt / (dt + 1.0 / (TAU * cutoff));
    y + alpha * (x - y)
}

/// Filters `F_des − F` and applies the control law.
pub fn pid_step(s: &PidState, f_des: f64, f: f64, dt: f64, cfg: &PidConfig) -> (f64, PidState) {
    let e_f = lpf_step(s.filtered_error, f_des - f, dt, cfg.filter_cutoff);
    pid_law(s, e_f, dt, cfg)
}

/// The control law on an already-filtered error.
pub fn pid_law(s: &PidState, e_f: f64, dt: f64, cfg: &PidConfig) -> (f64, PidState) {
    let derivative = if cfg.kd == 0.0 { 0.0 } else { cfg.kd * (e_f - s.filtered_error) / dt };
    let mut integral = s.integral + e_f * dt;
    let unsat = cfg.kp * e_f + cfg.ki * integral + derivative;
    if cfg.anti_windup {
        // Freeze while saturated and the error pushes further into saturation.
        if unsat.abs() > cfg.output_sat && unsat * e_f > 0.0 {
            integral = s.integral;
        }
        if cfg.ki > 0.0 {
            let bound = cfg.integrator_clamp / cfg.ki;
            integral = integral.clamp(-bound, bound);
        }
    }
    let u = cfg.kp * e_f + cfg.ki * integral + derivative;
    let next = PidState { filtered_error: e_f, integral, prev_filtered_error: s.filtered_error };
    (u.clamp(-cfg.output_sat, cfg.output_sat), next)
}

/// The controller as an environment policy, polled at the policy rate.
#[derive(Debug, Clone)]
pub struct PidPolicy {
    pub cfg: PidConfig,
    pub state: PidState,
    pub dt: f64,
}

impl PidPolicy {
    pub fn new(cfg: PidConfig, dt: f64) -> Self {
        Self { cfg, state: PidState::default(), dt }
    }

    pub fn reset(&mut self) {
        self.state = PidState::default();
    }
}

impl Policy for PidPolicy {
    fn act(&mut self, obs: &Observation) -> f64 {
        let (u, next) = pid_step(&self.state, obs.f_des, obs.f, self.dt, &self.cfg);
        self.state = next;
        u
    }
}
