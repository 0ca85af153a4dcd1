//! Two-mass series-elastic actuator driving a weighted pendulum.
//!
//! The motor nut (reflected mass `m_m`, position `x_m`) is driven by an ideal
//! current loop, `K·i`, and pushes the pendulum lever through a linear spring:
//!
//! ```text
//! m_m·ẍ_m = K·i − F_motor − friction(ẋ_m)
//! I·q̈     = r·F − m·g·L·sin(q) − b_j·q̇          I = m·L²
//! F       = k·(x_m − backlash_offset − r·q)
//! ```
//!
//! Integration is semi-implicit (symplectic) Euler at `micro_dt`. Both velocity
//! updates use forces evaluated at the old positions, positions then advance
//! with the new velocities. The explicit spring term is stable while
//! `k < m_m·(2/dt)²` and `k·r² < I·(2/dt)²`.
//!
//! Backlash is a play operator: the spring's motor-side end only moves when the
//! nut reaches either side of the dead band, so `backlash_offset` stays within
//! `±gap/2`. While the nut floats inside the band it feels no spring reaction.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this nut speed the friction model treats the nut as at rest (m/s).
pub const STICK_VELOCITY: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum PlantError {
    #[error("non-finite input to plant step: {0}")]
    NonFinite(&'static str),
    #[error("invalid plant parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
}

/// Physical parameters of the actuator and pendulum.
///
/// `Default` is the shipped "paperlike-default" set. Apart from the pendulum's
/// mass and length these values are calibrated, not identified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// Point mass at the end of the pendulum (kg).
    pub pendulum_mass: f64,
    /// Pendulum arm length (m).
    pub arm_length: f64,
    /// Actuator moment arm about the joint (m).
    pub lever_radius: f64,
    /// Series spring stiffness (N/m).
    pub spring_stiffness: f64,
    /// Rotor + screw inertia reflected to nut translation (kg).
    pub motor_reflected_mass: f64,
    /// Motor torque constant divided by the transmission pitch (N/A).
    pub current_to_force_gain: f64,
    /// Viscous friction along the screw (N·s/m).
    pub viscous_coeff: f64,
    /// Kinetic (Coulomb) friction along the screw (N).
    pub coulomb_force: f64,
    /// Static breakaway friction (N), `>= coulomb_force`.
    pub breakaway_force: f64,
    /// Stribeck decay velocity (m/s).
    pub stribeck_velocity: f64,
    /// Total transmission dead band (m).
    pub backlash_gap: f64,
    /// Joint viscous damping (N·m·s/rad).
    pub joint_damping: f64,
    /// Gravitational acceleration (m/s²).
    pub gravity: f64,
    /// Low-level integration step (s).
    pub micro_dt: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            pendulum_mass: 22.6,
            arm_length: 0.3,
            lever_radius: 0.1,
            spring_stiffness: 3.0e4,
            motor_reflected_mass: 10.0,
            current_to_force_gain: 300.0,
            viscous_coeff: 3000.0,
            coulomb_force: 15.0,
            breakaway_force: 25.0,
            stribeck_velocity: 2.0e-3,
            backlash_gap: 5.0e-5,
            joint_damping: 2.0,
            gravity: 9.81,
            micro_dt: 0.0025,
        }
    }
}

impl PlantParams {
    /// Pendulum inertia about the joint, `m·L²`.
    pub fn joint_inertia(&self) -> f64 {
        self.pendulum_mass * self.arm_length * self.arm_length
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            ("pendulum_mass", self.pendulum_mass),
            ("arm_length", self.arm_length),
            ("lever_radius", self.lever_radius),
            ("spring_stiffness", self.spring_stiffness),
            ("motor_reflected_mass", self.motor_reflected_mass),
            ("current_to_force_gain", self.current_to_force_gain),
            ("stribeck_velocity", self.stribeck_velocity),
            ("backlash_gap", self.backlash_gap),
            ("gravity", self.gravity),
            ("micro_dt", self.micro_dt),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PlantError::InvalidParam { field, reason: format!("must be > 0, got {v}") });
            }
        }
        let non_negative = [
            ("viscous_coeff", self.viscous_coeff),
            ("coulomb_force", self.coulomb_force),
            ("joint_damping", self.joint_damping),
        ];
        for (field, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(PlantError::InvalidParam { field, reason: format!("must be >= 0, got {v}") });
            }
        }
        if !(self.breakaway_force >= self.coulomb_force) {
            return Err(PlantError::InvalidParam {
                field: "breakaway_force",
                reason: format!("must be >= coulomb_force ({}), got {}", self.coulomb_force, self.breakaway_force),
            });
        }
        let bound = 4.0 / (self.micro_dt * self.micro_dt);
        if self.spring_stiffness >= self.motor_reflected_mass * bound {
            return Err(PlantError::InvalidParam {
                field: "spring_stiffness",
                reason: "violates the explicit stability bound k < m_m·(2/dt)²".into(),
            });
        }
        if self.spring_stiffness * self.lever_radius.powi(2) >= self.joint_inertia() * bound {
            return Err(PlantError::InvalidParam {
                field: "spring_stiffness",
                reason: "violates the explicit stability bound k·r² < I·(2/dt)²".into(),
            });
        }
        Ok(())
    }
}

/// Offset jumps arriving as a compound Poisson process.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlipProcess {
    /// Mean event count per minute of simulated time.
    pub rate: f64,
    /// RMS size of one jump (rad for the encoder, m for the gear train).
    pub magnitude_rms: f64,
}

impl SlipProcess {
    fn active(&self) -> bool {
        self.rate > 0.0 && self.magnitude_rms > 0.0
    }

    fn sample(&self, dt: f64, rng: &mut ChaCha8Rng) -> Option<f64> {
        if !self.active() {
            return None;
        }
        let p = self.rate / 60.0 * dt;
        if rng.random::<f64>() < p {
            let jump = Normal::new(0.0, self.magnitude_rms).expect("validated magnitude");
            Some(jump.sample(rng))
        } else {
            None
        }
    }
}

/// Switches and magnitudes for the hardware nonlinearities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearityConfig {
    pub stiction_enabled: bool,
    pub backlash_enabled: bool,
    /// Vibration-induced joint encoder slip (measurement only).
    pub encoder_slip: SlipProcess,
    /// Gear-train slip acting on the nut position.
    pub gear_slip: SlipProcess,
    pub force_noise_rms: f64,
    pub angle_noise_rms: f64,
}

impl Default for NonlinearityConfig {
    fn default() -> Self {
        Self {
            stiction_enabled: true,
            backlash_enabled: true,
            encoder_slip: SlipProcess::default(),
            gear_slip: SlipProcess::default(),
            force_noise_rms: 1.0,
            angle_noise_rms: 1.0e-5,
        }
    }
}

impl NonlinearityConfig {
    /// Everything off: linear, noise-free plant.
    pub fn ideal() -> Self {
        Self {
            stiction_enabled: false,
            backlash_enabled: false,
            encoder_slip: SlipProcess::default(),
            gear_slip: SlipProcess::default(),
            force_noise_rms: 0.0,
            angle_noise_rms: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let checks = [
            ("encoder_slip.rate", self.encoder_slip.rate),
            ("encoder_slip.magnitude_rms", self.encoder_slip.magnitude_rms),
            ("gear_slip.rate", self.gear_slip.rate),
            ("gear_slip.magnitude_rms", self.gear_slip.magnitude_rms),
            ("force_noise_rms", self.force_noise_rms),
            ("angle_noise_rms", self.angle_noise_rms),
        ];
        for (field, v) in checks {
            if !(v.is_finite() && v >= 0.0) {
                return Err(PlantError::InvalidParam { field, reason: format!("must be >= 0, got {v}") });
            }
        }
        Ok(())
    }
}

/// Ground-truth mechanical state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    /// True joint angle (rad).
    pub q: f64,
    pub q_dot: f64,
    /// Nut position along the screw (m).
    pub motor_pos: f64,
    pub motor_vel: f64,
    /// Nut position relative to the spring end, within `±gap/2` (m).
    pub backlash_offset: f64,
    /// Accumulated difference between measured and true joint angle (rad).
    pub encoder_offset: f64,
    pub sim_time: f64,
}

impl PlantState {
    /// At rest at `q` with the spring relaxed and the dead band centred.
    pub fn at_rest(q: f64, params: &PlantParams) -> Self {
        Self { q, motor_pos: params.lever_radius * q, ..Self::default() }
    }

    /// The same state mirrored through the origin.
    pub fn mirrored(&self) -> Self {
        Self {
            q: -self.q,
            q_dot: -self.q_dot,
            motor_pos: -self.motor_pos,
            motor_vel: -self.motor_vel,
            backlash_offset: -self.backlash_offset,
            encoder_offset: -self.encoder_offset,
            sim_time: self.sim_time,
        }
    }
}

/// What the low-level controller reads from the hardware.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RawSensors {
    pub q_meas: f64,
    pub f_meas: f64,
}

/// Spring force seen by the inline sensor, before noise.
pub fn spring_force(state: &PlantState, params: &PlantParams) -> f64 {
    params.spring_stiffness * (state.motor_pos - state.backlash_offset - params.lever_radius * state.q)
}

pub fn gravity_torque(q: f64, params: &PlantParams) -> f64 {
    params.pendulum_mass * params.gravity * params.arm_length * q.sin()
}

/// Friction on the nut given its velocity and the net non-friction force.
///
/// At rest (`|v| < STICK_VELOCITY`) with stiction enabled, anything below the
/// breakaway force is cancelled exactly. Otherwise a Stribeck curve plus
/// viscous drag opposes motion. With stiction disabled only viscous drag acts.
pub fn friction_force(motor_vel: f64, applied: f64, params: &PlantParams, stiction_enabled: bool) -> f64 {
    if !stiction_enabled {
        return -params.viscous_coeff * motor_vel;
    }
    if motor_vel.abs() < STICK_VELOCITY {
        if applied.abs() < params.breakaway_force {
            return -applied;
        }
        return -params.breakaway_force * applied.signum();
    }
    let ratio = motor_vel / params.stribeck_velocity;
    let level = params.coulomb_force + (params.breakaway_force - params.coulomb_force) * (-ratio * ratio).exp();
    -level * motor_vel.signum() - params.viscous_coeff * motor_vel
}

/// Mechanical energy: kinetic + spring + gravity potential (zero at q = 0).
pub fn mechanical_energy(state: &PlantState, params: &PlantParams) -> f64 {
    let f = spring_force(state, params);
    0.5 * params.motor_reflected_mass * state.motor_vel.powi(2)
        + 0.5 * params.joint_inertia() * state.q_dot.powi(2)
        + 0.5 * f * f / params.spring_stiffness
        + params.pendulum_mass * params.gravity * params.arm_length * (1.0 - state.q.cos())
}

/// Spring reaction felt by the nut. Zero while it floats inside the dead band.
fn motor_side_force(state: &PlantState, spring: f64, params: &PlantParams, cfg: &NonlinearityConfig) -> f64 {
    if !cfg.backlash_enabled {
        return spring;
    }
    let half = 0.5 * params.backlash_gap;
    let tol = 1e-12 * half.max(1e-12);
    let pushing = state.backlash_offset >= half - tol && spring > 0.0;
    let pulling = state.backlash_offset <= -half + tol && spring < 0.0;
    if pushing || pulling {
        spring
    } else {
        0.0
    }
}

/// Advances the plant by one `micro_dt`.
pub fn step(
    state: &PlantState,
    current: f64,
    cfg: &NonlinearityConfig,
    params: &PlantParams,
    rng: &mut ChaCha8Rng,
) -> Result<PlantState, PlantError> {
    if !current.is_finite() {
        return Err(PlantError::NonFinite("current"));
    }
    let fields = [state.q, state.q_dot, state.motor_pos, state.motor_vel, state.backlash_offset];
    if fields.iter().any(|v| !v.is_finite()) {
        return Err(PlantError::NonFinite("state"));
    }
    let dt = params.micro_dt;
    let spring = spring_force(state, params);

    // Nut.
    let applied = params.current_to_force_gain * current - motor_side_force(state, spring, params, cfg);
    let friction = friction_force(state.motor_vel, applied, params, cfg.stiction_enabled);
    let mut motor_vel = state.motor_vel + dt * (applied + friction) / params.motor_reflected_mass;
    if cfg.stiction_enabled {
        let was_still = state.motor_vel.abs() < STICK_VELOCITY;
        let reversed = state.motor_vel * motor_vel < 0.0;
        // Dry friction cannot reverse the motion within a step; it stops it.
        if (was_still && applied.abs() < params.breakaway_force) || reversed {
            motor_vel = 0.0;
        }
    }
    let mut motor_pos = state.motor_pos + dt * motor_vel;

    // Pendulum.
    let torque = params.lever_radius * spring - gravity_torque(state.q, params) - params.joint_damping * state.q_dot;
    let q_dot = state.q_dot + dt * torque / params.joint_inertia();
    let q = state.q + dt * q_dot;

    if let Some(jump) = cfg.gear_slip.sample(dt, rng) {
        motor_pos += jump;
    }
    let backlash_offset = if cfg.backlash_enabled {
        let half = 0.5 * params.backlash_gap;
        (state.backlash_offset + (motor_pos - state.motor_pos)).clamp(-half, half)
    } else {
        0.0
    };
    let mut encoder_offset = state.encoder_offset;
    if let Some(jump) = cfg.encoder_slip.sample(dt, rng) {
        encoder_offset += jump;
    }

    Ok(PlantState {
        q,
        q_dot,
        motor_pos,
        motor_vel,
        backlash_offset,
        encoder_offset,
        sim_time: state.sim_time + dt,
    })
}

/// Sensor readings: encoder (with slip offset and noise) and inline force sensor.
pub fn measure(
    state: &PlantState,
    cfg: &NonlinearityConfig,
    params: &PlantParams,
    rng: &mut ChaCha8Rng,
) -> RawSensors {
    let mut q_meas = state.q + state.encoder_offset;
    if cfg.angle_noise_rms > 0.0 {
        q_meas += Normal::new(0.0, cfg.angle_noise_rms).expect("validated").sample(rng);
    }
    let mut f_meas = spring_force(state, params);
    if cfg.force_noise_rms > 0.0 {
        f_meas += Normal::new(0.0, cfg.force_noise_rms).expect("validated").sample(rng);
    }
    RawSensors { q_meas, f_meas }
}
