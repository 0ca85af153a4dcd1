//! Dual-rate link between the policy (high-level, slow) and the low-level
//! controller (fast), run on one simulated clock.
//!
//! Time is counted in low-level ticks. A command sent at tick `T` becomes due
//! at `T + action_latency_ticks`; a measurement taken during tick `n` becomes
//! visible at the boundary `n + 1 + obs_latency_ticks`. Dropped commands leave
//! the held command in place. Dropped observations repeat the last delivered one.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{self, NonlinearityConfig, PlantError, PlantParams, PlantState, RawSensors};
use crate::safety::{self, SafetyConfig, SafetyState};

#[derive(Debug, Error, PartialEq)]
pub enum TransportConfigError {
    #[error("lowlevel_rate ({lowlevel}) must be a positive integer multiple of policy_rate ({policy})")]
    Rates { policy: f64, lowlevel: f64 },
    #[error("{0} must lie in [0, 1]")]
    Probability(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub policy_rate: f64,
    pub lowlevel_rate: f64,
    pub action_latency_ticks: u32,
    pub obs_latency_ticks: u32,
    pub action_drop_prob: f64,
    pub obs_drop_prob: f64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            policy_rate: 100.0,
            lowlevel_rate: 400.0,
            action_latency_ticks: 0,
            obs_latency_ticks: 0,
            action_drop_prob: 0.0,
            obs_drop_prob: 0.0,
        }
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<(), TransportConfigError> {
        self.ticks_per_policy()?;
        for (name, p) in [("action_drop_prob", self.action_drop_prob), ("obs_drop_prob", self.obs_drop_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TransportConfigError::Probability(name));
            }
        }
        Ok(())
    }

    /// Low-level ticks per policy interval.
    pub fn ticks_per_policy(&self) -> Result<u32, TransportConfigError> {
        let err = TransportConfigError::Rates { policy: self.policy_rate, lowlevel: self.lowlevel_rate };
        if !(self.policy_rate > 0.0 && self.lowlevel_rate > 0.0) {
            return Err(err);
        }
        let ratio = self.lowlevel_rate / self.policy_rate;
        let rounded = ratio.round();
        if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 {
            return Err(err);
        }
        Ok(rounded as u32)
    }
}

/// Packet accounting for one episode (or any span between resets).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LinkCounters {
    pub actions_sent: u64,
    pub actions_dropped: u64,
    pub obs_polled: u64,
    pub obs_dropped: u64,
}

/// What one low-level tick did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickReport {
    pub applied_current: f64,
    pub safety: SafetyState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    /// Last command that reached the low-level side (pre-safety).
    pub held_current: f64,
    /// Last current actually applied to the motor (post-safety).
    pub last_applied_current: f64,
    pub last_delivered_obs: RawSensors,
    /// Most recent low-level measurement, what the supervisor acts on.
    pub last_measured: RawSensors,
    pub tick: u64,
    pub counters: LinkCounters,
    action_queue: VecDeque<(u64, f64)>,
    obs_queue: VecDeque<(u64, RawSensors)>,
}

impl LinkState {
    /// Fresh link whose first delivered observation is `initial`.
    pub fn new(initial: RawSensors) -> Self {
        Self {
            held_current: 0.0,
            last_applied_current: 0.0,
            last_delivered_obs: initial,
            last_measured: initial,
            tick: 0,
            counters: LinkCounters::default(),
            action_queue: VecDeque::new(),
            obs_queue: VecDeque::new(),
        }
    }

    pub fn action_queue_len(&self) -> usize {
        self.action_queue.len()
    }

    pub fn obs_queue_len(&self) -> usize {
        self.obs_queue.len()
    }

    /// High-level side: queue a command for delivery.
    pub fn send_action(&mut self, current: f64, cfg: &TransportConfig, rng: &mut ChaCha8Rng) {
        self.counters.actions_sent += 1;
        if cfg.action_drop_prob > 0.0 && rng.random::<f64>() < cfg.action_drop_prob {
            self.counters.actions_dropped += 1;
            return;
        }
        self.action_queue.push_back((self.tick + u64::from(cfg.action_latency_ticks), current));
    }

    /// High-level side: newest observation that has arrived.
    pub fn receive(&mut self, cfg: &TransportConfig, rng: &mut ChaCha8Rng) -> RawSensors {
        self.counters.obs_polled += 1;
        let mut newest = None;
        while let Some(&(due, obs)) = self.obs_queue.front() {
            if due > self.tick {
                break;
            }
            newest = Some(obs);
            self.obs_queue.pop_front();
        }
        let dropped = cfg.obs_drop_prob > 0.0 && rng.random::<f64>() < cfg.obs_drop_prob;
        if dropped {
            self.counters.obs_dropped += 1;
        } else if let Some(obs) = newest {
            self.last_delivered_obs = obs;
        }
        self.last_delivered_obs
    }

    /// One policy-rate exchange: send `current`, return the latest delivered sensors.
    pub fn exchange(&mut self, current: f64, cfg: &TransportConfig, rng: &mut ChaCha8Rng) -> RawSensors {
        self.send_action(current, cfg, rng);
        self.receive(cfg, rng)
    }

    /// Low-level side: one `micro_dt` of supervisor + plant.
    #[allow(clippy::too_many_arguments)]
    pub fn tick_lowlevel(
        &mut self,
        state: &mut PlantState,
        params: &PlantParams,
        nonlin: &NonlinearityConfig,
        safety_state: &mut SafetyState,
        safety_cfg: &SafetyConfig,
        cfg: &TransportConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<TickReport, PlantError> {
        while let Some(&(due, current)) = self.action_queue.front() {
            if due > self.tick {
                break;
            }
            self.held_current = current;
            self.action_queue.pop_front();
        }
        let (applied, next_safety) = safety::supervise(
            self.last_measured.q_meas,
            self.last_measured.f_meas,
            self.held_current,
            state.sim_time,
            safety_state,
            safety_cfg,
        );
        *safety_state = next_safety;
        *state = plant::step(state, applied, nonlin, params, rng)?;
        self.last_applied_current = applied;
        self.last_measured = plant::measure(state, nonlin, params, rng);
        self.tick += 1;
        self.obs_queue.push_back((self.tick + u64::from(cfg.obs_latency_ticks), self.last_measured));
        Ok(TickReport { applied_current: applied, safety: next_safety })
    }
}
