//! The simulated test stand: plant + transport + safety supervisor, driven one
//! policy interval at a time.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::plant::{self, NonlinearityConfig, PlantError, PlantParams, PlantState, RawSensors};
use crate::safety::{self, FaultRecord, ResetOutcome, SafetyConfig, SafetyMode, SafetyState};
use crate::transport::{LinkCounters, LinkState, TransportConfig};

/// Result of one policy interval on a rig.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub sensors: RawSensors,
    /// True joint angle at the end of the interval.
    pub q_true: f64,
    /// Current applied on the last low-level tick of the interval.
    pub applied_current: f64,
    pub mode: SafetyMode,
    pub fault: Option<FaultRecord>,
}

/// Anything the environment can poll: the simulated stand, or a test double.
pub trait Rig {
    /// Puts the mechanism back at its start pose and returns the first reading.
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> RawSensors;
    /// Sends `proposed` and runs one policy interval.
    fn advance(&mut self, proposed: f64, rng: &mut ChaCha8Rng) -> Result<StepOutcome, PlantError>;
    /// Packet accounting since the last reset.
    fn link_counters(&self) -> LinkCounters {
        LinkCounters::default()
    }
    /// Current joint encoder offset, if the rig has one.
    fn encoder_offset(&self) -> f64 {
        0.0
    }
}

/// Start pose for each episode.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialCondition {
    /// Nominal start angle; the pendulum rests there with the spring relaxed.
    pub q0: f64,
    /// Half-width of a uniform jitter added to `q0` on every reset (rad).
    pub jitter_rad: f64,
}

#[derive(Debug, Clone)]
pub struct SimRig {
    pub params: PlantParams,
    pub nonlin: NonlinearityConfig,
    pub transport: TransportConfig,
    pub safety_cfg: SafetyConfig,
    pub initial: InitialCondition,
    pub state: PlantState,
    pub link: LinkState,
    pub safety: SafetyState,
    ticks_per_policy: u32,
}

impl SimRig {
    /// Assumes the configs were validated; panics on a non-integral rate ratio.
    pub fn new(
        params: PlantParams,
        nonlin: NonlinearityConfig,
        transport: TransportConfig,
        safety_cfg: SafetyConfig,
        initial: InitialCondition,
    ) -> Self {
        let ticks_per_policy = transport.ticks_per_policy().expect("validated transport config");
        let state = PlantState::at_rest(initial.q0, &params);
        Self {
            params,
            nonlin,
            transport,
            safety_cfg,
            initial,
            state,
            link: LinkState::new(RawSensors::default()),
            safety: SafetyState::default(),
            ticks_per_policy,
        }
    }

    /// Shipped defaults everywhere.
    pub fn paperlike_default() -> Self {
        Self::new(
            PlantParams::default(),
            NonlinearityConfig::default(),
            TransportConfig::default(),
            SafetyConfig::default(),
            InitialCondition::default(),
        )
    }

    pub fn ticks_per_policy(&self) -> u32 {
        self.ticks_per_policy
    }

    pub fn remote_shutoff(&mut self) {
        self.safety = safety::remote_shutoff(&self.safety, self.state.sim_time);
    }

    /// Operator reset after an e-stop, optionally recalibrating the encoder.
    pub fn manual_reset(&mut self, recalibrate_encoder: bool) -> ResetOutcome {
        let outcome = safety::manual_reset(&self.safety, recalibrate_encoder);
        self.safety = outcome.state;
        if outcome.recalibrate_encoder {
            self.state.encoder_offset = 0.0;
        }
        outcome
    }

    pub fn set_encoder_offset(&mut self, offset: f64) {
        self.state.encoder_offset = offset;
    }
}

impl Rig for SimRig {
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> RawSensors {
        let mut q0 = self.initial.q0;
        if self.initial.jitter_rad > 0.0 {
            q0 += rng.random_range(-self.initial.jitter_rad..=self.initial.jitter_rad);
        }
        let encoder_offset = self.state.encoder_offset;
        self.state = PlantState { encoder_offset, ..PlantState::at_rest(q0, &self.params) };
        let first = plant::measure(&self.state, &self.nonlin, &self.params, rng);
        self.link = LinkState::new(first);
        first
    }

    fn advance(&mut self, proposed: f64, rng: &mut ChaCha8Rng) -> Result<StepOutcome, PlantError> {
        self.link.send_action(proposed, &self.transport, rng);
        for _ in 0..self.ticks_per_policy {
            self.link.tick_lowlevel(
                &mut self.state,
                &self.params,
                &self.nonlin,
                &mut self.safety,
                &self.safety_cfg,
                &self.transport,
                rng,
            )?;
        }
        let sensors = self.link.receive(&self.transport, rng);
        Ok(StepOutcome {
            sensors,
            q_true: self.state.q,
            applied_current: self.link.last_applied_current,
            mode: self.safety.mode,
            fault: self.safety.latched_fault,
        })
    }

    fn link_counters(&self) -> LinkCounters {
        self.link.counters
    }

    fn encoder_offset(&self) -> f64 {
        self.state.encoder_offset
    }
}
