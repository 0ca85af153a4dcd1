//! Experiment configuration: one TOML file layered over a named preset.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::env::EpisodeConfig;
use crate::nn::NetConfig;
use crate::pid::PidConfig;
use crate::plant::{NonlinearityConfig, PlantParams};
use crate::ppo::{LrSchedule, PpoConfig};
use crate::rig::{InitialCondition, SimRig};
use crate::safety::SafetyConfig;
use crate::transport::TransportConfig;

/// Episode budget the paper-scale schedule was laid out for.
pub const PAPER_SCALE_EPISODES: usize = 1250;
pub const DESK_EPISODES: usize = 300;
pub const DESK_EPISODE_S: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 20 s episodes, 300 episodes, schedule compressed to match.
    #[default]
    Desk,
    /// 60 s episodes, 1250 episodes, the original schedule.
    PaperScale,
}

impl FromStr for Preset {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper-scale" => Ok(Self::PaperScale),
            _ => Err(HarnessError::Config(format!("unknown preset `{s}` (desk | paper-scale)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Desk => "desk",
            Self::PaperScale => "paper-scale",
        })
    }
}

/// Evaluation and pruning cadence during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSchedule {
    /// Deterministic evaluation every this many episodes (0 disables).
    pub every_episodes: usize,
    /// Frequency (Hz) and amplitude (N) of the evaluation sinusoid.
    pub freq: f64,
    pub amplitude: f64,
    /// Episodes inspected by the divergence check (0 disables).
    pub divergence_window: usize,
    /// Stop training when the divergence check fires.
    pub prune_on_divergence: bool,
    /// Write a checkpoint every this many episodes (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for EvalSchedule {
    fn default() -> Self {
        Self {
            every_episodes: 20,
            freq: 0.1,
            amplitude: 50.0,
            divergence_window: 90,
            prune_on_divergence: false,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub seed: u64,
    pub preset: Preset,
    pub episodes: usize,
    pub output_dir: PathBuf,
    pub plant: PlantParams,
    pub nonlinearity: NonlinearityConfig,
    pub transport: TransportConfig,
    pub safety: SafetyConfig,
    pub initial: InitialCondition,
    pub env: EpisodeConfig,
    pub ppo: PpoConfig,
    pub pid: PidConfig,
    pub net: NetConfig,
    pub eval: EvalSchedule,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        let (episodes, duration_s, schedule) = match preset {
            Preset::Desk => (
                DESK_EPISODES,
                DESK_EPISODE_S,
                LrSchedule::paper_scale().scaled(DESK_EPISODES as f64 / PAPER_SCALE_EPISODES as f64),
            ),
            Preset::PaperScale => (PAPER_SCALE_EPISODES, 60.0, LrSchedule::paper_scale()),
        };
        Self {
            run_id: format!("{preset}-{seed}"),
            seed,
            preset,
            episodes,
            output_dir: PathBuf::from("runs"),
            plant: PlantParams::default(),
            nonlinearity: NonlinearityConfig::default(),
            transport: TransportConfig::default(),
            safety: SafetyConfig::default(),
            initial: InitialCondition::default(),
            env: EpisodeConfig { duration_s, ..EpisodeConfig::default() },
            ppo: PpoConfig { lr_schedule: schedule, ..PpoConfig::default() },
            pid: PidConfig::default(),
            net: NetConfig::default(),
            eval: EvalSchedule::default(),
        }
    }

    /// Parses a config file's text. `preset` and `seed` may come from the
    /// caller when the file omits them; the file wins otherwise.
    pub fn from_toml_str(text: &str, preset: Option<Preset>, seed: Option<u64>) -> Result<Self, HarnessError> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        Self::layered(user, preset, seed)
    }

    pub fn load(path: &Path, preset: Option<Preset>, seed: Option<u64>) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text, preset, seed)
    }

    /// Preset defaults, overlaid by `user`, then validated. The seed is mandatory.
    pub fn layered(mut user: toml::Table, preset: Option<Preset>, seed: Option<u64>) -> Result<Self, HarnessError> {
        if let Some(s) = seed {
            let s = i64::try_from(s).map_err(|_| HarnessError::Config("seed must fit in i64".into()))?;
            user.insert("seed".into(), toml::Value::Integer(s));
        }
        let seed = match user.get("seed") {
            Some(toml::Value::Integer(s)) if *s >= 0 => *s as u64,
            Some(_) => return Err(HarnessError::Config("seed must be a non-negative integer".into())),
            None => return Err(HarnessError::Config("seed is mandatory (config `seed = ...` or --seed)".into())),
        };
        if let Some(p) = preset {
            user.insert("preset".into(), toml::Value::String(p.to_string()));
        }
        let preset = match user.get("preset") {
            Some(toml::Value::String(p)) => p.parse()?,
            Some(_) => return Err(HarnessError::Config("preset must be a string".into())),
            None => Preset::default(),
        };
        let mut base = toml::Table::try_from(Self::preset(preset, seed)).map_err(|e| HarnessError::Config(e.to_string()))?;
        merge(&mut base, user);
        let cfg: Self = toml::Value::Table(base).try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let cfg = |e: &dyn fmt::Display| HarnessError::Config(e.to_string());
        self.plant.validate().map_err(|e| cfg(&e))?;
        self.nonlinearity.validate().map_err(|e| cfg(&e))?;
        self.transport.validate().map_err(|e| cfg(&e))?;
        self.safety.validate().map_err(|e| cfg(&e))?;
        self.ppo.validate().map_err(|e| cfg(&e))?;
        self.pid.validate().map_err(|e| cfg(&e))?;
        self.env.steps().map_err(|e| cfg(&e))?;
        if self.env.policy_rate != self.transport.policy_rate {
            return Err(HarnessError::Config(format!(
                "env.policy_rate ({}) differs from transport.policy_rate ({})",
                self.env.policy_rate, self.transport.policy_rate
            )));
        }
        let lowlevel_dt = 1.0 / self.transport.lowlevel_rate;
        if (lowlevel_dt - self.plant.micro_dt).abs() > 1e-12 {
            return Err(HarnessError::Config(format!(
                "plant.micro_dt ({}) must equal 1 / transport.lowlevel_rate ({lowlevel_dt})",
                self.plant.micro_dt
            )));
        }
        if self.net.policy_hidden.is_empty() || self.net.value_hidden.is_empty() {
            return Err(HarnessError::Config("networks need at least one hidden layer".into()));
        }
        if self.net.input_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(HarnessError::Config("net.input_scale entries must be > 0".into()));
        }
        if !(self.initial.q0.abs() < self.safety.learn_bound_rad && self.initial.jitter_rad >= 0.0) {
            return Err(HarnessError::Config("initial pose must lie inside the learning boundary".into()));
        }
        if self.run_id.is_empty() {
            return Err(HarnessError::Config("run_id must not be empty".into()));
        }
        Ok(())
    }

    pub fn rig(&self) -> SimRig {
        SimRig::new(
            self.plant.clone(),
            self.nonlinearity.clone(),
            self.transport.clone(),
            self.safety.clone(),
            self.initial,
        )
    }

    /// Where this run writes its artifacts.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }
}

/// Recursive table overlay: scalars and arrays replace, tables merge.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
