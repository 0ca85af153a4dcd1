//! Force-tracking MDP: trajectories, observations, reward, and the episode loop.
//!
//! Control is inverted: the environment owns the clock and polls a [`Policy`]
//! once per policy interval. Step `k` sends the action chosen from observation
//! `k`, runs one interval on the rig, then scores the reading at `t_{k+1}`.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::PlantError;
use crate::rig::Rig;
use crate::safety::{FaultRecord, SafetyMode};
use crate::transport::LinkCounters;

/// Joint-angle saturation applied to the observation (rad).
pub const OBS_ANGLE_LIMIT: f64 = 0.25;
/// Amplitude of every training trajectory (N).
pub const TRAINING_AMPLITUDE: f64 = 50.0;
/// Training frequency interval (Hz).
pub const TRAINING_FREQ_RANGE: (f64, f64) = (0.05, 0.35);

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("time {t} s outside trajectory domain [0, {max}]")]
    TimeOutOfRange { t: f64, max: f64 },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid episode config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("episode log i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("episode log format: {0}")]
    Format(String),
}

/// Policy input: `(q, q̇, q̈, F, F_des)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub q: f64,
    pub q_dot: f64,
    pub q_ddot: f64,
    pub f: f64,
    pub f_des: f64,
}

impl Observation {
    pub const DIM: usize = 5;

    pub fn to_array(&self) -> [f64; 5] {
        [self.q, self.q_dot, self.q_ddot, self.f, self.f_des]
    }
}

/// Commanded current (A). Saturation happens downstream in the supervisor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub current: f64,
}

/// Desired-force generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectorySpec {
    Sinusoid { amplitude: f64, freq: f64 },
    /// Linear chirp sweeping `f0 → f1` over `duration` seconds.
    Chirp { amplitude: f64, f0: f64, f1: f64, duration: f64 },
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        match *self {
            Self::Sinusoid { amplitude, freq } => {
                if !(amplitude > 0.0 && freq > 0.0) {
                    return Err(EnvError::InvalidTrajectory(format!("sinusoid needs amplitude, freq > 0: {self}")));
                }
            }
            Self::Chirp { amplitude, f0, f1, duration } => {
                if !(amplitude > 0.0 && f0 > 0.0 && f0 <= f1 && duration > 0.0) {
                    return Err(EnvError::InvalidTrajectory(format!(
                        "chirp needs amplitude > 0, 0 < f0 <= f1, duration > 0: {self}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn amplitude(&self) -> f64 {
        match *self {
            Self::Sinusoid { amplitude, .. } | Self::Chirp { amplitude, .. } => amplitude,
        }
    }

    /// Instantaneous frequency from the analytic phase, `dφ/dt / 2π` (Hz).
    pub fn instantaneous_frequency(&self, t: f64) -> f64 {
        match *self {
            Self::Sinusoid { freq, .. } => freq,
            Self::Chirp { f0, f1, duration, .. } => f0 + (f1 - f0) * t / duration,
        }
    }

    /// The 50 N, 0.05 → 0.35 Hz evaluation sweep over `duration` seconds.
    pub fn evaluation_chirp(duration: f64) -> Self {
        Self::Chirp { amplitude: TRAINING_AMPLITUDE, f0: 0.05, f1: 0.35, duration }
    }
}

impl fmt::Display for TrajectorySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Sinusoid { amplitude, freq } => write!(f, "sine:{freq},{amplitude}"),
            Self::Chirp { amplitude, f0, f1, duration } => write!(f, "chirp:{f0},{f1},{duration},{amplitude}"),
        }
    }
}

impl FromStr for TrajectorySpec {
    type Err = EnvError;

    /// `sine:f,A` or `chirp:f0,f1,T,A`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EnvError::InvalidTrajectory(format!("expected sine:f,A or chirp:f0,f1,T,A, got `{s}`"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let nums = rest
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad())?;
        let spec = match (kind.trim(), nums.as_slice()) {
            ("sine", &[freq, amplitude]) => Self::Sinusoid { amplitude, freq },
            ("chirp", &[f0, f1, duration, amplitude]) => Self::Chirp { amplitude, f0, f1, duration },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn desired_force(spec: &TrajectorySpec, t: f64) -> Result<f64, EnvError> {
    use std::f64::consts::TAU;
    match *spec {
        TrajectorySpec::Sinusoid { amplitude, freq } => {
            if !(t >= 0.0) {
                return Err(EnvError::TimeOutOfRange { t, max: f64::INFINITY });
            }
            Ok(amplitude * (TAU * freq * t).sin())
        }
        TrajectorySpec::Chirp { amplitude, f0, f1, duration } => {
            if !(0.0..=duration).contains(&t) {
                return Err(EnvError::TimeOutOfRange { t, max: duration });
            }
            let phase = f0 * t + (f1 - f0) * t * t / (2.0 * duration);
            Ok(amplitude * (TAU * phase).sin())
        }
    }
}

/// Forward-Euler derivatives of the measured angle, then the angle clamp.
///
/// Derivatives use the unclamped angles.
pub fn build_observation(
    q_meas_now: f64,
    q_meas_prev: f64,
    q_dot_prev: f64,
    f_meas: f64,
    f_des: f64,
    dt: f64,
) -> Observation {
    let q_dot = (q_meas_now - q_meas_prev) / dt;
    let q_ddot = (q_dot - q_dot_prev) / dt;
    Observation {
        q: q_meas_now.clamp(-OBS_ANGLE_LIMIT, OBS_ANGLE_LIMIT),
        q_dot,
        q_ddot,
        f: f_meas,
        f_des,
    }
}

/// `−(F_des − F)² / D`.
pub fn reward(f_des: f64, f: f64, divisor: f64) -> f64 {
    let e = f_des - f;
    -(e * e) / divisor
}

/// Training target: 50 N sinusoid, frequency uniform on [0.05, 0.35] Hz.
pub fn sample_training_spec(rng: &mut ChaCha8Rng) -> TrajectorySpec {
    let (lo, hi) = TRAINING_FREQ_RANGE;
    TrajectorySpec::Sinusoid { amplitude: TRAINING_AMPLITUDE, freq: rng.random_range(lo..=hi) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub duration_s: f64,
    pub policy_rate: f64,
    pub reward_divisor: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { duration_s: 60.0, policy_rate: 100.0, reward_divisor: 1e6 }
    }
}

impl EpisodeConfig {
    pub fn steps(&self) -> Result<usize, EnvError> {
        let n = self.duration_s * self.policy_rate;
        if !(self.duration_s > 0.0 && self.policy_rate > 0.0 && (n - n.round()).abs() < 1e-6) {
            return Err(EnvError::InvalidConfig(format!(
                "duration_s × policy_rate must be a positive integer (got {n})"
            )));
        }
        if !(self.reward_divisor > 0.0) {
            return Err(EnvError::InvalidConfig("reward_divisor must be > 0".into()));
        }
        Ok(n.round() as usize)
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.policy_rate
    }
}

/// Anything that maps an observation to a commanded current.
pub trait Policy {
    fn act(&mut self, obs: &Observation) -> f64;
}

impl<F: FnMut(&Observation) -> f64> Policy for F {
    fn act(&mut self, obs: &Observation) -> f64 {
        self(obs)
    }
}

/// One policy interval, scored at its end (time `t`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub f_des: f64,
    pub f: f64,
    pub q_true: f64,
    pub q_meas: f64,
    pub q_dot: f64,
    pub q_ddot: f64,
    pub action_proposed: f64,
    pub action_applied: f64,
    pub reward: f64,
    pub safety_mode: SafetyMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub steps: usize,
    pub total_reward: f64,
    pub mae: f64,
    pub peak_force: f64,
    pub truncated: bool,
    pub fault: Option<FaultRecord>,
    pub link: LinkCounters,
    pub encoder_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub spec: TrajectorySpec,
    pub config: EpisodeConfig,
    pub steps: Vec<StepRecord>,
    /// Observation after the last step, for bootstrapping.
    pub final_observation: Observation,
    pub summary: EpisodeSummary,
}

/// Line-delimited log: one header, one record per step, one summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogLine {
    Header { spec: TrajectorySpec, config: EpisodeConfig, final_observation: Observation },
    Step(StepRecord),
    Summary(EpisodeSummary),
}

impl EpisodeLog {
    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.reward)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), EnvError> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = LogLine::Header {
            spec: self.spec,
            config: self.config.clone(),
            final_observation: self.final_observation,
        };
        let to_line = |l: &LogLine| serde_json::to_string(l).map_err(|e| EnvError::Format(e.to_string()));
        writeln!(w, "{}", to_line(&header)?)?;
        for s in &self.steps {
            writeln!(w, "{}", to_line(&LogLine::Step(*s))?)?;
        }
        writeln!(w, "{}", to_line(&LogLine::Summary(self.summary.clone()))?)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, EnvError> {
        let reader = BufReader::new(File::open(path)?);
        let mut header = None;
        let mut steps = Vec::new();
        let mut summary = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LogLine =
                serde_json::from_str(&line).map_err(|e| EnvError::Format(format!("line {}: {e}", i + 1)))?;
            match parsed {
                LogLine::Header { spec, config, final_observation } => header = Some((spec, config, final_observation)),
                LogLine::Step(s) => steps.push(s),
                LogLine::Summary(s) => summary = Some(s),
            }
        }
        let (spec, config, final_observation) = header.ok_or_else(|| EnvError::Format("missing header".into()))?;
        let summary = summary.ok_or_else(|| EnvError::Format("missing summary".into()))?;
        Ok(Self { spec, config, steps, final_observation, summary })
    }
}

/// Runs one episode: `duration × rate` polls unless an e-stop ends it early.
pub fn run_episode<P: Policy + ?Sized, R: Rig + ?Sized>(
    policy: &mut P,
    spec: &TrajectorySpec,
    rig: &mut R,
    cfg: &EpisodeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeLog, EnvError> {
    spec.validate()?;
    let n = cfg.steps()?;
    let dt = cfg.dt();

    let first = rig.reset(rng);
    let mut obs = build_observation(first.q_meas, first.q_meas, 0.0, first.f_meas, desired_force(spec, 0.0)?, dt);
    let mut q_prev = first.q_meas;
    let mut steps = Vec::with_capacity(n);
    let mut fault = None;
    let mut truncated = false;

    for k in 0..n {
        let proposed = policy.act(&obs);
        let out = rig.advance(proposed, rng)?;
        let t = (k + 1) as f64 / cfg.policy_rate;
        let f_des = desired_force(spec, t)?;
        let next = build_observation(out.sensors.q_meas, q_prev, obs.q_dot, out.sensors.f_meas, f_des, dt);
        steps.push(StepRecord {
            t,
            f_des,
            f: out.sensors.f_meas,
            q_true: out.q_true,
            q_meas: out.sensors.q_meas,
            q_dot: next.q_dot,
            q_ddot: next.q_ddot,
            action_proposed: proposed,
            action_applied: out.applied_current,
            reward: reward(f_des, out.sensors.f_meas, cfg.reward_divisor),
            safety_mode: out.mode,
        });
        q_prev = out.sensors.q_meas;
        obs = next;
        if out.mode == SafetyMode::Estopped {
            fault = out.fault;
            truncated = true;
            break;
        }
    }

    let len = steps.len().max(1) as f64;
    let summary = EpisodeSummary {
        steps: steps.len(),
        total_reward: steps.iter().map(|s| s.reward).sum(),
        mae: steps.iter().map(|s| (s.f_des - s.f).abs()).sum::<f64>() / len,
        peak_force: steps.iter().map(|s| s.f.abs()).fold(0.0, f64::max),
        truncated,
        fault,
        link: rig.link_counters(),
        encoder_offset: rig.encoder_offset(),
    };
    Ok(EpisodeLog { spec: *spec, config: cfg.clone(), steps, final_observation: obs, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::RawSensors;
    use crate::rig::{SimRig, StepOutcome};
    use rand::SeedableRng;

    #[test]
    fn sinusoid_quarter_period() {
        let spec = TrajectorySpec::Sinusoid { amplitude: 50.0, freq: 0.1 };
        assert!((desired_force(&spec, 2.5).unwrap() - 50.0).abs() < 1e-12);
        assert!(desired_force(&spec, -1.0).is_err());
    }

    #[test]
    fn chirp_endpoints() {
        let spec = TrajectorySpec::Chirp { amplitude: 50.0, f0: 0.05, f1: 0.35, duration: 60.0 };
        assert_eq!(desired_force(&spec, 0.0).unwrap(), 0.0);
        assert_eq!(spec.instantaneous_frequency(0.0), 0.05);
        // dφ/dt = f0 + (f1 − f0)·t/T, evaluated at t = T.
        assert!((spec.instantaneous_frequency(60.0) - 0.35).abs() < 1e-15);
        assert!(desired_force(&spec, 60.5).is_err());
        // Numerical derivative of the phase agrees with the analytic frequency.
        let phase = |t: f64| 0.05 * t + 0.3 * t * t / 120.0;
        let h = 1e-4;
        let num = (phase(30.0 + h) - phase(30.0 - h)) / (2.0 * h);
        assert!((num - spec.instantaneous_frequency(30.0)).abs() < 1e-9);
    }

    #[test]
    fn observation_difference_quotients() {
        let o = build_observation(0.10, 0.09, 0.0, 1.0, 2.0, 0.01);
        assert!((o.q_dot - 1.0).abs() < 1e-12);
        assert!((o.q_ddot - 100.0).abs() < 1e-9);
        let o = build_observation(0.30, 0.29, 0.0, 0.0, 0.0, 0.01);
        assert_eq!(o.q, 0.25);
        assert!((o.q_dot - 1.0).abs() < 1e-9);
        let o = build_observation(-0.4, -0.4, 0.0, 0.0, 0.0, 0.01);
        assert_eq!(o.q, -0.25);
        assert_eq!((o.q_dot, o.q_ddot), (0.0, 0.0));
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward(37.0, 37.0, 1e6), 0.0);
        assert_eq!(reward(50.0, 0.0, 1e6), -0.0025);
        assert_eq!(reward(-50.0, 50.0, 1e6), -0.01);
    }

    #[test]
    fn trajectory_parsing() {
        let s: TrajectorySpec = "sine:0.1,50".parse().unwrap();
        assert_eq!(s, TrajectorySpec::Sinusoid { amplitude: 50.0, freq: 0.1 });
        let c: TrajectorySpec = "chirp:0.05,0.35,60,50".parse().unwrap();
        assert_eq!(c, TrajectorySpec::evaluation_chirp(60.0));
        assert_eq!(c.to_string().parse::<TrajectorySpec>().unwrap(), c);
        assert!("chirp:0.3,0.1,60,50".parse::<TrajectorySpec>().is_err());
        assert!("square:1,2".parse::<TrajectorySpec>().is_err());
    }

    #[test]
    fn training_spec_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let freqs: Vec<f64> = (0..10_000)
            .map(|_| match sample_training_spec(&mut rng) {
                TrajectorySpec::Sinusoid { amplitude, freq } => {
                    assert_eq!(amplitude, 50.0);
                    freq
                }
                _ => unreachable!(),
            })
            .collect();
        let min = freqs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = freqs.iter().cloned().fold(0.0, f64::max);
        let mean = freqs.iter().sum::<f64>() / freqs.len() as f64;
        assert!(min >= 0.05 && max <= 0.35);
        assert!((mean - 0.2).abs() / 0.2 < 0.02);
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            assert_eq!(sample_training_spec(&mut a), sample_training_spec(&mut b));
        }
    }

    #[test]
    fn episode_length_is_duration_times_rate() {
        let cfg = EpisodeConfig::default();
        assert_eq!(cfg.steps().unwrap(), 6000);
        let bad = EpisodeConfig { duration_s: 0.015, ..cfg };
        assert!(bad.steps().is_err());
    }

    #[test]
    fn zero_policy_reward_matches_offline_sum() {
        let mut rig = SimRig::paperlike_default();
        rig.nonlin.force_noise_rms = 0.0;
        rig.nonlin.angle_noise_rms = 0.0;
        let spec = TrajectorySpec::Sinusoid { amplitude: 50.0, freq: 0.2 };
        let cfg = EpisodeConfig { duration_s: 10.0, ..EpisodeConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let log = run_episode(&mut |_: &Observation| 0.0, &spec, &mut rig, &cfg, &mut rng).unwrap();
        assert_eq!(log.steps.len(), 1000);
        assert!(log.steps.iter().all(|s| s.f == 0.0));
        let offline: f64 = (1..=1000)
            .map(|k| {
                let fd = 50.0 * (std::f64::consts::TAU * 0.2 * k as f64 * 0.01).sin();
                -fd * fd / 1e6
            })
            .sum();
        assert!((log.summary.total_reward - offline).abs() < 1e-9);
    }

    /// Test double whose force reading is exactly the last command.
    struct EchoRig {
        last: f64,
    }

    impl Rig for EchoRig {
        fn reset(&mut self, _rng: &mut ChaCha8Rng) -> RawSensors {
            self.last = 0.0;
            RawSensors::default()
        }

        fn advance(&mut self, proposed: f64, _rng: &mut ChaCha8Rng) -> Result<StepOutcome, PlantError> {
            self.last = proposed;
            Ok(StepOutcome {
                sensors: RawSensors { q_meas: 0.0, f_meas: proposed },
                q_true: 0.0,
                applied_current: proposed,
                mode: SafetyMode::Nominal,
                fault: None,
            })
        }
    }

    #[test]
    fn perfect_tracking_scores_zero() {
        let spec = TrajectorySpec::Sinusoid { amplitude: 50.0, freq: 0.3 };
        let cfg = EpisodeConfig { duration_s: 5.0, ..EpisodeConfig::default() };
        let mut k = 0usize;
        let mut oracle = |_: &Observation| {
            k += 1;
            desired_force(&spec, k as f64 / 100.0).unwrap()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let log = run_episode(&mut oracle, &spec, &mut EchoRig { last: 0.0 }, &cfg, &mut rng).unwrap();
        assert_eq!(log.summary.total_reward, 0.0);
        assert_eq!(log.summary.mae, 0.0);
    }

    #[test]
    fn non_finite_action_estops_and_truncates() {
        let mut rig = SimRig::paperlike_default();
        let spec = TrajectorySpec::Sinusoid { amplitude: 50.0, freq: 0.2 };
        let cfg = EpisodeConfig { duration_s: 5.0, ..EpisodeConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut calls = 0;
        let mut bad = |_: &Observation| {
            calls += 1;
            if calls > 10 { f64::NAN } else { 0.1 }
        };
        let log = run_episode(&mut bad, &spec, &mut rig, &cfg, &mut rng).unwrap();
        assert!(log.summary.truncated);
        assert_eq!(log.steps.len(), 11);
        assert!(log.summary.fault.is_some());
    }

    #[test]
    fn log_roundtrip() {
        let mut rig = SimRig::paperlike_default();
        let spec = TrajectorySpec::evaluation_chirp(3.0);
        let cfg = EpisodeConfig { duration_s: 3.0, ..EpisodeConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let log = run_episode(&mut |o: &Observation| 0.004 * o.f_des, &spec, &mut rig, &cfg, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ep.jsonl");
        log.write_jsonl(&path).unwrap();
        assert_eq!(EpisodeLog::read_jsonl(&path).unwrap(), log);
    }
}
