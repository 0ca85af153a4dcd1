//! Training, evaluation and fine-tuning pipelines.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::metrics::EvalReport;
use super::{ExperimentConfig, HarnessError};
use crate::env::{self, EpisodeConfig, EpisodeLog, EpisodeSummary, Policy, TrajectorySpec};
use crate::nn::PolicyParams;
use crate::pid::PidPolicy;
use crate::ppo::{self, DivergenceReport, MeanPolicy, PpoAgent, TrainMetrics, Verdict};
use crate::rig::{Rig, SimRig};

const STREAM_INIT: u64 = 1;
const STREAM_AGENT: u64 = 2;
const STREAM_ENV: u64 = 3;
const STREAM_EVAL: u64 = 1 << 32;

/// Episodes averaged when judging reward thresholds.
pub const REWARD_WINDOW: usize = 5;

/// An independent, reproducible random stream derived from the run seed.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// One line of `episodes.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub spec: TrajectorySpec,
    pub summary: EpisodeSummary,
    /// Set when an e-stop required an operator reset after this episode.
    pub reset_warning: Option<String>,
}

/// One line of `evals.jsonl`: deterministic evaluation before `episode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub episode: u64,
    pub report: EvalReport,
}

/// Wall-clock accounting, kept apart from the reproducible artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub episodes: u64,
    pub wall_s: f64,
    pub simulated_s: f64,
    pub realtime_factor: f64,
    pub estops: u64,
    pub pruned: bool,
}

struct RunFiles {
    dir: PathBuf,
    metrics: BufWriter<File>,
    episodes: BufWriter<File>,
    evals: BufWriter<File>,
}

impl RunFiles {
    fn create(dir: &Path, cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let cfg_path = dir.join("config.toml");
        fs::write(&cfg_path, cfg.to_toml_string()?).map_err(|e| HarnessError::io(&cfg_path, e))?;
        let open = |name: &str| {
            let p = dir.join(name);
            File::create(&p).map(BufWriter::new).map_err(|e| HarnessError::io(&p, e))
        };
        Ok(Self { dir: dir.to_path_buf(), metrics: open("metrics.jsonl")?, episodes: open("episodes.jsonl")?, evals: open("evals.jsonl")? })
    }

    fn line<T: Serialize>(w: &mut BufWriter<File>, dir: &Path, v: &T) -> Result<(), HarnessError> {
        serde_json::to_writer(&mut *w, v)?;
        w.write_all(b"\n").map_err(|e| HarnessError::io(dir, e))
    }

    fn flush(&mut self) -> Result<(), HarnessError> {
        for w in [&mut self.metrics, &mut self.episodes, &mut self.evals] {
            w.flush().map_err(|e| HarnessError::io(&self.dir, e))?;
        }
        Ok(())
    }
}

/// The episode loop: collect on the rig, update when a batch is full,
/// evaluate on schedule.
pub struct Trainer {
    pub cfg: ExperimentConfig,
    pub agent: PpoAgent,
    pub rig: SimRig,
    pub env_rng: ChaCha8Rng,
    /// Episodes completed.
    pub episode: u64,
    /// Episode at which the learning-rate schedule started.
    pub lr_origin: u64,
    pub history: Vec<TrainMetrics>,
    pub episodes: Vec<EpisodeRecord>,
    pub evals: Vec<EvalRecord>,
    pub divergence: Option<DivergenceReport>,
    files: Option<RunFiles>,
}

impl Trainer {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let params = PolicyParams::new(&cfg.net, &mut rng_stream(cfg.seed, STREAM_INIT));
        let agent = PpoAgent::from_parts(params, None, cfg.ppo.clone(), 0, rng_stream(cfg.seed, STREAM_AGENT));
        Ok(Self {
            rig: cfg.rig(),
            env_rng: rng_stream(cfg.seed, STREAM_ENV),
            cfg,
            agent,
            episode: 0,
            lr_origin: 0,
            history: Vec::new(),
            episodes: Vec::new(),
            evals: Vec::new(),
            divergence: None,
            files: None,
        })
    }

    /// Resumes from a checkpoint. `cfg` replaces the stored configuration when given.
    pub fn from_checkpoint(ckpt: Checkpoint, cfg: Option<ExperimentConfig>) -> Result<Self, HarnessError> {
        let cfg = cfg.unwrap_or(ckpt.config);
        cfg.validate()?;
        let agent = PpoAgent::from_parts(ckpt.params, Some(ckpt.optimizer), cfg.ppo.clone(), ckpt.params_version, ckpt.agent_rng);
        let mut rig = cfg.rig();
        rig.set_encoder_offset(ckpt.encoder_offset);
        Ok(Self {
            rig,
            env_rng: ckpt.env_rng,
            cfg,
            agent,
            episode: ckpt.episode,
            lr_origin: ckpt.lr_origin,
            history: Vec::new(),
            episodes: Vec::new(),
            evals: Vec::new(),
            divergence: None,
            files: None,
        })
    }

    /// Streams artifacts into `dir` from now on.
    pub fn write_to(&mut self, dir: &Path) -> Result<(), HarnessError> {
        self.files = Some(RunFiles::create(dir, &self.cfg)?);
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            params: self.agent.params.clone(),
            optimizer: self.agent.opt.clone(),
            episode: self.episode,
            lr_origin: self.lr_origin,
            params_version: self.agent.version,
            agent_rng: self.agent.rng.clone(),
            env_rng: self.env_rng.clone(),
            encoder_offset: self.rig.encoder_offset(),
        }
    }

    /// Deterministic evaluation of the current policy on a fresh copy of the rig.
    pub fn evaluate(&self, spec: &TrajectorySpec, duration_s: f64) -> Result<EpisodeLog, HarnessError> {
        let mut rig = self.cfg.rig();
        rig.set_encoder_offset(self.rig.encoder_offset());
        let mut rng = rng_stream(self.cfg.seed, STREAM_EVAL + self.episode);
        let env_cfg = EpisodeConfig { duration_s, ..self.cfg.env.clone() };
        Ok(env::run_episode(&mut MeanPolicy(&self.agent.params), spec, &mut rig, &env_cfg, &mut rng)?)
    }

    fn scheduled_eval(&mut self) -> Result<(), HarnessError> {
        let spec = TrajectorySpec::Sinusoid { amplitude: self.cfg.eval.amplitude, freq: self.cfg.eval.freq };
        let log = self.evaluate(&spec, self.cfg.env.duration_s)?;
        let rec = EvalRecord { episode: self.episode, report: EvalReport::from_log(&log)? };
        if let Some(f) = &mut self.files {
            RunFiles::line(&mut f.evals, &f.dir, &rec)?;
        }
        self.evals.push(rec);
        Ok(())
    }

    /// One training episode plus an update if the batch is full.
    pub fn run_episode(&mut self) -> Result<(&EpisodeRecord, Option<&TrainMetrics>), HarnessError> {
        let spec = env::sample_training_spec(&mut self.env_rng);
        self.agent.deterministic = false;
        let log = env::run_episode(&mut self.agent, &spec, &mut self.rig, &self.cfg.env, &mut self.env_rng)?;
        let reset_warning = if log.summary.truncated {
            self.rig.manual_reset(false).warning.map(str::to_owned)
        } else {
            None
        };
        self.agent.finish_episode(&log)?;
        let rec = EpisodeRecord { episode: self.episode, spec, summary: log.summary, reset_warning };
        self.episode += 1;
        let mut updated = false;
        if self.agent.batch_ready() {
            let m = self.agent.train_update(self.episode - 1 - self.lr_origin);
            let m = match m {
                Ok(m) => m,
                Err(ppo::PpoError::NonFiniteLoss) => {
                    // Parameters were restored; drop the batch and keep going.
                    let mut m = self.history.last().cloned().unwrap_or_else(|| empty_metrics(rec.episode));
                    m.episode = rec.episode;
                    m.aborted = true;
                    m
                }
                Err(e) => return Err(e.into()),
            };
            let mut m = m;
            m.episode = rec.episode;
            if let Some(f) = &mut self.files {
                RunFiles::line(&mut f.metrics, &f.dir, &m)?;
            }
            self.history.push(m);
            updated = true;
        }
        if let Some(f) = &mut self.files {
            RunFiles::line(&mut f.episodes, &f.dir, &rec)?;
        }
        self.episodes.push(rec);
        let window = self.cfg.eval.divergence_window;
        if self.divergence.is_none() && window > 0 && self.history.len() == window {
            let report = ppo::divergence_verdict(&self.history, window)?;
            if let Some(f) = &self.files {
                write_json(&f.dir.join("divergence.json"), &report)?;
            }
            self.divergence = Some(report);
        }
        Ok((self.episodes.last().expect("just pushed"), if updated { self.history.last() } else { None }))
    }

    /// Runs `n` episodes with scheduled evaluations and checkpoints.
    pub fn train(&mut self, n: usize) -> Result<RunStats, HarnessError> {
        let start = Instant::now();
        let first = self.episode;
        let every = self.cfg.eval.every_episodes as u64;
        let ckpt_every = self.cfg.eval.checkpoint_every as u64;
        let mut estops = 0;
        let mut pruned = false;
        for _ in 0..n {
            if every > 0 && (self.episode - first) % every == 0 {
                self.scheduled_eval()?;
            }
            let (rec, _) = self.run_episode()?;
            estops += u64::from(rec.summary.truncated);
            if ckpt_every > 0 && (self.episode - first) % ckpt_every == 0 {
                self.save_checkpoint()?;
            }
            if let Some(f) = &mut self.files {
                f.flush()?;
            }
            if self.cfg.eval.prune_on_divergence
                && self.divergence.as_ref().is_some_and(|d| d.verdict == Verdict::LikelyDivergent)
            {
                pruned = true;
                break;
            }
        }
        if every > 0 {
            self.scheduled_eval()?;
        }
        self.save_checkpoint()?;
        if let Some(f) = &mut self.files {
            f.flush()?;
        }
        let episodes = self.episode - first;
        let simulated_s = self.episodes[self.episodes.len() - episodes as usize..]
            .iter()
            .map(|e| e.summary.steps as f64 / self.cfg.env.policy_rate)
            .sum::<f64>();
        let wall_s = start.elapsed().as_secs_f64();
        let stats = RunStats { episodes, wall_s, simulated_s, realtime_factor: simulated_s / wall_s.max(1e-9), estops, pruned };
        if let Some(f) = &self.files {
            write_json(&f.dir.join("run.json"), &stats)?;
        }
        Ok(stats)
    }

    fn save_checkpoint(&self) -> Result<(), HarnessError> {
        if let Some(f) = &self.files {
            self.checkpoint().save(&f.dir.join("checkpoint.ckpt"))?;
        }
        Ok(())
    }

    /// Total reward of each training episode so far.
    pub fn episode_rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.summary.total_reward).collect()
    }
}

fn empty_metrics(episode: u64) -> TrainMetrics {
    TrainMetrics {
        episode,
        mean_episode_reward: 0.0,
        policy_loss: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        approx_kl: 0.0,
        lr: 0.0,
        clip_fraction: 0.0,
        action_std: 0.0,
        grad_norm: 0.0,
        skipped_steps: 0,
        aborted: true,
    }
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(v)?;
    fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

/// Trailing `REWARD_WINDOW`-episode means, one per complete window.
pub fn windowed_means(rewards: &[f64]) -> Vec<f64> {
    rewards.windows(REWARD_WINDOW).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect()
}

/// Convergence threshold from a reference run: 90% of the way from its first
/// windowed mean to its best windowed mean.
pub fn reward_threshold(reference_rewards: &[f64]) -> Result<f64, HarnessError> {
    let means = windowed_means(reference_rewards);
    let first = *means.first().ok_or(HarnessError::EmptyInput("reward_threshold"))?;
    let best = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(first + 0.9 * (best - first))
}

/// Episodes until the trailing windowed mean first reaches `threshold`.
pub fn episodes_to_threshold(rewards: &[f64], threshold: f64) -> Option<usize> {
    windowed_means(rewards).iter().position(|m| *m >= threshold).map(|i| i + REWARD_WINDOW)
}

/// Fine-tuning options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneOptions {
    /// Zero the encoder offset before the first episode.
    pub recalibrate: bool,
    /// Restart the learning-rate schedule instead of continuing it.
    pub fresh_schedule: bool,
}

pub fn finetune_trainer(
    ckpt: Checkpoint,
    cfg: Option<ExperimentConfig>,
    opts: FinetuneOptions,
) -> Result<Trainer, HarnessError> {
    let mut t = Trainer::from_checkpoint(ckpt, cfg)?;
    if opts.recalibrate {
        t.rig.set_encoder_offset(0.0);
    }
    if opts.fresh_schedule {
        t.lr_origin = t.episode;
    }
    Ok(t)
}

/// Runs one deterministic episode of `policy` on a fresh rig built from `cfg`.
pub fn evaluate_policy<P: Policy + ?Sized>(
    policy: &mut P,
    cfg: &ExperimentConfig,
    spec: &TrajectorySpec,
    duration_s: f64,
    encoder_offset: f64,
) -> Result<EpisodeLog, HarnessError> {
    let mut rig = cfg.rig();
    rig.set_encoder_offset(encoder_offset);
    let mut rng = rng_stream(cfg.seed, STREAM_EVAL - 1);
    let env_cfg = EpisodeConfig { duration_s, ..cfg.env.clone() };
    Ok(env::run_episode(policy, spec, &mut rig, &env_cfg, &mut rng)?)
}

/// The configured PID controller, ready to run at the policy rate.
pub fn pid_policy(cfg: &ExperimentConfig) -> PidPolicy {
    PidPolicy::new(cfg.pid.clone(), cfg.env.dt())
}

/// Episode length that covers a trajectory: the chirp's own duration, else `fallback`.
pub fn duration_for(spec: &TrajectorySpec, fallback: f64) -> f64 {
    match *spec {
        TrajectorySpec::Chirp { duration, .. } => duration,
        TrajectorySpec::Sinusoid { .. } => fallback,
    }
}
