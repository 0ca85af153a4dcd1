use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seatwin::env::{EpisodeLog, TrajectorySpec, TRAINING_AMPLITUDE};
use seatwin::harness::checkpoint::Checkpoint;
use seatwin::harness::config::{ExperimentConfig, Preset};
use seatwin::harness::metrics::{self, EvalReport};
use seatwin::harness::plot;
use seatwin::harness::train::{self, EpisodeRecord, FinetuneOptions, Trainer};
use seatwin::harness::HarnessError;
use seatwin::ppo::{MeanPolicy, TrainMetrics};

#[derive(Parser)]
#[command(name = "seatwin", version, about = "Simulated SEA pendulum rig: PPO force tracking, PID baseline, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML). Sections override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed; required unless the config sets one.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: HarnessError| e.to_string())
}

fn parse_trajectory(s: &str) -> Result<TrajectorySpec, String> {
    s.parse().map_err(|e: seatwin::env::EnvError| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy from scratch.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate a checkpoint's deterministic policy on one trajectory.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// `sine:f,A` or `chirp:f0,f1,T,A`.
        #[arg(long, value_parser = parse_trajectory, default_value = "sine:0.1,50")]
        trajectory: TrajectorySpec,
        /// Exit non-zero if the episode ends in an e-stop.
        #[arg(long)]
        require_stable: bool,
    },
    /// Evaluate the PID baseline on one trajectory.
    PidEval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_trajectory, default_value = "sine:0.1,50")]
        trajectory: TrajectorySpec,
        #[arg(long)]
        require_stable: bool,
    },
    /// Paired policy and PID runs on the 50 N, 0.05 to 0.35 Hz chirp.
    CompareChirp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sweep duration (s).
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
    },
    /// Continue training from a checkpoint.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        /// Zero the encoder offset first.
        #[arg(long)]
        recalibrate: bool,
        /// Restart the learning-rate schedule.
        #[arg(long)]
        fresh_schedule: bool,
        /// Reward threshold for episodes-to-threshold; defaults to one derived
        /// from the checkpoint run's episode rewards when available.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Recompute metrics from an episode log and check its rewards.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
    /// Write tab-separated plot data from a run directory or an episode log.
    EmitPlotData {
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path, common.preset, common.seed)?,
        None => {
            let seed = common.seed.ok_or_else(|| HarnessError::Config("--seed or --config with a seed is required".into()))?;
            ExperimentConfig::preset(common.preset.unwrap_or_default(), seed)
        }
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

fn print_report(label: &str, r: &EvalReport) {
    println!(
        "{label}: {} mae={:.3} N overshoot={:.1}% peak={:.1} N stable={}",
        r.trajectory, r.mae, r.max_overshoot_pct, r.peak_force, r.stable
    );
    for b in &r.bins {
        if let Some(m) = b.mae {
            println!("  {:.2}-{:.2} Hz: {m:.3} N ({} samples)", b.lo, b.hi, b.samples);
        }
    }
}

/// Writes the report and log under `dir` with the given stem.
fn save_eval(dir: &Path, stem: &str, log: &EpisodeLog) -> Result<EvalReport, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let log_path = dir.join(format!("{stem}_log.jsonl"));
    log.write_jsonl(&log_path)?;
    let mut report = EvalReport::from_log(log)?;
    report.episode_ref = Some(log_path.display().to_string());
    train::write_json(&dir.join(format!("{stem}_report.json")), &report)?;
    Ok(report)
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Train { common, episodes } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = episodes {
                cfg.episodes = n;
            }
            let dir = cfg.run_dir();
            let n = cfg.episodes;
            let mut trainer = Trainer::new(cfg)?;
            trainer.write_to(&dir)?;
            let stats = trainer.train(n)?;
            let rewards = trainer.episode_rewards();
            let k = rewards.len().min(20);
            let mean = |r: &[f64]| r.iter().sum::<f64>() / r.len().max(1) as f64;
            println!(
                "trained {} episodes in {:.1} s ({:.1}x real time), e-stops: {}{}",
                stats.episodes,
                stats.wall_s,
                stats.realtime_factor,
                stats.estops,
                if stats.pruned { ", pruned as likely divergent" } else { "" }
            );
            println!("mean reward first {k}: {:.4}, last {k}: {:.4}", mean(&rewards[..k]), mean(&rewards[rewards.len() - k..]));
            if let (Some(first), Some(last)) = (trainer.evals.first(), trainer.evals.last()) {
                println!("eval mae: {:.3} N -> {:.3} N", first.report.mae, last.report.mae);
            }
            println!("artifacts in {}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { common, checkpoint, trajectory, require_stable } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = if common.config.is_some() { load_config(&common)? } else { ckpt.config.clone() };
            let duration = train::duration_for(&trajectory, cfg.env.duration_s);
            let log = train::evaluate_policy(&mut MeanPolicy(&ckpt.params), &cfg, &trajectory, duration, ckpt.encoder_offset)?;
            let dir = common.out.unwrap_or_else(|| cfg.run_dir());
            let report = save_eval(&dir, "eval", &log)?;
            print_report("policy", &report);
            Ok(if require_stable && !report.stable { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
        Command::PidEval { common, trajectory, require_stable } => {
            let cfg = load_config(&common)?;
            let duration = train::duration_for(&trajectory, cfg.env.duration_s);
            let log = train::evaluate_policy(&mut train::pid_policy(&cfg), &cfg, &trajectory, duration, 0.0)?;
            let report = save_eval(&cfg.run_dir(), "pid_eval", &log)?;
            print_report("pid", &report);
            Ok(if require_stable && !report.stable { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
        Command::CompareChirp { common, checkpoint, duration } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = if common.config.is_some() { load_config(&common)? } else { ckpt.config.clone() };
            let spec = TrajectorySpec::Chirp { amplitude: TRAINING_AMPLITUDE, f0: 0.05, f1: 0.35, duration };
            let drl = train::evaluate_policy(&mut MeanPolicy(&ckpt.params), &cfg, &spec, duration, ckpt.encoder_offset)?;
            let pid = train::evaluate_policy(&mut train::pid_policy(&cfg), &cfg, &spec, duration, ckpt.encoder_offset)?;
            let dir = common.out.unwrap_or_else(|| cfg.run_dir());
            let drl_report = save_eval(&dir, "chirp_drl", &drl)?;
            let pid_report = save_eval(&dir, "chirp_pid", &pid)?;
            write_text(&dir.join("compare_chirp.tsv"), &plot::chirp_comparison(&drl, &pid))?;
            print_report("policy", &drl_report);
            print_report("pid", &pid_report);
            Ok(ExitCode::SUCCESS)
        }
        Command::Finetune { common, checkpoint, episodes, recalibrate, fresh_schedule, threshold } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = if common.config.is_some() { Some(load_config(&common)?) } else { None };
            let reference_dir = ckpt.config.run_dir();
            let mut trainer = train::finetune_trainer(ckpt, cfg, FinetuneOptions { recalibrate, fresh_schedule })?;
            if let Some(out) = common.out {
                trainer.cfg.output_dir = out;
            }
            trainer.cfg.run_id = format!("{}-finetune", trainer.cfg.run_id);
            let dir = trainer.cfg.run_dir();
            trainer.write_to(&dir)?;
            let stats = trainer.train(episodes)?;
            let threshold = match threshold {
                Some(t) => Some(t),
                None => read_jsonl::<EpisodeRecord>(&reference_dir.join("episodes.jsonl"))
                    .ok()
                    .and_then(|r| train::reward_threshold(&r.iter().map(|e| e.summary.total_reward).collect::<Vec<_>>()).ok()),
            };
            println!("finetuned {} episodes in {:.1} s, e-stops: {}", stats.episodes, stats.wall_s, stats.estops);
            if let Some(t) = threshold {
                match train::episodes_to_threshold(&trainer.episode_rewards(), t) {
                    Some(n) => println!("reward threshold {t:.4} reached after {n} episodes"),
                    None => println!("reward threshold {t:.4} not reached"),
                }
            }
            println!("artifacts in {}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { log } => {
            let log = EpisodeLog::read_jsonl(&log)?;
            let r = metrics::replay(&log)?;
            print_report("replay", &r.report);
            println!("total reward: recomputed {} logged {}", r.recomputed_total_reward, r.logged_total_reward);
            if r.reward_mismatches > 0 {
                println!("reward mismatch: {} of {} steps disagree with the recomputed reward", r.reward_mismatches, r.report.steps);
            }
            if r.trajectory_mismatches > 0 {
                println!("trajectory mismatch: {} steps", r.trajectory_mismatches);
            }
            Ok(if r.is_consistent() { ExitCode::SUCCESS } else { ExitCode::from(3) })
        }
        Command::EmitPlotData { run, log, out } => {
            if run.is_none() && log.is_none() {
                return Err(HarnessError::Config("emit-plot-data needs --run and/or --log".into()));
            }
            if let Some(dir) = run {
                let metrics: Vec<TrainMetrics> = read_jsonl(&dir.join("metrics.jsonl"))?;
                let episodes: Vec<EpisodeRecord> = read_jsonl(&dir.join("episodes.jsonl"))?;
                write_text(&out.join("training_curves.tsv"), &plot::training_curves(&metrics, &episodes))?;
            }
            if let Some(path) = log {
                let log = EpisodeLog::read_jsonl(&path)?;
                write_text(&out.join("tracking_trace.tsv"), &plot::tracking_trace(&log))?;
            }
            println!("plot data in {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
