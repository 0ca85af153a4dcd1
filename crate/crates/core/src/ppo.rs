//! Proximal policy optimisation for the force-tracking task.
//!
//! Collection is strictly on-policy: a [`PpoAgent`] records every transition
//! it is polled for, the harness closes each episode with
//! [`PpoAgent::finish_episode`], and [`PpoAgent::train_update`] consumes the
//! batch. The objective is the clipped surrogate
//!
//! ```text
//! L = E[min(ρ·Â, clip(ρ, 1−ε, 1+ε)·Â)],   ρ = π_new(a|s) / π_old(a|s)
//! ```
//!
//! ascended by descending `−L + c_v·MSE(V, R) − c_e·H`.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EpisodeLog, Observation, Policy};
use crate::nn::{self, Adam, PolicyParams, HALF_LN_TAU};

/// Approximate-KL level counted as a spike by the divergence heuristic.
pub const KL_SPIKE_THRESHOLD: f64 = 0.02;

#[derive(Debug, Error, PartialEq)]
pub enum PpoError {
    #[error("batch was collected by params version {batch}, agent is at {agent}")]
    StaleBatch { batch: u64, agent: u64 },
    #[error("empty rollout batch")]
    EmptyBatch,
    #[error("non-finite loss; update aborted and parameters restored")]
    NonFiniteLoss,
    #[error("history has {have} episodes, window needs {need}")]
    ShortHistory { have: usize, need: usize },
    #[error("invalid ppo config: {0}")]
    InvalidConfig(String),
    #[error("episode log has {log} steps but {recorded} transitions were recorded")]
    EpisodeMismatch { log: usize, recorded: usize },
}

/// Piecewise-linear learning rate indexed by episode; constant past the last breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LrSchedule {
    /// `(episode, lr)` pairs with strictly increasing episodes.
    pub breakpoints: Vec<(f64, f64)>,
}

impl LrSchedule {
    /// 5e-5 → 5e-6 over 1280 episodes, then → 1e-7 at 2048.
    pub fn paper_scale() -> Self {
        Self { breakpoints: vec![(0.0, 5e-5), (1280.0, 5e-6), (2048.0, 1e-7)] }
    }

    /// Same profile with every breakpoint episode multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { breakpoints: self.breakpoints.iter().map(|&(e, lr)| (e * factor, lr)).collect() }
    }

    pub fn validate(&self) -> Result<(), PpoError> {
        if self.breakpoints.is_empty() {
            return Err(PpoError::InvalidConfig("lr_schedule needs at least one breakpoint".into()));
        }
        if self.breakpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(PpoError::InvalidConfig("lr_schedule episodes must be strictly increasing".into()));
        }
        if self.breakpoints.iter().any(|&(e, lr)| !(e >= 0.0 && lr >= 0.0 && lr.is_finite())) {
            return Err(PpoError::InvalidConfig("lr_schedule entries must be non-negative".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, episode: u64) -> f64 {
        let e = episode as f64;
        let bp = &self.breakpoints;
        if e <= bp[0].0 {
            return bp[0].1;
        }
        for w in bp.windows(2) {
            let ((e0, l0), (e1, l1)) = (w[0], w[1]);
            if e <= e1 {
                // Weighted form so both ends return the breakpoint value exactly.
                let w = (e - e0) / (e1 - e0);
                return (1.0 - w) * l0 + w * l1;
            }
        }
        bp[bp.len() - 1].1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    /// Minimum steps per batch; collection always finishes the current episode.
    pub train_batch_min_steps: usize,
    pub epochs_per_batch: usize,
    pub minibatch_size: usize,
    pub entropy_coeff: f64,
    pub value_coeff: f64,
    pub grad_clip_norm: f64,
    pub normalize_advantages: bool,
    /// Bootstrap the value of the state where an e-stop halted the episode.
    pub bootstrap_on_estop: bool,
    pub lr_schedule: LrSchedule,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            train_batch_min_steps: 512,
            epochs_per_batch: 10,
            minibatch_size: 128,
            entropy_coeff: 0.0,
            value_coeff: 0.5,
            grad_clip_norm: 0.5,
            normalize_advantages: true,
            bootstrap_on_estop: false,
            lr_schedule: LrSchedule::paper_scale(),
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::InvalidConfig(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must be in [0, 1]");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be > 0");
        }
        if self.epochs_per_batch == 0 || self.minibatch_size == 0 || self.train_batch_min_steps == 0 {
            return bad("epochs, minibatch size and batch size must be positive");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be > 0");
        }
        self.lr_schedule.validate()
    }
}

/// One recorded transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub obs: Observation,
    pub action: f64,
    pub logprob_old: f64,
    pub reward: f64,
    pub value_old: f64,
    /// Last step of its episode.
    pub done: bool,
}

/// A contiguous episode inside a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSegment {
    pub start: usize,
    pub len: usize,
    /// `V(s_T)` for time-limit ends; 0 for terminal (e-stop) ends.
    pub bootstrap_value: f64,
    pub total_reward: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub steps: Vec<RolloutStep>,
    pub episodes: Vec<EpisodeSegment>,
    /// Parameter version that collected this batch.
    pub params_version: u64,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn mean_episode_reward(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.total_reward).sum::<f64>() / self.episodes.len() as f64
    }

    /// GAE over every segment.
    pub fn advantages(&self, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
        let mut adv = Vec::with_capacity(self.len());
        let mut ret = Vec::with_capacity(self.len());
        for seg in &self.episodes {
            let slice = &self.steps[seg.start..seg.start + seg.len];
            let rewards: Vec<f64> = slice.iter().map(|s| s.reward).collect();
            let values: Vec<f64> = slice.iter().map(|s| s.value_old).collect();
            let (a, r) = compute_gae(&rewards, &values, seg.bootstrap_value, gamma, lambda);
            adv.extend(a);
            ret.extend(r);
        }
        (adv, ret)
    }
}

/// Generalised advantage estimation over one episode.
///
/// `δ_t = r_t + γ·V_{t+1} − V_t`, `Â_t = δ_t + γλ·Â_{t+1}`, with
/// `V_T = bootstrap_value`. Returns `(advantages, advantages + values)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len(), "rewards and values must have equal length");
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap_value;
    let mut running = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// The per-sample clipped surrogate term.
pub fn clipped_term(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

/// `mean(logprob_old − logprob_new)`, a sample estimate of KL(old ‖ new).
pub fn approx_kl(logprob_old: &[f64], logprob_new: &[f64]) -> f64 {
    assert_eq!(logprob_old.len(), logprob_new.len());
    if logprob_old.is_empty() {
        return 0.0;
    }
    logprob_old.iter().zip(logprob_new).map(|(o, n)| o - n).sum::<f64>() / logprob_old.len() as f64
}

/// Inputs of one loss evaluation.
#[derive(Debug, Clone)]
pub struct Minibatch {
    /// Scaled observations, one per row.
    pub x: Array2<f64>,
    pub actions: Vec<f64>,
    pub logprob_old: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Minibatch {
    pub fn gather(
        params: &PolicyParams,
        batch: &RolloutBatch,
        idx: &[usize],
        advantages: &[f64],
        returns: &[f64],
    ) -> Self {
        Self {
            x: params.input_batch(idx.iter().map(|&i| &batch.steps[i].obs)),
            actions: idx.iter().map(|&i| batch.steps[i].action).collect(),
            logprob_old: idx.iter().map(|&i| batch.steps[i].logprob_old).collect(),
            advantages: idx.iter().map(|&i| advantages[i]).collect(),
            returns: idx.iter().map(|&i| returns[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Loss value, its parts, and exact gradients w.r.t. every parameter.
#[derive(Debug, Clone)]
pub struct LossOutput {
    /// `−surrogate + c_v·value_loss − c_e·entropy`.
    pub total: f64,
    /// Mean clipped surrogate (the quantity being ascended).
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grads: PolicyParams,
}

/// Combined PPO loss and its gradient.
pub fn ppo_loss(params: &PolicyParams, mb: &Minibatch, clip_eps: f64, value_coeff: f64, entropy_coeff: f64) -> LossOutput {
    let n = mb.len() as f64;
    let log_std = params.log_std[0];
    let var = (2.0 * log_std).exp();

    let (means, actor_tape) = params.actor.forward_taped(mb.x.view());
    let (values, critic_tape) = params.critic.forward_taped(mb.x.view());

    let mut surrogate = 0.0;
    let mut kl = 0.0;
    let mut clipped_count = 0usize;
    let mut d_mean = Array2::zeros((mb.len(), 1));
    let mut d_log_std = 0.0;
    for i in 0..mb.len() {
        let diff = mb.actions[i] - means[[i, 0]];
        let lp = -0.5 * diff * diff / var - log_std - HALF_LN_TAU;
        let ratio = (lp - mb.logprob_old[i]).exp();
        let adv = mb.advantages[i];
        let term = clipped_term(ratio, adv, clip_eps);
        surrogate += term;
        kl += mb.logprob_old[i] - lp;
        if (ratio - 1.0).abs() > clip_eps {
            clipped_count += 1;
        }
        // The min picks the unclipped branch (ties included): d/dlp = ρ·Â. Otherwise flat.
        let unclipped = ratio * adv;
        if unclipped <= term {
            let d_lp = -unclipped / n;
            d_mean[[i, 0]] = d_lp * diff / var;
            d_log_std += d_lp * (diff * diff / var - 1.0);
        }
    }
    surrogate /= n;

    let mut value_loss = 0.0;
    let mut d_value = Array2::zeros((mb.len(), 1));
    for i in 0..mb.len() {
        let e = values[[i, 0]] - mb.returns[i];
        value_loss += e * e;
        d_value[[i, 0]] = value_coeff * 2.0 * e / n;
    }
    value_loss /= n;

    let entropy = nn::gaussian_entropy(log_std);
    d_log_std -= entropy_coeff;

    let mut grads = PolicyParams {
        actor: params.actor.backward(&actor_tape, d_mean),
        log_std: params.log_std.clone(),
        critic: params.critic.backward(&critic_tape, d_value),
        input_scale: params.input_scale,
    };
    grads.log_std[0] = d_log_std;

    LossOutput {
        total: -surrogate + value_coeff * value_loss - entropy_coeff * entropy,
        surrogate,
        value_loss,
        entropy,
        approx_kl: kl / n,
        clip_fraction: clipped_count as f64 / n,
        grads,
    }
}

/// Per-update training diagnostics, one record per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub episode: u64,
    pub mean_episode_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub lr: f64,
    pub clip_fraction: f64,
    pub action_std: f64,
    pub grad_norm: f64,
    pub skipped_steps: u64,
    pub aborted: bool,
}

/// Draws actions (or returns the mean) and records what it did.
#[derive(Debug, Clone)]
pub struct PpoAgent {
    pub params: PolicyParams,
    pub opt: Adam,
    pub cfg: PpoConfig,
    /// Incremented by every successful update.
    pub version: u64,
    /// Sampling and minibatch shuffling.
    pub rng: ChaCha8Rng,
    pub deterministic: bool,
    pending: Vec<RolloutStep>,
    batch: RolloutBatch,
}

impl PpoAgent {
    pub fn new(params: PolicyParams, cfg: PpoConfig, seed: u64) -> Self {
        Self::from_parts(params, None, cfg, 0, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_parts(params: PolicyParams, opt: Option<Adam>, cfg: PpoConfig, version: u64, rng: ChaCha8Rng) -> Self {
        let opt = opt.unwrap_or_else(|| Adam::new(&params));
        Self {
            params,
            opt,
            cfg,
            version,
            rng,
            deterministic: false,
            pending: Vec::new(),
            batch: RolloutBatch { params_version: version, ..RolloutBatch::default() },
        }
    }

    /// Steps collected for the next update.
    pub fn batch(&self) -> &RolloutBatch {
        &self.batch
    }

    pub fn batch_ready(&self) -> bool {
        self.batch.len() >= self.cfg.train_batch_min_steps
    }

    /// Attaches rewards from the environment's log and closes the episode.
    pub fn finish_episode(&mut self, log: &EpisodeLog) -> Result<(), PpoError> {
        if self.pending.len() != log.steps.len() {
            let recorded = self.pending.len();
            self.pending.clear();
            return Err(PpoError::EpisodeMismatch { log: log.steps.len(), recorded });
        }
        if self.pending.is_empty() {
            return Ok(());
        }
        for (step, rec) in self.pending.iter_mut().zip(&log.steps) {
            step.reward = rec.reward;
        }
        self.pending.last_mut().expect("non-empty").done = true;
        let terminal = log.summary.truncated && !self.cfg.bootstrap_on_estop;
        let bootstrap_value = if terminal { 0.0 } else { nn::critic_forward(&self.params, &log.final_observation) };
        let start = self.batch.steps.len();
        self.batch.episodes.push(EpisodeSegment {
            start,
            len: self.pending.len(),
            bootstrap_value,
            total_reward: log.summary.total_reward,
        });
        self.batch.steps.append(&mut self.pending);
        Ok(())
    }

    /// Drops any partially recorded episode.
    pub fn discard_pending(&mut self) {
        self.pending.clear();
    }

    /// Runs `epochs_per_batch` passes over the collected batch and clears it.
    pub fn train_update(&mut self, episode: u64) -> Result<TrainMetrics, PpoError> {
        let batch = std::mem::take(&mut self.batch);
        self.batch.params_version = self.version;
        let result = train_update(&batch, &mut self.params, &mut self.opt, &self.cfg, self.version, episode, &mut self.rng);
        if result.is_ok() {
            self.version += 1;
        }
        self.batch.params_version = self.version;
        result
    }
}

impl Policy for PpoAgent {
    fn act(&mut self, obs: &Observation) -> f64 {
        let (mean, std) = nn::actor_forward(&self.params, obs);
        if self.deterministic {
            return mean;
        }
        let (a, logprob) = nn::sample_action(mean, std, &mut self.rng);
        let value = nn::critic_forward(&self.params, obs);
        self.pending.push(RolloutStep { obs: *obs, action: a, logprob_old: logprob, reward: 0.0, value_old: value, done: false });
        a
    }
}

/// Deterministic evaluation: the policy mean, nothing recorded.
#[derive(Debug, Clone, Copy)]
pub struct MeanPolicy<'a>(pub &'a PolicyParams);

impl Policy for MeanPolicy<'_> {
    fn act(&mut self, obs: &Observation) -> f64 {
        nn::actor_forward(self.0, obs).0
    }
}

/// One PPO update. On a non-finite loss the parameters and optimizer are restored.
pub fn train_update(
    batch: &RolloutBatch,
    params: &mut PolicyParams,
    opt: &mut Adam,
    cfg: &PpoConfig,
    params_version: u64,
    episode: u64,
    rng: &mut ChaCha8Rng,
) -> Result<TrainMetrics, PpoError> {
    if batch.params_version != params_version {
        return Err(PpoError::StaleBatch { batch: batch.params_version, agent: params_version });
    }
    if batch.is_empty() {
        return Err(PpoError::EmptyBatch);
    }
    let lr = cfg.lr_schedule.lr_at(episode);
    let (mut advantages, returns) = batch.advantages(cfg.gamma, cfg.gae_lambda);
    if cfg.normalize_advantages && advantages.len() > 1 {
        let n = advantages.len() as f64;
        let mean = advantages.iter().sum::<f64>() / n;
        let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt() + 1e-8;
        advantages.iter_mut().for_each(|a| *a = (*a - mean) / std);
    }

    let snapshot = (params.clone(), opt.clone());
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut policy_loss = 0.0;
    let mut value_loss = 0.0;
    let mut grad_norm = 0.0;
    let mut updates = 0usize;
    let mut skipped = 0u64;
    for _ in 0..cfg.epochs_per_batch {
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch_size) {
            let mb = Minibatch::gather(params, batch, idx, &advantages, &returns);
            let mut out = ppo_loss(params, &mb, cfg.clip_eps, cfg.value_coeff, cfg.entropy_coeff);
            if !out.total.is_finite() {
                *params = snapshot.0;
                *opt = snapshot.1;
                return Err(PpoError::NonFiniteLoss);
            }
            let norm = out.grads.global_norm();
            if norm > cfg.grad_clip_norm {
                out.grads.scale_all(cfg.grad_clip_norm / norm);
            }
            if opt.step(params, &out.grads, lr).is_err() {
                skipped += 1;
                continue;
            }
            policy_loss += -out.surrogate;
            value_loss += out.value_loss;
            grad_norm += norm;
            updates += 1;
        }
    }
    let denom = updates.max(1) as f64;

    // Diagnostics against the final parameters over the whole batch.
    let all: Vec<usize> = (0..batch.len()).collect();
    let full = Minibatch::gather(params, batch, &all, &advantages, &returns);
    let last = ppo_loss(params, &full, cfg.clip_eps, cfg.value_coeff, cfg.entropy_coeff);

    Ok(TrainMetrics {
        episode,
        mean_episode_reward: batch.mean_episode_reward(),
        policy_loss: policy_loss / denom,
        value_loss: value_loss / denom,
        entropy: last.entropy,
        approx_kl: last.approx_kl,
        lr,
        clip_fraction: last.clip_fraction,
        action_std: params.std(),
        grad_norm: grad_norm / denom,
        skipped_steps: skipped,
        aborted: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Healthy,
    LikelyDivergent,
}

/// Outcome of the early-pruning check, with the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub verdict: Verdict,
    pub entropy_slope: f64,
    pub kl_spikes: usize,
    pub first_mean_reward: f64,
    pub best_windowed_mean_reward: f64,
}

/// Width of the reward moving average used by [`divergence_verdict`].
pub const REWARD_SMOOTHING: usize = 5;

/// Early pruning heuristic over the first `window_episodes` of training.
///
/// Divergent if entropy trends upward (least-squares slope > 0), approximate KL
/// exceeds 0.02 three or more times, or no 5-episode reward average after the
/// first beats the first one.
pub fn divergence_verdict(history: &[TrainMetrics], window_episodes: usize) -> Result<DivergenceReport, PpoError> {
    if window_episodes < REWARD_SMOOTHING + 1 || history.len() < window_episodes {
        return Err(PpoError::ShortHistory { have: history.len(), need: window_episodes.max(REWARD_SMOOTHING + 1) });
    }
    let w = &history[..window_episodes];
    let entropy_slope = least_squares_slope(&w.iter().map(|m| m.entropy).collect::<Vec<_>>());
    let kl_spikes = w.iter().filter(|m| m.approx_kl > KL_SPIKE_THRESHOLD).count();
    let rewards: Vec<f64> = w.iter().map(|m| m.mean_episode_reward).collect();
    let means: Vec<f64> =
        rewards.windows(REWARD_SMOOTHING).map(|r| r.iter().sum::<f64>() / REWARD_SMOOTHING as f64).collect();
    let first = means[0];
    let best = means[1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let divergent = entropy_slope > 0.0 || kl_spikes >= 3 || best <= first;
    Ok(DivergenceReport {
        verdict: if divergent { Verdict::LikelyDivergent } else { Verdict::Healthy },
        entropy_slope,
        kl_spikes,
        first_mean_reward: first,
        best_windowed_mean_reward: best,
    })
}

fn least_squares_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (v - my);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetConfig;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn gae_single_step() {
        let (a, r) = compute_gae(&[1.0], &[0.0], 0.0, 0.99, 0.95);
        assert_eq!((a[0], r[0]), (1.0, 1.0));
    }

    #[test]
    fn gae_myopic_limit() {
        let rewards = [0.5, -1.0, 2.0];
        let values = [0.1, 0.2, -0.3];
        let (a, _) = compute_gae(&rewards, &values, 7.0, 0.0, 0.95);
        for i in 0..3 {
            assert_eq!(a[i], rewards[i] - values[i]);
        }
    }

    #[test]
    fn gae_lambda_one_is_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let r: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
            let boot = rng.random_range(-1.0..1.0);
            let (a, ret) = compute_gae(&r, &v, boot, 0.97, 1.0);
            for t in 0..20 {
                let mut g = 0.97f64.powi((20 - t) as i32) * boot;
                for k in t..20 {
                    g += 0.97f64.powi((k - t) as i32) * r[k];
                }
                assert!((a[t] - (g - v[t])).abs() < 1e-10);
                assert!((ret[t] - g).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn clipped_term_examples() {
        assert!((clipped_term(2.0, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_term(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
        assert_eq!(clipped_term(1.0, 0.37, 0.2), 0.37);
    }

    #[test]
    fn lr_schedule_breakpoints() {
        let s = LrSchedule::paper_scale();
        assert_eq!(s.lr_at(0), 5e-5);
        assert_eq!(s.lr_at(1280), 5e-6);
        assert_eq!(s.lr_at(2048), 1e-7);
        assert!((s.lr_at(640) - 2.75e-5).abs() < 1e-18);
        assert_eq!(s.lr_at(5000), 1e-7);
        let bad = LrSchedule { breakpoints: vec![(0.0, 1.0), (0.0, 2.0)] };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn approx_kl_estimates_gaussian_kl() {
        assert_eq!(approx_kl(&[-1.0, -2.0], &[-1.0, -2.0]), 0.0);
        // KL(N(0,1) ‖ N(0.1,1)) = 0.1²/2 = 0.005.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let old = Normal::new(0.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..100_000).map(|_| old.sample(&mut rng)).collect();
        let lo: Vec<f64> = xs.iter().map(|&x| nn::log_prob(x, 0.0, 0.0)).collect();
        let ln: Vec<f64> = xs.iter().map(|&x| nn::log_prob(x, 0.1, 0.0)).collect();
        let kl = approx_kl(&lo, &ln);
        assert!((kl - 0.005).abs() / 0.005 < 0.1, "kl = {kl}");
    }

    fn small_params(seed: u64) -> PolicyParams {
        let cfg = NetConfig { policy_hidden: vec![8, 8], value_hidden: vec![8, 8], ..NetConfig::default() };
        PolicyParams::new(&cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn ratio_one_objective_is_mean_advantage() {
        let p = small_params(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs: Vec<Observation> = (0..16)
            .map(|_| Observation { q: rng.random_range(-0.2..0.2), f: rng.random_range(-50.0..50.0), ..Default::default() })
            .collect();
        let x = p.input_batch(obs.iter());
        let means = p.actor.forward(x.view());
        let actions: Vec<f64> = (0..16).map(|i| means[[i, 0]] + rng.random_range(-0.2..0.2)).collect();
        let lp: Vec<f64> = (0..16).map(|i| nn::log_prob(actions[i], means[[i, 0]], p.log_std[0])).collect();
        let adv: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mb = Minibatch { x, actions, logprob_old: lp, advantages: adv.clone(), returns: vec![0.0; 16] };
        let out = ppo_loss(&p, &mb, 0.2, 0.5, 0.0);
        let mean_adv = adv.iter().sum::<f64>() / 16.0;
        assert!((out.surrogate - mean_adv).abs() < 1e-12);
        assert!(out.approx_kl.abs() < 1e-12);
        assert_eq!(out.clip_fraction, 0.0);
    }

    fn verdict_history(entropy: impl Fn(usize) -> f64, kl: impl Fn(usize) -> f64, reward: impl Fn(usize) -> f64) -> Vec<TrainMetrics> {
        (0..90)
            .map(|i| TrainMetrics {
                episode: i as u64,
                mean_episode_reward: reward(i),
                policy_loss: 0.0,
                value_loss: 0.0,
                entropy: entropy(i),
                approx_kl: kl(i),
                lr: 5e-5,
                clip_fraction: 0.0,
                action_std: 0.2,
                grad_norm: 0.0,
                skipped_steps: 0,
                aborted: false,
            })
            .collect()
    }

    #[test]
    fn verdict_cases() {
        let healthy = verdict_history(|i| -0.5 - 0.01 * i as f64, |_| 0.001, |i| -5.0 + 0.04 * i as f64);
        assert_eq!(divergence_verdict(&healthy, 90).unwrap().verdict, Verdict::Healthy);
        let rising = verdict_history(|i| -0.5 + 0.01 * i as f64, |_| 0.001, |i| -5.0 + 0.04 * i as f64);
        assert_eq!(divergence_verdict(&rising, 90).unwrap().verdict, Verdict::LikelyDivergent);
        let spiky = verdict_history(
            |i| -0.5 - 0.01 * i as f64,
            |i| if i % 30 == 10 { 0.05 } else { 0.001 },
            |i| -5.0 + 0.04 * i as f64,
        );
        let r = divergence_verdict(&spiky, 90).unwrap();
        assert_eq!((r.verdict, r.kl_spikes), (Verdict::LikelyDivergent, 3));
        let flat = verdict_history(|i| -0.5 - 0.01 * i as f64, |_| 0.001, |i| -5.0 - 0.01 * i as f64);
        assert_eq!(divergence_verdict(&flat, 90).unwrap().verdict, Verdict::LikelyDivergent);
        assert!(divergence_verdict(&healthy[..50], 90).is_err());
    }

    #[test]
    fn stale_batch_rejected() {
        let mut p = small_params(0);
        let mut opt = Adam::new(&p);
        let batch = RolloutBatch { params_version: 3, ..RolloutBatch::default() };
        let err = train_update(&batch, &mut p, &mut opt, &PpoConfig::default(), 4, 0, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(err.unwrap_err(), PpoError::StaleBatch { batch: 3, agent: 4 });
    }
}
