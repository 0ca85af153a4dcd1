use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use seatwin::env::Observation;
use seatwin::nn::{actor_forward, critic_forward, log_prob, sample_action, Adam, NetConfig, PolicyParams};
use seatwin::ppo::{
    ppo_loss, train_update, EpisodeSegment, LrSchedule, Minibatch, PpoConfig, RolloutBatch, RolloutStep,
};

fn small_net(seed: u64, init_log_std: f64) -> PolicyParams {
    let cfg = NetConfig { policy_hidden: vec![8, 8], value_hidden: vec![8, 8], init_log_std, ..NetConfig::default() };
    PolicyParams::new(&cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn random_obs(rng: &mut ChaCha8Rng) -> Observation {
    Observation {
        q: rng.random_range(-0.2..0.2),
        q_dot: rng.random_range(-1.0..1.0),
        q_ddot: rng.random_range(-10.0..10.0),
        f: rng.random_range(-80.0..80.0),
        f_des: rng.random_range(-50.0..50.0),
    }
}

fn random_minibatch(params: &PolicyParams, n: usize, rng: &mut ChaCha8Rng) -> Minibatch {
    let obs: Vec<Observation> = (0..n).map(|_| random_obs(rng)).collect();
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut actions = Vec::new();
    let mut logprob_old = Vec::new();
    for o in &obs {
        let (mean, log_std) = actor_forward(params, o);
        let a = mean + log_std.exp() * noise.sample(rng);
        actions.push(a);
        // Old policy slightly off, so some ratios land outside the clip range.
        logprob_old.push(log_prob(a, mean, log_std) + rng.random_range(-0.4..0.4));
    }
    Minibatch {
        x: params.input_batch(obs.iter()),
        actions,
        logprob_old,
        advantages: (0..n).map(|_| noise.sample(rng)).collect(),
        returns: (0..n).map(|_| noise.sample(rng)).collect(),
    }
}

#[test]
fn loss_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = small_net(1, -0.5);
    let mb = random_minibatch(&params, 32, &mut rng);
    let (clip, vc, ec) = (0.2, 0.5, 0.01);
    let analytic = ppo_loss(&params, &mb, clip, vc, ec).grads;
    let h = 1e-6;
    let mut worst = 0.0f64;
    let n_tensors = params.tensors().len();
    for t in 0..n_tensors {
        let len = params.tensors()[t].len();
        for j in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[t][j] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t][j] -= h;
            let fd = (ppo_loss(&plus, &mb, clip, vc, ec).total - ppo_loss(&minus, &mb, clip, vc, ec).total) / (2.0 * h);
            let g = analytic.tensors()[t][j];
            worst = worst.max((g - fd).abs() / fd.abs().max(1.0));
        }
    }
    assert!(worst < 1e-4, "worst relative gradient error {worst}");
}

fn bandit_batch(params: &PolicyParams, version: u64, n: usize, rng: &mut ChaCha8Rng) -> RolloutBatch {
    let obs = Observation::default();
    let mut batch = RolloutBatch { params_version: version, ..RolloutBatch::default() };
    for i in 0..n {
        let (mean, log_std) = actor_forward(params, &obs);
        let (a, lp) = sample_action(mean, log_std.exp(), rng);
        let r = -(a - 3.0).powi(2);
        batch.steps.push(RolloutStep {
            obs,
            action: a,
            logprob_old: lp,
            reward: r,
            value_old: critic_forward(params, &obs),
            done: true,
        });
        batch.episodes.push(EpisodeSegment { start: i, len: 1, bootstrap_value: 0.0, total_reward: r });
    }
    batch
}

fn bandit_cfg() -> PpoConfig {
    PpoConfig { lr_schedule: LrSchedule { breakpoints: vec![(0.0, 3e-3)] }, ..PpoConfig::default() }
}

#[test]
fn bandit_mean_moves_to_optimum() {
    let cfg = bandit_cfg();
    let mut params = small_net(2, 0.0);
    let mut opt = Adam::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for version in 0..200 {
        let batch = bandit_batch(&params, version, 512, &mut rng);
        train_update(&batch, &mut params, &mut opt, &cfg, version, version, &mut rng).unwrap();
    }
    let mean = actor_forward(&params, &Observation::default()).0;
    assert!((mean - 3.0).abs() < 0.2, "final mean {mean}");
}

#[test]
fn zero_advantages_leave_actor_unchanged() {
    let cfg = PpoConfig { entropy_coeff: 0.0, ..bandit_cfg() };
    let mut params = small_net(3, -1.0);
    let before = params.clone();
    let mut opt = Adam::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut batch = bandit_batch(&params, 0, 256, &mut rng);
    for s in &mut batch.steps {
        s.obs = random_obs(&mut rng);
        s.reward = 0.0;
        s.value_old = 0.0;
    }
    train_update(&batch, &mut params, &mut opt, &cfg, 0, 0, &mut rng).unwrap();
    assert_eq!(params.actor, before.actor);
    assert_eq!(params.log_std, before.log_std);
    assert_ne!(params.critic, before.critic);
}

#[test]
fn updates_are_deterministic_given_seed() {
    let cfg = bandit_cfg();
    let run = || {
        let mut params = small_net(5, -0.5);
        let mut opt = Adam::new(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut metrics = Vec::new();
        for version in 0..5 {
            let batch = bandit_batch(&params, version, 512, &mut rng);
            metrics.push(train_update(&batch, &mut params, &mut opt, &cfg, version, version, &mut rng).unwrap());
        }
        (params, metrics)
    };
    assert_eq!(run(), run());
}
