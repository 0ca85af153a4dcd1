use std::sync::OnceLock;

use seatwin::harness::train::{episodes_to_threshold, finetune_trainer, reward_threshold, FinetuneOptions};
use seatwin::harness::{Checkpoint, ExperimentConfig, Preset, Trainer};

const REFERENCE_EPISODES: usize = 120;

struct Reference {
    ckpt: Checkpoint,
    rewards: Vec<f64>,
}

/// One from-scratch run shared by every test in this file.
fn reference() -> &'static Reference {
    static REF: OnceLock<Reference> = OnceLock::new();
    REF.get_or_init(|| {
        let mut cfg = ExperimentConfig::preset(Preset::Desk, 21);
        cfg.eval.every_episodes = 0;
        let mut t = Trainer::new(cfg).unwrap();
        t.train(REFERENCE_EPISODES).unwrap();
        Reference { ckpt: t.checkpoint(), rewards: t.episode_rewards() }
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn recalibrate_zeroes_encoder_offset() {
    let mut ckpt = reference().ckpt.clone();
    ckpt.encoder_offset = 0.1;

    let keep = FinetuneOptions { recalibrate: false, fresh_schedule: false };
    let mut t = finetune_trainer(ckpt.clone(), None, keep).unwrap();
    let (rec, _) = t.run_episode().unwrap();
    assert_eq!(rec.summary.encoder_offset, 0.1);

    let recal = FinetuneOptions { recalibrate: true, fresh_schedule: false };
    let mut t = finetune_trainer(ckpt, None, recal).unwrap();
    let (rec, _) = t.run_episode().unwrap();
    assert_eq!(rec.summary.encoder_offset, 0.0);
}

#[test]
fn fresh_schedule_restarts_learning_rate() {
    let ckpt = reference().ckpt.clone();
    let mut t = finetune_trainer(ckpt.clone(), None, FinetuneOptions { recalibrate: false, fresh_schedule: true }).unwrap();
    let (_, m) = t.run_episode().unwrap();
    assert_eq!(m.unwrap().lr, ckpt.config.ppo.lr_schedule.lr_at(0));

    let mut t = finetune_trainer(ckpt.clone(), None, FinetuneOptions { recalibrate: false, fresh_schedule: false }).unwrap();
    let (_, m) = t.run_episode().unwrap();
    assert_eq!(m.unwrap().lr, ckpt.config.ppo.lr_schedule.lr_at(REFERENCE_EPISODES as u64));
}

#[test]
fn converged_policy_holds_its_reward() {
    let r = reference();
    let level = mean(&r.rewards[r.rewards.len() - 20..]);
    let mut t = finetune_trainer(r.ckpt.clone(), None, FinetuneOptions { recalibrate: false, fresh_schedule: false }).unwrap();
    t.cfg.eval.every_episodes = 0;
    t.train(20).unwrap();
    let after = mean(&t.episode_rewards());
    assert!((after - level).abs() <= 0.1 * level.abs(), "checkpointed {level:.5}, after finetune {after:.5}");
}

#[test]
fn finetune_after_slip_reaches_threshold_sooner_than_scratch() {
    let r = reference();
    let threshold = reward_threshold(&r.rewards).unwrap();
    let scratch = episodes_to_threshold(&r.rewards, threshold).expect("reference reaches its own threshold");

    // Encoder slipped by 0.1 rad while the policy was running; the operator recalibrates.
    let mut ckpt = r.ckpt.clone();
    ckpt.encoder_offset = 0.1;
    let mut t = finetune_trainer(ckpt, None, FinetuneOptions { recalibrate: true, fresh_schedule: true }).unwrap();
    t.cfg.eval.every_episodes = 0;
    t.train(20).unwrap();
    let rewards = t.episode_rewards();
    let finetune = episodes_to_threshold(&rewards, threshold).expect("finetune reaches the threshold");
    assert!(finetune < scratch, "finetune {finetune} vs scratch {scratch} episodes");
}
