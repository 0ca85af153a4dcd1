use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use seatwin::env::EpisodeLog;
use seatwin::harness::metrics::replay;
use seatwin::harness::EvalReport;

fn seatwin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seatwin")).args(args).output().expect("spawn seatwin")
}

fn ok(args: &[&str]) -> String {
    let out = seatwin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn train(out: &Path) {
    ok(&["train", "--seed", "3", "--episodes", "3", "--out", out.to_str().unwrap()]);
}

#[test]
fn train_is_bit_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    train(&out);
    let first = tmp.path().join("first");
    fs::rename(out.join("desk-3"), &first).unwrap();
    train(&out);
    let second = out.join("desk-3");
    for f in ["metrics.jsonl", "episodes.jsonl", "evals.jsonl", "checkpoint.ckpt", "config.toml"] {
        let x = fs::read(first.join(f)).unwrap();
        let y = fs::read(second.join(f)).unwrap();
        assert!(!x.is_empty(), "{f} is empty");
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn eval_replay_and_plot_data() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    train(root);
    let run = root.join("desk-3");
    let ckpt = run.join("checkpoint.ckpt");
    let evals = root.join("evals");
    ok(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--trajectory", "sine:0.2,50", "--out", evals.to_str().unwrap()]);

    let log_path = evals.join("eval_log.jsonl");
    let inline: EvalReport = serde_json::from_str(&fs::read_to_string(evals.join("eval_report.json")).unwrap()).unwrap();
    let stdout = ok(&["replay", "--log", log_path.to_str().unwrap()]);
    assert!(!stdout.contains("mismatch"));
    let replayed = replay(&EpisodeLog::read_jsonl(&log_path).unwrap()).unwrap();
    assert_eq!(replayed.report.mae, inline.mae);
    assert_eq!(replayed.report.bins, inline.bins);

    // Zero every logged reward: MAE is unaffected, the reward mismatch is flagged.
    let mut log = EpisodeLog::read_jsonl(&log_path).unwrap();
    for s in &mut log.steps {
        s.reward = 0.0;
    }
    let zeroed = root.join("zeroed.jsonl");
    log.write_jsonl(&zeroed).unwrap();
    let r = replay(&log).unwrap();
    assert_eq!(r.report.mae, inline.mae);
    assert_eq!(r.reward_mismatches, log.steps.len());
    assert!(!r.is_consistent());
    let out = seatwin(&["replay", "--log", zeroed.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("reward mismatch"));

    let plots = root.join("plots");
    ok(&["emit-plot-data", "--run", run.to_str().unwrap(), "--log", log_path.to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    let curves = fs::read_to_string(plots.join("training_curves.tsv")).unwrap();
    assert!(curves.starts_with("episode\ttotal_reward\tmae"));
    assert_eq!(curves.lines().count(), 1 + 3);
    let trace = fs::read_to_string(plots.join("tracking_trace.tsv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 2000);
}

#[test]
fn compare_chirp_writes_paired_error_columns() {
    let tmp = tempfile::tempdir().unwrap();
    train(tmp.path());
    let ckpt = tmp.path().join("desk-3/checkpoint.ckpt");
    let out = tmp.path().join("chirp");
    ok(&["compare-chirp", "--checkpoint", ckpt.to_str().unwrap(), "--duration", "10", "--out", out.to_str().unwrap()]);
    let tsv = fs::read_to_string(out.join("compare_chirp.tsv")).unwrap();
    let mut lines = tsv.lines();
    assert_eq!(lines.next().unwrap(), "t\tfreq_hz\tf_des\tf_drl\tf_pid\tabs_error_drl\tabs_error_pid");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split('\t').map(|c| c.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 1000);
    for r in &rows {
        assert!((0.05..=0.35 + 1e-12).contains(&r[1]));
        assert_eq!(r[5], (r[2] - r[3]).abs());
        assert_eq!(r[6], (r[2] - r[4]).abs());
    }
    for stem in ["chirp_drl", "chirp_pid"] {
        assert!(out.join(format!("{stem}_report.json")).exists());
    }
}

#[test]
fn bad_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.ckpt");
    let out = seatwin(&["eval", "--checkpoint", missing.to_str().unwrap(), "--seed", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ckpt"));

    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\n[plant]\nspring_stifness = 3.0\n").unwrap();
    let out = seatwin(&["train", "--config", cfg.to_str().unwrap(), "--episodes", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("spring_stifness"));

    let out = seatwin(&["train", "--episodes", "1"]);
    assert!(!out.status.success(), "training without a seed must fail");

    let garbage = tmp.path().join("garbage.ckpt");
    fs::write(&garbage, "SEATWIN-CKPT v99\n{}").unwrap();
    let out = seatwin(&["finetune", "--checkpoint", garbage.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("incompatible checkpoint version 99"));
}
