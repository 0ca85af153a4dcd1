//! Tab-separated series for external plotting.

use std::fmt::Write;

use crate::env::EpisodeLog;
use crate::ppo::TrainMetrics;

use super::train::EpisodeRecord;

/// Reward, entropy and KL per update, joined with the episode's tracking error.
pub fn training_curves(metrics: &[TrainMetrics], episodes: &[EpisodeRecord]) -> String {
    let mut out = String::from("episode\ttotal_reward\tmae\tpolicy_loss\tvalue_loss\tentropy\tapprox_kl\tclip_fraction\taction_std\tlr\n");
    for m in metrics {
        let ep = episodes.iter().find(|e| e.episode == m.episode);
        let (reward, mae) = ep.map_or((f64::NAN, f64::NAN), |e| (e.summary.total_reward, e.summary.mae));
        let _ = writeln!(
            out,
            "{}\t{reward}\t{mae}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            m.episode, m.policy_loss, m.value_loss, m.entropy, m.approx_kl, m.clip_fraction, m.action_std, m.lr
        );
    }
    out
}

/// Desired vs. achieved force over one episode.
pub fn tracking_trace(log: &EpisodeLog) -> String {
    let mut out = String::from("t\tfreq_hz\tf_des\tf\tabs_error\tq_meas\taction_applied\n");
    for s in &log.steps {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.t,
            log.spec.instantaneous_frequency(s.t),
            s.f_des,
            s.f,
            (s.f_des - s.f).abs(),
            s.q_meas,
            s.action_applied
        );
    }
    out
}

/// Time and instantaneous frequency against both controllers' absolute error.
/// Rows stop at the shorter of the two logs.
pub fn chirp_comparison(drl: &EpisodeLog, pid: &EpisodeLog) -> String {
    let mut out = String::from("t\tfreq_hz\tf_des\tf_drl\tf_pid\tabs_error_drl\tabs_error_pid\n");
    for (a, b) in drl.steps.iter().zip(&pid.steps) {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            a.t,
            drl.spec.instantaneous_frequency(a.t),
            a.f_des,
            a.f,
            b.f,
            (a.f_des - a.f).abs(),
            (b.f_des - b.f).abs()
        );
    }
    out
}
