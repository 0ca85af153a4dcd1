use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seatwin::plant::RawSensors;
use seatwin::safety::{manual_reset, remote_shutoff, supervise, SafetyConfig, SafetyMode, SafetyState};
use seatwin::transport::{LinkState, TransportConfig};

fn any_mode() -> impl Strategy<Value = SafetyState> {
    prop_oneof![
        Just(SafetyState::default()),
        Just(SafetyState { mode: SafetyMode::BoundaryRecovery, latched_fault: None }),
        (0.0f64..10.0).prop_map(|t| remote_shutoff(&SafetyState::default(), t)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn applied_current_respects_mode_bounds(
        q in -0.5f64..0.5,
        f in -2500.0f64..2500.0,
        a in -10.0f64..10.0,
        s in any_mode(),
    ) {
        let cfg = SafetyConfig::default();
        let (applied, next) = supervise(q, f, a, 1.0, &s, &cfg);
        prop_assert!(applied.abs() <= cfg.supply_clamp_a);
        match next.mode {
            SafetyMode::Nominal => prop_assert!(applied.abs() <= cfg.action_sat_a),
            SafetyMode::BoundaryRecovery => {
                prop_assert_eq!(applied.abs(), cfg.restoring_current_a);
                prop_assert!(applied * q < 0.0);
            }
            SafetyMode::Estopped => prop_assert_eq!(applied, 0.0),
        }
        if q.abs() > cfg.estop_bound_rad || f.abs() > cfg.estop_force_n {
            prop_assert!(next.is_estopped());
        }
    }

    #[test]
    fn estop_latches_until_manual_reset(
        inputs in prop::collection::vec((-0.2f64..0.2, -100.0f64..100.0, -1.0f64..1.0), 1..50),
    ) {
        let cfg = SafetyConfig::default();
        let mut s = remote_shutoff(&SafetyState::default(), 0.0);
        let fault = s.latched_fault;
        for (q, f, a) in inputs {
            let (applied, next) = supervise(q, f, a, 0.5, &s, &cfg);
            prop_assert_eq!(applied, 0.0);
            prop_assert_eq!(next.latched_fault.map(|r| r.kind), fault.map(|r| r.kind));
            s = next;
        }
        let reset = manual_reset(&s, true);
        prop_assert_eq!(reset.state.mode, SafetyMode::Nominal);
        prop_assert!(reset.recalibrate_encoder);
    }

    #[test]
    fn reset_outside_estop_is_a_noop(recal in any::<bool>()) {
        let s = SafetyState::default();
        let out = manual_reset(&s, recal);
        prop_assert_eq!(out.state, s);
        prop_assert!(!out.recalibrate_encoder);
        prop_assert!(out.warning.is_some());
    }
}

#[test]
fn action_drop_rate_matches_probability() {
    let cfg = TransportConfig { action_drop_prob: 0.1, ..TransportConfig::default() };
    let mut link = LinkState::new(RawSensors::default());
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100_000 {
        link.send_action(0.1, &cfg, &mut rng);
    }
    let frac = link.counters.actions_dropped as f64 / link.counters.actions_sent as f64;
    assert!((frac - 0.1).abs() < 0.01, "drop fraction {frac}");
}

#[test]
fn observation_drop_rate_matches_probability() {
    let cfg = TransportConfig { obs_drop_prob: 0.1, ..TransportConfig::default() };
    let mut link = LinkState::new(RawSensors::default());
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..100_000 {
        link.receive(&cfg, &mut rng);
    }
    let frac = link.counters.obs_dropped as f64 / link.counters.obs_polled as f64;
    assert!((frac - 0.1).abs() < 0.01, "drop fraction {frac}");
}
