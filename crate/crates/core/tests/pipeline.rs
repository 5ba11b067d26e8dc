use chrono::{TimeZone, Utc};
use pqn_core::channel::{delivered_state, delivered_through, FiberChannel};
use pqn_core::chsh::{
    chsh_from_matrix, chsh_ideal, expected_matrix, linear_grid, read_sweep_csv, settings_from_user, simulate_matrix,
    sweep_angular_difference, write_sweep_csv, SweepConfig, SweepTable,
};
use pqn_core::compensation::{compensator_unitary, ControllerSetting, optimize_compensation, OptimizerOptions};
use pqn_core::counting::{DetectionModel, SourceConfig};
use pqn_core::polarization::{fidelity, make_psi_plus};
use pqn_core::{AngleDeg, LocalUnitary};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t0() -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Large exposures make the rounded expected counts track the analytic curve.
    #[test]
    fn expected_counts_follow_closed_form(v in 0.3f64..=1.0, a in -90.0f64..90.0, delta in 0.0f64..=90.0) {
        let src = SourceConfig { visibility: v, ..SourceConfig::default() };
        let state = delivered_through(&src, &LocalUnitary::identity(), &LocalUnitary::identity()).unwrap();
        let settings = settings_from_user(AngleDeg::new(a), AngleDeg::new(a + delta));
        let model = DetectionModel::deployed(&src, 1.0);
        let m = expected_matrix(&state, &settings, &model, 1e7, t0()).unwrap();
        let r = chsh_from_matrix(&m, t0()).unwrap();
        let want = chsh_ideal(v, AngleDeg::new(delta)).unwrap();
        prop_assert!((r.s_value - want).abs() < 1e-5, "{} vs {}", r.s_value, want);
    }

    #[test]
    fn sigma_s_is_nonnegative(seed in any::<u64>(), delta in 0.0f64..=90.0) {
        let src = SourceConfig::default();
        let state = delivered_through(&src, &LocalUnitary::identity(), &LocalUnitary::identity()).unwrap();
        let model = DetectionModel::deployed(&src, 0.0631);
        let settings = settings_from_user(AngleDeg::ZERO, AngleDeg::new(delta));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = simulate_matrix(&state, &settings, &model, 10.0, t0(), &mut rng).unwrap();
        let r = chsh_from_matrix(&m, t0()).unwrap();
        prop_assert!(r.sigma_s > 0.0 && r.sigma_s.is_finite());
        prop_assert!(r.s_value <= 4.0);
    }
}

#[test]
fn drifted_link_is_restored_by_compensation() {
    let mut ch = FiberChannel::deployed(11);
    ch.advance_drift(6.0 * 3600.0).unwrap();
    let src = SourceConfig { visibility: 1.0, ..SourceConfig::default() };
    let raw = delivered_state(&src, &ch, &LocalUnitary::identity()).unwrap();
    let report = optimize_compensation(&ch, &src, ControllerSetting::ZERO, &OptimizerOptions::default()).unwrap();
    assert!(report.converged);
    let fixed = delivered_state(&src, &ch, &compensator_unitary(&report.setting)).unwrap();
    let f_raw = fidelity(&raw, &make_psi_plus()).unwrap();
    let f_fixed = fidelity(&fixed, &make_psi_plus()).unwrap();
    assert!(f_fixed > 1.0 - 1e-5, "{f_fixed}");
    assert!(f_fixed >= f_raw);
}

#[test]
fn sweep_table_survives_csv() {
    let pts = sweep_angular_difference(&SweepConfig::default(), &linear_grid(0.0, 90.0, 19)).unwrap();
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &pts).unwrap();
    let back = read_sweep_csv(buf.as_slice()).unwrap();
    assert_eq!(back, pts);
    let table = SweepTable::new(back).unwrap();
    let peak = table.lookup(45.0);
    assert!((peak.s_value - 2.5).abs() < 0.15, "{}", peak.s_value);
}

#[test]
fn same_seed_same_session() {
    let src = SourceConfig::default();
    let state = delivered_through(&src, &LocalUnitary::identity(), &LocalUnitary::identity()).unwrap();
    let model = DetectionModel::deployed(&src, 0.0631);
    let settings = settings_from_user(AngleDeg::ZERO, AngleDeg::new(45.0));
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        simulate_matrix(&state, &settings, &model, 10.0, t0(), &mut rng).unwrap()
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}
