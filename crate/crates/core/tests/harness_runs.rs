//! End-to-end harness behavior: determinism across batch splits, report
//! serialization round-trips, and the correlation scan against its analytic
//! companions.

use std::f64::consts::PI;

use detloophole::counts::PairIndex;
use detloophole::harness::{
    counts_from_csv, report_from_json, report_to_csv, report_to_json,
    run_experiment_with_batches, scan_correlation, scan_to_csv, ExperimentConfig, Schedule,
};
use detloophole::inequalities::SettingQuadruple;
use detloophole::model::ModelVariant;

fn config(schedule: Schedule) -> ExperimentConfig {
    ExperimentConfig {
        variant: ModelVariant::Symmetric,
        quad: SettingQuadruple::chsh_optimal(),
        n_trials: 30_000,
        seed: 2024,
        schedule,
    }
}

#[test]
fn reports_are_byte_identical_across_batch_counts() {
    for schedule in [
        Schedule::FixedPair(PairIndex::ABPrime),
        Schedule::CycleQuadruple,
        Schedule::RandomQuadruple,
    ] {
        let cfg = config(schedule);
        let r1 = run_experiment_with_batches(&cfg, 1).unwrap();
        let j1 = report_to_json(&r1).unwrap();
        for batches in [2, 3, 8, 17] {
            let r = run_experiment_with_batches(&cfg, batches).unwrap();
            assert_eq!(j1, report_to_json(&r).unwrap(), "batches = {batches}");
        }
    }
}

#[test]
fn report_json_round_trips() {
    let report = run_experiment_with_batches(&config(Schedule::CycleQuadruple), 4).unwrap();
    let json = report_to_json(&report).unwrap();
    let back = report_from_json(&json).unwrap();
    assert_eq!(report, back);
}

#[test]
fn report_csv_counts_round_trip() {
    let report = run_experiment_with_batches(&config(Schedule::CycleQuadruple), 4).unwrap();
    let csv = report_to_csv(&report);
    let counts = counts_from_csv(&csv).unwrap();
    assert_eq!(report.counts, counts);
}

#[test]
fn random_schedule_splits_trials_roughly_evenly() {
    let report = run_experiment_with_batches(&config(Schedule::RandomQuadruple), 4).unwrap();
    let total: u64 = report.counts.pairs.iter().map(|p| p.n_trials).sum();
    assert_eq!(total, 4 * 30_000);
    for pair in &report.counts.pairs {
        // Binomial(120000, 1/4): 5 sigma is about 750.
        assert!((pair.n_trials as f64 - 30_000.0).abs() < 750.0);
    }
}

#[test]
fn symmetric_report_shows_chsh_but_not_ch_violation() {
    let report = run_experiment_with_batches(&config(Schedule::CycleQuadruple), 4).unwrap();
    let chsh = report.chsh.unwrap();
    assert!(chsh.violated, "S = {}", chsh.s);
    assert!((chsh.s.abs() - 2.0 * 2.0_f64.sqrt()).abs() < 0.1);
    assert!(!report.ch.violated);
    // Detection bookkeeping: per-side rate 3/4, joint 1/2 for the
    // symmetrized lossy model.
    assert!((report.detection.alice_rate - 0.75).abs() < 0.01);
    assert!((report.detection.joint_rate - 0.5).abs() < 0.01);
}

#[test]
fn scan_tracks_the_quantum_curve() {
    let thetas: Vec<f64> = (0..13).map(|k| PI * k as f64 / 12.0).collect();
    let scan = scan_correlation(ModelVariant::Symmetric, &thetas, 50_000, 31).unwrap();
    assert_eq!(scan.rows.len(), 13);
    for row in &scan.rows {
        assert!(
            (row.e_model - row.e_quantum).abs() < 5.0 * row.sigma,
            "theta = {}: {} vs {}",
            row.theta,
            row.e_model,
            row.e_quantum
        );
    }
    let csv = scan_to_csv(&scan);
    assert!(csv.starts_with("theta,e_model"));
    assert_eq!(csv.trim_end().lines().count(), 14);
}

#[test]
fn scan_is_reproducible() {
    let thetas = [0.0, 1.0, 2.0, PI];
    let s1 = scan_correlation(ModelVariant::PlanarSteiner, &thetas, 20_000, 5).unwrap();
    let s2 = scan_correlation(ModelVariant::PlanarSteiner, &thetas, 20_000, 5).unwrap();
    assert_eq!(scan_to_csv(&s1), scan_to_csv(&s2));
}

#[test]
fn rejects_empty_and_unsorted_grids() {
    assert!(scan_correlation(ModelVariant::Symmetric, &[], 100, 1).is_err());
    assert!(scan_correlation(ModelVariant::Symmetric, &[1.0, 0.5], 100, 1).is_err());
    assert!(scan_correlation(ModelVariant::Symmetric, &[0.0, 9.0], 100, 1).is_err());
}
