//! The quadrature integrals serve as the independent oracle: they must
//! agree with the closed forms at the 1e-6 contract, and the Monte Carlo
//! estimator must agree with the quadrature within 5 sigma.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use detloophole::geom::UnitVector3;
use detloophole::harness::{run_experiment, ExperimentConfig, Schedule};
use detloophole::inequalities::SettingQuadruple;
use detloophole::model::{correlation_no_loophole, ModelVariant};
use detloophole::quadrature::{expected_counts, expected_pair_probs, quadrature_correlation};

fn random_unit(rng: &mut ChaCha8Rng) -> UnitVector3 {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).sqrt();
    UnitVector3::new(s * phi.cos(), s * phi.sin(), z).unwrap()
}

#[test]
fn detected_correlation_matches_quantum_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for variant in [
        ModelVariant::Asymmetric,
        ModelVariant::Symmetric,
        ModelVariant::IndependentDetectors,
    ] {
        for _ in 0..40 {
            let a = random_unit(&mut rng);
            let b = random_unit(&mut rng);
            let e = quadrature_correlation(variant, &a, &b, 512).unwrap();
            assert!(
                (e + a.dot(&b)).abs() < 1e-6,
                "{variant:?}: E = {e}, -a.b = {}",
                -a.dot(&b)
            );
        }
    }
}

#[test]
fn planar_correlation_matches_quantum_on_random_angles() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..50 {
        let alpha: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let beta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let a = UnitVector3::from_planar_angle(alpha);
        let b = UnitVector3::from_planar_angle(beta);
        let e = quadrature_correlation(ModelVariant::PlanarSteiner, &a, &b, 512).unwrap();
        assert!((e + a.dot(&b)).abs() < 1e-6, "E = {e} at {alpha}, {beta}");
    }
}

#[test]
fn lossless_variant_matches_linear_form_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..50 {
        let a = random_unit(&mut rng);
        let b = random_unit(&mut rng);
        let e = quadrature_correlation(ModelVariant::NoLoophole, &a, &b, 512).unwrap();
        let expect = correlation_no_loophole(a.angle_to(&b)).unwrap();
        assert!((e - expect).abs() < 1e-6, "E = {e}, linear = {expect}");
    }
}

#[test]
fn monte_carlo_agrees_with_quadrature_within_5_sigma() {
    for (variant, seed) in [
        (ModelVariant::Asymmetric, 7u64),
        (ModelVariant::Symmetric, 8),
        (ModelVariant::IndependentDetectors, 9),
        (ModelVariant::PlanarSteiner, 10),
        (ModelVariant::NoLoophole, 11),
    ] {
        let quad = SettingQuadruple::from_planar_degrees(0.0, 90.0, 25.0, 205.0);
        let config = ExperimentConfig {
            variant,
            quad,
            n_trials: 200_000,
            seed,
            schedule: Schedule::FixedPair(detloophole::counts::PairIndex::AB),
        };
        let report = run_experiment(&config).unwrap();
        let (a, b) = (quad.a, quad.b);
        let oracle = quadrature_correlation(variant, &a, &b, 512).unwrap();
        let stats = report.pair_stats[0];
        let (e, sigma) = (stats.e.unwrap(), stats.sigma.unwrap());
        assert!(
            (e - oracle).abs() < 5.0 * sigma,
            "{variant:?}: MC {e} vs oracle {oracle} (sigma {sigma})"
        );
    }
}

#[test]
fn expected_counts_match_monte_carlo_frequencies() {
    // Full 3x3 joint distribution, every cell within 5 sigma.
    let quad = SettingQuadruple::chsh_optimal();
    let n: u64 = 200_000;
    for variant in [
        ModelVariant::Symmetric,
        ModelVariant::IndependentDetectors,
        ModelVariant::PlanarSteiner,
    ] {
        let config = ExperimentConfig {
            variant,
            quad,
            n_trials: n,
            seed: 99,
            schedule: Schedule::CycleQuadruple,
        };
        let report = run_experiment(&config).unwrap();
        let oracle = expected_counts(variant, &quad, n as f64, 512).unwrap();
        let sim = report.counts.to_f64();
        for k in 0..4 {
            let o = &oracle.pairs[k];
            let s = &sim.pairs[k];
            for (cell, (ov, sv)) in [
                (o.pp, s.pp), (o.pm, s.pm), (o.mp, s.mp), (o.mm, s.mm),
                (o.pn, s.pn), (o.mn, s.mn), (o.np, s.np), (o.nm, s.nm), (o.nn, s.nn),
            ]
            .into_iter()
            .enumerate()
            {
                let p = ov / n as f64;
                let sigma = (p * (1.0 - p) * n as f64).sqrt().max(1.0);
                assert!(
                    (sv - ov).abs() < 5.0 * sigma,
                    "{variant:?} pair {k} cell {cell}: sim {sv} vs oracle {ov}"
                );
            }
        }
    }
}

#[test]
fn expected_probs_reject_low_resolution() {
    assert!(expected_pair_probs(ModelVariant::Symmetric, 1.0, 8).is_err());
}
