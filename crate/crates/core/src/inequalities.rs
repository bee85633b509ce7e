//! CHSH and Clauser-Horne inequality evaluation on counts, quantum count
//! predictions under finite detector efficiency, and the CH violation
//! threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counts::{CountValue, CountsTable, PairCounts, PairIndex};
use crate::geom::UnitVector3;

#[derive(Debug, Error, PartialEq)]
pub enum InequalityError {
    #[error("correlation undefined: no detected coincidences")]
    UndefinedCorrelation,
    #[error("correlation {0} outside [-1, 1]")]
    CorrelationOutOfRange(f64),
    #[error("CH threshold undefined: nonpositive coincidence combination {0}")]
    ThresholdUndefined(f64),
    #[error("efficiency {0} outside [0, 1]")]
    InvalidEfficiency(f64),
    #[error("detection probability {0} outside (0, 1]")]
    InvalidDetectionProbability(f64),
}

/// The four analyzer directions of a Bell test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettingQuadruple {
    pub a: UnitVector3,
    pub a_prime: UnitVector3,
    pub b: UnitVector3,
    pub b_prime: UnitVector3,
}

impl SettingQuadruple {
    pub fn new(a: UnitVector3, a_prime: UnitVector3, b: UnitVector3, b_prime: UnitVector3) -> Self {
        Self {
            a,
            a_prime,
            b,
            b_prime,
        }
    }

    /// Planar quadruple from azimuths in degrees.
    pub fn from_planar_degrees(a: f64, a_prime: f64, b: f64, b_prime: f64) -> Self {
        Self {
            a: UnitVector3::from_planar_degrees(a),
            a_prime: UnitVector3::from_planar_degrees(a_prime),
            b: UnitVector3::from_planar_degrees(b),
            b_prime: UnitVector3::from_planar_degrees(b_prime),
        }
    }

    /// The planar quadruple (0, 90, -135, 135) degrees: maximal CHSH
    /// violation (S = +2 sqrt 2 for E = -a.b) and, in this orientation,
    /// a positive CH coincidence combination so the threshold is defined.
    pub fn chsh_optimal() -> Self {
        Self::from_planar_degrees(0.0, 90.0, -135.0, 135.0)
    }

    pub fn pair_settings(&self, idx: PairIndex) -> (UnitVector3, UnitVector3) {
        let x = if idx.alice_primed() { self.a_prime } else { self.a };
        let y = if idx.bob_primed() { self.b_prime } else { self.b };
        (x, y)
    }

    pub fn is_planar(&self) -> bool {
        self.a.is_planar() && self.a_prime.is_planar() && self.b.is_planar() && self.b_prime.is_planar()
    }
}

/// Detector efficiencies for the two sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyModel {
    eta_a: f64,
    eta_b: f64,
}

impl EfficiencyModel {
    pub fn new(eta_a: f64, eta_b: f64) -> Result<Self, InequalityError> {
        for eta in [eta_a, eta_b] {
            if !(0.0..=1.0).contains(&eta) {
                return Err(InequalityError::InvalidEfficiency(eta));
            }
        }
        Ok(Self { eta_a, eta_b })
    }

    pub fn symmetric(eta: f64) -> Result<Self, InequalityError> {
        Self::new(eta, eta)
    }

    pub fn eta_a(&self) -> f64 {
        self.eta_a
    }

    pub fn eta_b(&self) -> f64 {
        self.eta_b
    }
}

/// CHSH statistic S = E(a,b) + E(a,b') + E(a',b) - E(a',b').
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshResult {
    /// Correlations in pair order (a,b), (a,b'), (a',b), (a',b').
    pub e: [f64; 4],
    pub s: f64,
    /// |S| > 2. The sign of S is an outcome relabeling, so only the
    /// magnitude is meaningful.
    pub violated: bool,
}

/// CH count inequality: lhs <= rhs for every locally generated count table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChResult {
    pub lhs: f64,
    pub rhs: f64,
    pub violated: bool,
}

/// Renormalized correlation (N++ + N-- - N+- - N-+) / (sum), estimated over
/// detected coincidences only.
pub fn renormalized_correlation<T: CountValue>(
    pair: &PairCounts<T>,
) -> Result<f64, InequalityError> {
    let sum = pair.coincidences();
    if sum <= 0.0 {
        return Err(InequalityError::UndefinedCorrelation);
    }
    Ok((pair.pp.to_f64() + pair.mm.to_f64() - pair.pm.to_f64() - pair.mp.to_f64()) / sum)
}

/// Evaluates the CHSH combination from four correlations.
pub fn chsh_value(
    e_ab: f64,
    e_ab_prime: f64,
    e_a_prime_b: f64,
    e_a_prime_b_prime: f64,
) -> Result<ChshResult, InequalityError> {
    let e = [e_ab, e_ab_prime, e_a_prime_b, e_a_prime_b_prime];
    for v in e {
        if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&v) {
            return Err(InequalityError::CorrelationOutOfRange(v));
        }
    }
    let s = e[0] + e[1] + e[2] - e[3];
    Ok(ChshResult {
        e,
        s,
        violated: s.abs() > 2.0,
    })
}

/// Brute-forces the binary identity behind the CH inequality:
/// with x = (1+a)/2, y = (1+b)/2 in {0,1},
/// ab + ab' + a'b - a'b' - 2 = 4 (xy + xy' + x'y - x'y' - (x + y)) <= 0
/// over all 16 outcome tuples.
pub fn binary_identity_check() -> bool {
    for bits in 0u8..16 {
        let x = (bits & 1) as i32;
        let xp = ((bits >> 1) & 1) as i32;
        let y = ((bits >> 2) & 1) as i32;
        let yp = ((bits >> 3) & 1) as i32;
        let lhs_xy = x * y + x * yp + xp * y - xp * yp - (x + y);
        if lhs_xy > 0 {
            return false;
        }
        let a = 2 * x - 1;
        let ap = 2 * xp - 1;
        let b = 2 * y - 1;
        let bp = 2 * yp - 1;
        let chsh = a * b + a * bp + ap * b - ap * bp;
        if chsh > 2 || chsh - 2 != 4 * lhs_xy {
            return false;
        }
    }
    true
}

/// CH inequality on raw counts:
/// N++(a,b) + N++(a,b') + N++(a',b) - N++(a',b') <= N+.(a) + N.+(b).
/// Singles are read from the (a, b) block of the table.
pub fn ch_evaluate<T: CountValue>(counts: &CountsTable<T>) -> ChResult {
    let lhs = counts.pair(PairIndex::AB).pp.to_f64()
        + counts.pair(PairIndex::ABPrime).pp.to_f64()
        + counts.pair(PairIndex::APrimeB).pp.to_f64()
        - counts.pair(PairIndex::APrimeBPrime).pp.to_f64();
    let rhs = counts.pair(PairIndex::AB).alice_plus_singles()
        + counts.pair(PairIndex::AB).bob_plus_singles();
    ChResult {
        lhs,
        rhs,
        violated: lhs > rhs,
    }
}

/// Singlet outcome probabilities: P++ = P-- = (1 - a.b)/4,
/// P+- = P-+ = (1 + a.b)/4, singles P+. = P.+ = 1/2.
fn singlet_p_plus_plus(x: &UnitVector3, y: &UnitVector3) -> f64 {
    (1.0 - x.dot(y)) / 4.0
}

/// Expected counts predicted by quantum mechanics for the singlet under
/// finite detector efficiencies, n_trials per setting pair.
pub fn quantum_predicted_counts(
    quad: &SettingQuadruple,
    eff: &EfficiencyModel,
    n_trials: f64,
) -> CountsTable<f64> {
    let (ea, eb) = (eff.eta_a(), eff.eta_b());
    let mut table = CountsTable::<f64>::default();
    for idx in PairIndex::ALL {
        let (x, y) = quad.pair_settings(idx);
        let p_anti = singlet_p_plus_plus(&x, &y); // P++ = P--
        let p_corr = (1.0 + x.dot(&y)) / 4.0; // P+- = P-+
        let both = ea * eb * n_trials;
        let a_only = ea * (1.0 - eb) * n_trials;
        let b_only = (1.0 - ea) * eb * n_trials;
        let none = (1.0 - ea) * (1.0 - eb) * n_trials;
        table.pairs[idx as usize] = PairCounts {
            n_trials,
            pp: p_anti * both,
            pm: p_corr * both,
            mp: p_corr * both,
            mm: p_anti * both,
            pn: 0.5 * a_only,
            mn: 0.5 * a_only,
            np: 0.5 * b_only,
            nm: 0.5 * b_only,
            nn: none,
        };
    }
    table
}

/// Detector efficiency above which quantum mechanics violates the CH
/// inequality at the given settings (symmetric efficiencies assumed):
/// eta > (P+. + P.+) / (P++(a,b) + P++(a,b') + P++(a',b) - P++(a',b')).
pub fn ch_threshold(quad: &SettingQuadruple) -> Result<f64, InequalityError> {
    let denom = singlet_p_plus_plus(&quad.a, &quad.b)
        + singlet_p_plus_plus(&quad.a, &quad.b_prime)
        + singlet_p_plus_plus(&quad.a_prime, &quad.b)
        - singlet_p_plus_plus(&quad.a_prime, &quad.b_prime);
    if denom <= 0.0 {
        return Err(InequalityError::ThresholdUndefined(denom));
    }
    Ok(1.0 / denom) // numerator P+. + P.+ = 1/2 + 1/2
}

fn planar_threshold(angles: &[f64; 3]) -> Option<f64> {
    let [ap, b, bp] = *angles;
    let denom = (2.0 - (b.cos() + bp.cos() + (ap - b).cos() - (ap - bp).cos())) / 4.0;
    if denom > 0.0 {
        Some(1.0 / denom)
    } else {
        None
    }
}

fn planar_quad_from_angles(angles: &[f64; 3]) -> SettingQuadruple {
    SettingQuadruple {
        a: UnitVector3::from_planar_angle(0.0),
        a_prime: UnitVector3::from_planar_angle(angles[0]),
        b: UnitVector3::from_planar_angle(angles[1]),
        b_prime: UnitVector3::from_planar_angle(angles[2]),
    }
}

fn refine<const N: usize>(
    mut best: [f64; N],
    mut best_val: f64,
    eval: impl Fn(&[f64; N]) -> Option<f64>,
    mut step: f64,
) -> ([f64; N], f64) {
    while step > 1e-7 {
        let mut improved = false;
        for i in 0..N {
            for delta in [step, -step] {
                let mut cand = best;
                cand[i] += delta;
                if let Some(v) = eval(&cand) {
                    if v < best_val {
                        best_val = v;
                        best = cand;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (best, best_val)
}

/// Minimizes the CH threshold over planar quadruples (a fixed at azimuth 0
/// by rotational freedom): coarse grid scan, then coordinate refinement.
/// The optimum sits at the CHSH-optimal settings, eta = 2 / (1 + sqrt 2).
pub fn optimize_threshold() -> (f64, SettingQuadruple) {
    let step = 5.0_f64.to_radians();
    let n = 72;
    let mut best = [0.0; 3];
    let mut best_val = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let angles = [i as f64 * step, j as f64 * step, k as f64 * step];
                if let Some(v) = planar_threshold(&angles) {
                    if v < best_val {
                        best_val = v;
                        best = angles;
                    }
                }
            }
        }
    }
    let (best, best_val) = refine(best, best_val, planar_threshold, step);
    (best_val, planar_quad_from_angles(&best))
}

/// Falsification search over full-sphere quadruples (a fixed along +z).
/// Expected to find nothing below the planar optimum.
pub fn optimize_threshold_full_sphere(seed: u64, restarts: usize) -> (f64, SettingQuadruple) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    // Parameters: (theta, phi) for a', b, b'; a pinned to +z.
    let eval = |p: &[f64; 6]| -> Option<f64> {
        let quad = SettingQuadruple {
            a: UnitVector3::from_spherical(0.0, 0.0),
            a_prime: UnitVector3::from_spherical(p[0], p[1]),
            b: UnitVector3::from_spherical(p[2], p[3]),
            b_prime: UnitVector3::from_spherical(p[4], p[5]),
        };
        ch_threshold(&quad).ok()
    };

    let mut best_val = f64::INFINITY;
    let mut best_params = [0.0; 6];
    for _ in 0..restarts {
        let start: [f64; 6] = [
            rng.random::<f64>() * std::f64::consts::PI,
            rng.random::<f64>() * 2.0 * std::f64::consts::PI,
            rng.random::<f64>() * std::f64::consts::PI,
            rng.random::<f64>() * 2.0 * std::f64::consts::PI,
            rng.random::<f64>() * std::f64::consts::PI,
            rng.random::<f64>() * 2.0 * std::f64::consts::PI,
        ];
        let start_val = match eval(&start) {
            Some(v) => v,
            None => continue,
        };
        let (params, val) = refine(start, start_val, eval, 0.2);
        if val < best_val {
            best_val = val;
            best_params = params;
        }
    }
    let quad = SettingQuadruple {
        a: UnitVector3::from_spherical(0.0, 0.0),
        a_prime: UnitVector3::from_spherical(best_params[0], best_params[1]),
        b: UnitVector3::from_spherical(best_params[2], best_params[3]),
        b_prime: UnitVector3::from_spherical(best_params[4], best_params[5]),
    };
    (best_val, quad)
}

/// Coincidence-conditioned ("relevant") efficiency,
/// mean(eta_A eta_B) / mean(eta_A) = p / ((p + 1) / 2) for the symmetrized
/// model with lossy-side mean detection probability p.
pub fn relevant_efficiency(p: f64) -> Result<f64, InequalityError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(InequalityError::InvalidDetectionProbability(p));
    }
    Ok(p / (0.5 * (p + 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn renormalized_correlation_cases() {
        let anti = PairCounts::<u64> {
            n_trials: 10_000,
            pm: 5000,
            mp: 5000,
            ..Default::default()
        };
        assert_eq!(renormalized_correlation(&anti).unwrap(), -1.0);

        let flat = PairCounts::<u64> {
            n_trials: 4000,
            pp: 1000,
            pm: 1000,
            mp: 1000,
            mm: 1000,
            ..Default::default()
        };
        assert_eq!(renormalized_correlation(&flat).unwrap(), 0.0);

        let empty = PairCounts::<u64>::default();
        assert_eq!(
            renormalized_correlation(&empty),
            Err(InequalityError::UndefinedCorrelation)
        );
    }

    #[test]
    fn chsh_algebraic_cases() {
        let max = chsh_value(1.0, 1.0, 1.0, -1.0).unwrap();
        assert_eq!(max.s, 4.0);
        assert!(max.violated);

        let boundary = chsh_value(-1.0, -1.0, -1.0, -1.0).unwrap();
        assert_eq!(boundary.s, -2.0);
        assert!(!boundary.violated);

        assert!(chsh_value(1.5, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn chsh_quantum_optimum() {
        let quad = SettingQuadruple::from_planar_degrees(0.0, 90.0, 45.0, -45.0);
        let e: Vec<f64> = PairIndex::ALL
            .iter()
            .map(|&i| {
                let (x, y) = quad.pair_settings(i);
                -x.dot(&y)
            })
            .collect();
        let r = chsh_value(e[0], e[1], e[2], e[3]).unwrap();
        assert!((r.s.abs() - 2.0 * 2.0_f64.sqrt()).abs() < 1e-12);
        assert!(r.violated);
    }

    #[test]
    fn binary_identity_holds() {
        assert!(binary_identity_check());
    }

    #[test]
    fn ch_on_zero_counts() {
        let counts = CountsTable::<u64>::default();
        let r = ch_evaluate(&counts);
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.rhs, 0.0);
        assert!(!r.violated);
    }

    #[test]
    fn quantum_counts_limits() {
        let eff = EfficiencyModel::symmetric(1.0).unwrap();
        // Aligned bases at theta = pi: perfect anticorrelation, N++ = N/2.
        let quad = SettingQuadruple::from_planar_degrees(0.0, 90.0, 180.0, 180.0);
        let t = quantum_predicted_counts(&quad, &eff, 1e6);
        assert!((t.pair(PairIndex::AB).pp - 5e5).abs() < 1e-6);

        // theta = pi/2: N++ = N/4.
        let quad = SettingQuadruple::from_planar_degrees(0.0, 90.0, 90.0, -90.0);
        let t = quantum_predicted_counts(&quad, &eff, 1e6);
        assert!((t.pair(PairIndex::AB).pp - 2.5e5).abs() < 1e-6);

        // Dead Alice detector: no coincidences, no Alice singles.
        let eff = EfficiencyModel::new(0.0, 1.0).unwrap();
        let t = quantum_predicted_counts(&quad, &eff, 1e6);
        assert_eq!(t.pair(PairIndex::AB).pp, 0.0);
        assert_eq!(t.pair(PairIndex::AB).alice_plus_singles(), 0.0);
    }

    #[test]
    fn quantum_counts_are_conserved() {
        let eff = EfficiencyModel::new(0.7, 0.9).unwrap();
        let quad = SettingQuadruple::chsh_optimal();
        let t = quantum_predicted_counts(&quad, &eff, 1e6);
        assert!(t.validate(1e-6).is_ok());
    }

    #[test]
    fn threshold_at_optimal_quadruple() {
        let quad = SettingQuadruple::chsh_optimal();
        let eta = ch_threshold(&quad).unwrap();
        assert!((eta - 2.0 / (1.0 + 2.0_f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn threshold_degenerate_quadruple() {
        // a = a', b = b': only two effective settings, threshold >= 1.
        let quad = SettingQuadruple::from_planar_degrees(0.0, 0.0, 120.0, 120.0);
        let eta = ch_threshold(&quad).unwrap();
        assert!(eta >= 1.0);
    }

    #[test]
    fn threshold_undefined_signaled() {
        // The CHSH-optimal orientation with Bob's settings negated flips the
        // sign of the coincidence combination.
        let quad = SettingQuadruple::from_planar_degrees(0.0, 90.0, 45.0, -45.0);
        assert!(matches!(
            ch_threshold(&quad),
            Err(InequalityError::ThresholdUndefined(_))
        ));
    }

    #[test]
    fn relevant_efficiency_values() {
        assert!((relevant_efficiency(0.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(relevant_efficiency(1.0).unwrap(), 1.0);
        let planar = relevant_efficiency(2.0 / PI).unwrap();
        assert!((planar - 4.0 / (PI + 2.0)).abs() < 1e-15);
        assert!(relevant_efficiency(0.0).is_err());
        assert!(relevant_efficiency(1.5).is_err());
    }

    #[test]
    fn efficiency_model_validation() {
        assert!(EfficiencyModel::new(1.1, 0.5).is_err());
        assert!(EfficiencyModel::new(-0.1, 0.5).is_err());
        assert!(EfficiencyModel::new(0.0, 1.0).is_ok());
    }
}
