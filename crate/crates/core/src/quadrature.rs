//! Exact quadrature oracles for the model's closed-form quantities.
//!
//! Two routes are used, both independent of the Monte Carlo path:
//!
//! * a midpoint rule on a uniform (eta, phi) grid in the frame with Bob's
//!   setting along +z, the parametrization in which the detected-sample
//!   correlation integrand `(a.lambda) sign(eta)` is smooth in phi and
//!   piecewise linear in eta, so the midpoint rule is exact to rounding;
//! * a reduction to circle averages for quantities whose integrands contain
//!   free-floating sign discontinuities. With the polar axis perpendicular
//!   to both settings, every indicator and detection weight depends on the
//!   azimuth alone, the eta integral factors out analytically, and the
//!   azimuth integral is split at the known sign-change angles so each
//!   piece is smooth.

use std::f64::consts::PI;

use thiserror::Error;

use crate::counts::{CountsTable, PairCounts, PairIndex};
use crate::geom::{sign_plus, UnitVector3};
use crate::inequalities::SettingQuadruple;
use crate::model::{ModelError, ModelVariant, KILL_PROBABILITY};

/// Minimum grid resolution per dimension accepted by the oracles.
pub const MIN_RESOLUTION: usize = 64;

/// Mean of sqrt(1 - eta^2) over eta uniform on [-1, 1]; the factor by which
/// the eta integral contracts azimuthal detection weights.
const MEAN_S: f64 = PI / 4.0;

#[derive(Debug, Error, PartialEq)]
pub enum QuadratureError {
    #[error("grid resolution {0} below the accuracy contract minimum {MIN_RESOLUTION}")]
    ResolutionTooLow(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn check_resolution(resolution: usize) -> Result<(), QuadratureError> {
    if resolution < MIN_RESOLUTION {
        Err(QuadratureError::ResolutionTooLow(resolution))
    } else {
        Ok(())
    }
}

/// Midpoint integral of `f(lambda)` over the unit sphere, on a uniform
/// (eta, phi) grid aligned with `axis` as the polar direction.
pub fn integrate_sphere_aligned(
    axis: &UnitVector3,
    resolution: usize,
    f: impl Fn(&UnitVector3) -> f64,
) -> Result<f64, QuadratureError> {
    check_resolution(resolution)?;
    let n_eta = resolution + (resolution & 1); // even: no cell straddles eta = 0
    let n_phi = resolution;
    let d_eta = 2.0 / n_eta as f64;
    let d_phi = 2.0 * PI / n_phi as f64;
    let (u, v) = axis.orthonormal_basis();

    let mut sum = 0.0;
    for i in 0..n_eta {
        let eta = -1.0 + (i as f64 + 0.5) * d_eta;
        let s = (1.0 - eta * eta).max(0.0).sqrt();
        let mut row = 0.0;
        for j in 0..n_phi {
            let phi = (j as f64 + 0.5) * d_phi;
            let (sp, cp) = phi.sin_cos();
            let lambda = UnitVector3 {
                x: s * cp * u.x + s * sp * v.x + eta * axis.x,
                y: s * cp * u.y + s * sp * v.y + eta * axis.y,
                z: s * cp * u.z + s * sp * v.z + eta * axis.z,
            };
            row += f(&lambda);
        }
        sum += row;
    }
    Ok(sum * d_eta * d_phi)
}

/// Average of `f` over the circle, split at `breaks` (radians, any range)
/// so each arc is integrated over a smooth piece. `budget` is the total
/// midpoint sample count distributed over the arcs.
fn circle_average(breaks: &[f64], budget: usize, f: impl Fn(f64) -> f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut pts: Vec<f64> = breaks
        .iter()
        .map(|b| b.rem_euclid(two_pi))
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if pts.is_empty() {
        pts.push(0.0);
    }

    let mut total = 0.0;
    let n_arcs = pts.len();
    for k in 0..n_arcs {
        let lo = pts[k];
        let hi = if k + 1 < n_arcs {
            pts[k + 1]
        } else {
            pts[0] + two_pi
        };
        let len = hi - lo;
        if len < 1e-12 {
            continue;
        }
        let m = ((budget as f64 * len / two_pi) as usize).max(16);
        let h = len / m as f64;
        let mut arc = 0.0;
        for i in 0..m {
            arc += f(lo + (i as f64 + 0.5) * h);
        }
        total += arc * h;
    }
    total / two_pi
}

/// Detected-sample correlation of the spherical lossy variants in the
/// frame with b along +z and a at polar angle theta:
/// E = -(1/2 pi) int (a.lambda) sign(eta) d eta d phi.
fn correlation_detected_grid(theta: f64, resolution: usize) -> f64 {
    let n_eta = resolution + (resolution & 1);
    let n_phi = resolution;
    let d_eta = 2.0 / n_eta as f64;
    let d_phi = 2.0 * PI / n_phi as f64;
    let (sin_t, cos_t) = theta.sin_cos();

    let mut sum = 0.0;
    for i in 0..n_eta {
        let eta = -1.0 + (i as f64 + 0.5) * d_eta;
        let s = (1.0 - eta * eta).max(0.0).sqrt();
        let sgn = sign_plus(eta) as f64;
        let mut phi_sum = 0.0;
        for j in 0..n_phi {
            let phi = (j as f64 + 0.5) * d_phi;
            phi_sum += eta * cos_t + s * phi.cos() * sin_t;
        }
        sum += sgn * phi_sum;
    }
    -sum * d_eta * d_phi / (2.0 * PI)
}

/// Correlation of the lossless variant via the circle reduction: with the
/// polar axis perpendicular to both settings the integrand is piecewise
/// constant in the azimuth, so arc-split midpoint integration is exact.
fn correlation_no_loophole_circle(theta: f64, budget: usize) -> f64 {
    let breaks = [
        theta - PI / 2.0,
        theta + PI / 2.0,
        PI / 2.0,
        3.0 * PI / 2.0,
    ];
    -circle_average(&breaks, budget, |psi| {
        (sign_plus((psi - theta).cos()) * sign_plus(psi.cos())) as f64
    })
}

/// Planar-model correlation over the detected sample:
/// E = -(1/8) int (|ca| + |cb|) sign(ca) sign(cb) d lambda.
fn correlation_planar_circle(delta: f64, budget: usize) -> f64 {
    let breaks = [
        delta - PI / 2.0,
        delta + PI / 2.0,
        PI / 2.0,
        3.0 * PI / 2.0,
    ];
    // (|x| + |y|) sign(x) sign(y) = x sign(y) + y sign(x)
    let integrand = |psi: f64| {
        let ca = (delta - psi).cos();
        let cb = psi.cos();
        ca * sign_plus(cb) as f64 + cb * sign_plus(ca) as f64
    };
    -(2.0 * PI) * circle_average(&breaks, budget, integrand) / 8.0
}

/// Numerically integrates the conditional-sample correlation
/// E = int d lambda rho(lambda | detected) A(lambda, a) B(lambda, b)
/// for the given variant. Serves as the exact oracle against both the
/// Monte Carlo estimate and the closed forms.
pub fn quadrature_correlation(
    variant: ModelVariant,
    a: &UnitVector3,
    b: &UnitVector3,
    resolution: usize,
) -> Result<f64, QuadratureError> {
    check_resolution(resolution)?;
    variant.validate_settings(a, b)?;
    let theta = a.angle_to(b);
    let budget = resolution * resolution;
    Ok(match variant {
        ModelVariant::NoLoophole => correlation_no_loophole_circle(theta, budget),
        ModelVariant::Asymmetric
        | ModelVariant::Symmetric
        | ModelVariant::IndependentDetectors => correlation_detected_grid(theta, resolution),
        ModelVariant::PlanarSteiner => correlation_planar_circle(theta, budget),
    })
}

/// Joint outcome probabilities for one setting pair:
/// `joint[i][j]` with index 0 = Plus, 1 = Minus, 2 = NoDetection,
/// Alice first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairProbs {
    pub joint: [[f64; 3]; 3],
}

impl PairProbs {
    pub fn total(&self) -> f64 {
        self.joint.iter().flatten().sum()
    }

    pub fn coincidence(&self) -> f64 {
        self.joint[0][0] + self.joint[0][1] + self.joint[1][0] + self.joint[1][1]
    }

    /// Renormalized correlation of the detected sample.
    pub fn correlation(&self) -> f64 {
        (self.joint[0][0] + self.joint[1][1] - self.joint[0][1] - self.joint[1][0])
            / self.coincidence()
    }

    pub fn to_pair_counts(&self, n_trials: f64) -> PairCounts<f64> {
        PairCounts {
            n_trials,
            pp: self.joint[0][0] * n_trials,
            pm: self.joint[0][1] * n_trials,
            mp: self.joint[1][0] * n_trials,
            mm: self.joint[1][1] * n_trials,
            pn: self.joint[0][2] * n_trials,
            mn: self.joint[1][2] * n_trials,
            np: self.joint[2][0] * n_trials,
            nm: self.joint[2][1] * n_trials,
            nn: self.joint[2][2] * n_trials,
        }
    }
}

struct CircleGeometry {
    /// Alice azimuth offset (Bob at 0).
    delta: f64,
    budget: usize,
    /// Alice outcome +1 iff sign condition holds; spherical and planar
    /// variants use opposite orientations.
    planar_signs: bool,
}

impl CircleGeometry {
    fn breaks(&self) -> [f64; 4] {
        [
            self.delta - PI / 2.0,
            self.delta + PI / 2.0,
            PI / 2.0,
            3.0 * PI / 2.0,
        ]
    }

    fn ca(&self, psi: f64) -> f64 {
        (self.delta - psi).cos()
    }

    fn cb(&self, psi: f64) -> f64 {
        psi.cos()
    }

    fn alice_indicator(&self, psi: f64, plus: bool) -> f64 {
        let ca = self.ca(psi);
        let is_plus = if self.planar_signs { ca >= 0.0 } else { ca <= 0.0 };
        if is_plus == plus {
            1.0
        } else {
            0.0
        }
    }

    fn bob_indicator(&self, psi: f64, plus: bool) -> f64 {
        let cb = self.cb(psi);
        let is_plus = if self.planar_signs { cb <= 0.0 } else { cb >= 0.0 };
        if is_plus == plus {
            1.0
        } else {
            0.0
        }
    }

    fn avg(&self, f: impl Fn(f64) -> f64) -> f64 {
        circle_average(&self.breaks(), self.budget, f)
    }
}

/// Joint probabilities when Alice is the lossy side. `weight_scale` is the
/// mean of the eta factor (pi/4 on the sphere, 1 on the circle).
fn lossy_alice_probs(g: &CircleGeometry, weight_scale: f64) -> [[f64; 3]; 3] {
    let mut joint = [[0.0; 3]; 3];
    for (i, a_plus) in [true, false].into_iter().enumerate() {
        for (j, b_plus) in [true, false].into_iter().enumerate() {
            joint[i][j] = weight_scale
                * g.avg(|psi| {
                    g.ca(psi).abs() * g.alice_indicator(psi, a_plus) * g.bob_indicator(psi, b_plus)
                });
        }
    }
    for (j, b_plus) in [true, false].into_iter().enumerate() {
        let b_marginal = g.avg(|psi| g.bob_indicator(psi, b_plus));
        let detected = weight_scale
            * g.avg(|psi| g.ca(psi).abs() * g.bob_indicator(psi, b_plus));
        joint[2][j] = b_marginal - detected;
    }
    joint
}

/// Mirror image: Bob is the lossy side.
fn lossy_bob_probs(g: &CircleGeometry, weight_scale: f64) -> [[f64; 3]; 3] {
    let mut joint = [[0.0; 3]; 3];
    for (i, a_plus) in [true, false].into_iter().enumerate() {
        for (j, b_plus) in [true, false].into_iter().enumerate() {
            joint[i][j] = weight_scale
                * g.avg(|psi| {
                    g.cb(psi).abs() * g.alice_indicator(psi, a_plus) * g.bob_indicator(psi, b_plus)
                });
        }
        let a_marginal = g.avg(|psi| g.alice_indicator(psi, a_plus));
        let detected = weight_scale
            * g.avg(|psi| g.cb(psi).abs() * g.alice_indicator(psi, a_plus));
        joint[i][2] = a_marginal - detected;
    }
    joint
}

fn mix(a: [[f64; 3]; 3], b: [[f64; 3]; 3], wa: f64, wb: f64) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = wa * a[i][j] + wb * b[i][j];
        }
    }
    out
}

/// Expected joint outcome probabilities for one setting pair at relative
/// angle `theta`, computed by quadrature.
pub fn expected_pair_probs(
    variant: ModelVariant,
    theta: f64,
    resolution: usize,
) -> Result<PairProbs, QuadratureError> {
    check_resolution(resolution)?;
    let g = CircleGeometry {
        delta: theta,
        budget: resolution * 32,
        planar_signs: variant.is_planar(),
    };
    let joint = match variant {
        ModelVariant::NoLoophole => {
            let mut joint = [[0.0; 3]; 3];
            for (i, a_plus) in [true, false].into_iter().enumerate() {
                for (j, b_plus) in [true, false].into_iter().enumerate() {
                    joint[i][j] = g.avg(|psi| {
                        g.alice_indicator(psi, a_plus) * g.bob_indicator(psi, b_plus)
                    });
                }
            }
            joint
        }
        ModelVariant::Asymmetric => lossy_alice_probs(&g, MEAN_S),
        ModelVariant::Symmetric => mix(
            lossy_alice_probs(&g, MEAN_S),
            lossy_bob_probs(&g, MEAN_S),
            0.5,
            0.5,
        ),
        ModelVariant::IndependentDetectors => {
            let sym = mix(
                lossy_alice_probs(&g, MEAN_S),
                lossy_bob_probs(&g, MEAN_S),
                0.5,
                0.5,
            );
            let mut joint = mix(sym, [[0.0; 3]; 3], 1.0 - KILL_PROBABILITY, 0.0);
            joint[2][2] += KILL_PROBABILITY;
            joint
        }
        ModelVariant::PlanarSteiner => mix(
            lossy_alice_probs(&g, 1.0),
            lossy_bob_probs(&g, 1.0),
            0.5,
            0.5,
        ),
    };
    Ok(PairProbs { joint })
}

/// Expected (real-valued) counts for a full quadruple: the noise-free
/// oracle input for inequality checks.
pub fn expected_counts(
    variant: ModelVariant,
    quad: &SettingQuadruple,
    n_trials_per_pair: f64,
    resolution: usize,
) -> Result<CountsTable<f64>, QuadratureError> {
    variant.validate_settings(&quad.a, &quad.b)?;
    variant.validate_settings(&quad.a_prime, &quad.b_prime)?;
    let mut table = CountsTable::<f64>::default();
    for idx in PairIndex::ALL {
        let (x, y) = quad.pair_settings(idx);
        let probs = expected_pair_probs(variant, x.angle_to(&y), resolution)?;
        table.pairs[idx as usize] = probs.to_pair_counts(n_trials_per_pair);
    }
    Ok(table)
}
