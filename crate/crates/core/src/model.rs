//! The local hidden-variable model of the singlet state.
//!
//! Each pair of spins carries a classical arrow `lambda`, uniform on the
//! sphere; Bob's arrow is `-lambda`. Outcomes are the sign of
//! `(<sigma> - lambda) . a`. Detection exploits the loophole: the lossy side
//! fires only with probability `|lambda . a|`, which skews the detected
//! sample exactly enough to turn the linear correlation into `-a.b`.
//!
//! Outcome sign convention: Alice reports `sign(-lambda.a)`, Bob
//! `sign(lambda.b)`. The product equals `sign(a.lambda) sign(-b.lambda)`,
//! so both the single-spin marginal rule and the correlation integral hold
//! verbatim; the correlation itself is convention-invariant.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{sign_plus, GeomError, UnitVector3};
use crate::rng::TrialDraws;

/// Probability of the "no outcome at all" hidden bit in the
/// independent-detectors variant.
pub const KILL_PROBABILITY: f64 = 1.0 / 9.0;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("planar variant requires in-plane settings: {0}")]
    SettingNotPlanar(#[from] GeomError),
    #[error("angle {0} outside [0, pi]")]
    AngleOutOfRange(f64),
    #[error("Bloch vector norm {0} exceeds 1")]
    BlochTooLong(f64),
}

/// Which detection-loophole mechanism is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    /// Every measurement produces an outcome; correlation is linear in the
    /// angle and never violates CHSH.
    NoLoophole,
    /// Alice fires with probability |lambda.a|, Bob always fires.
    Asymmetric,
    /// A shared swap bit exchanges the lossy role; each side fires 75%.
    Symmetric,
    /// Symmetric plus a 1/9 "no outcome at all" bit, making the two
    /// detectors look independent with efficiency 2/3 each.
    IndependentDetectors,
    /// Circle model with settings restricted to the z = 0 plane;
    /// per-side efficiency (1 + 2/pi)/2.
    PlanarSteiner,
}

impl ModelVariant {
    /// Swap bit is drawn uniformly only where the roles are symmetrized.
    pub fn swap_active(&self) -> bool {
        matches!(
            self,
            ModelVariant::Symmetric
                | ModelVariant::IndependentDetectors
                | ModelVariant::PlanarSteiner
        )
    }

    pub fn kill_active(&self) -> bool {
        matches!(self, ModelVariant::IndependentDetectors)
    }

    pub fn has_lossy_side(&self) -> bool {
        !matches!(self, ModelVariant::NoLoophole)
    }

    pub fn is_planar(&self) -> bool {
        matches!(self, ModelVariant::PlanarSteiner)
    }

    /// Validates a setting pair against the variant's geometry constraint.
    pub fn validate_settings(&self, a: &UnitVector3, b: &UnitVector3) -> Result<(), ModelError> {
        if self.is_planar() {
            a.require_planar()?;
            b.require_planar()?;
        }
        Ok(())
    }
}

/// The full hidden state shared by one pair of spins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HiddenVariable {
    /// Alice's arrow; Bob's is `-lambda`.
    pub lambda: UnitVector3,
    /// Exchange the lossy role (Bob becomes the lossy side).
    pub swap: bool,
    /// Suppress both outcomes entirely.
    pub kill: bool,
}

/// A single-spin state entering the outcome rule through its Bloch vector
/// `<sigma> = Tr(sigma rho)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleSpinState {
    bloch: [f64; 3],
}

impl SingleSpinState {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, ModelError> {
        let n = (x * x + y * y + z * z).sqrt();
        if n > 1.0 + 1e-12 {
            return Err(ModelError::BlochTooLong(n));
        }
        Ok(Self { bloch: [x, y, z] })
    }

    /// The maximally mixed state; either half of the singlet locally.
    pub fn maximally_mixed() -> Self {
        Self { bloch: [0.0; 3] }
    }

    pub fn bloch(&self) -> [f64; 3] {
        self.bloch
    }
}

/// One side's result for one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Plus,
    Minus,
    NoDetection,
}

impl Outcome {
    pub fn detected(&self) -> bool {
        !matches!(self, Outcome::NoDetection)
    }

    pub fn value(&self) -> Option<i8> {
        match self {
            Outcome::Plus => Some(1),
            Outcome::Minus => Some(-1),
            Outcome::NoDetection => None,
        }
    }

    fn from_sign(s: i8) -> Self {
        if s >= 0 {
            Outcome::Plus
        } else {
            Outcome::Minus
        }
    }
}

/// Per-trial outcome pair with its position in the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: u64,
    pub pair_index: u8,
    pub alice: Outcome,
    pub bob: Outcome,
}

/// Builds the hidden variable from a trial's fixed variate block.
pub fn hidden_variable_from_draws(draws: &TrialDraws, variant: ModelVariant) -> HiddenVariable {
    // Archimedes cylindrical projection: z uniform on [-1, 1], azimuth
    // uniform on [0, 2 pi). Matches the (eta, phi) quadrature parametrization.
    let z = 2.0 * draws.u_z - 1.0;
    let phi = 2.0 * PI * draws.u_phi;
    let s = (1.0 - z * z).max(0.0).sqrt();
    let (sp, cp) = phi.sin_cos();
    let lambda = UnitVector3 {
        x: s * cp,
        y: s * sp,
        z,
    };
    HiddenVariable {
        lambda,
        swap: variant.swap_active() && draws.u_swap < 0.5,
        kill: variant.kill_active() && draws.u_kill < KILL_PROBABILITY,
    }
}

/// Samples the hidden variable from a deterministic stream. Consumes four
/// variates (z, azimuth, swap, kill) in fixed order.
pub fn sample_hidden_variable(rng: &mut impl Rng, variant: ModelVariant) -> HiddenVariable {
    let draws = TrialDraws {
        u_z: rng.random(),
        u_phi: rng.random(),
        u_swap: rng.random(),
        u_kill: rng.random(),
        u_detect: 0.0,
    };
    hidden_variable_from_draws(&draws, variant)
}

/// Deterministic outcome rule: sign((<sigma> - lambda) . a), sign(0) := +1.
pub fn local_outcome(state: &SingleSpinState, lambda: &UnitVector3, a: &UnitVector3) -> i8 {
    let [bx, by, bz] = state.bloch();
    sign_plus((bx - lambda.x) * a.x + (by - lambda.y) * a.y + (bz - lambda.z) * a.z)
}

/// Detection rule for the lossy side: fire iff `u < |lambda . a|`.
pub fn alice_detects(lambda: &UnitVector3, a: &UnitVector3, u: f64) -> bool {
    u < lambda.dot(a).abs()
}

/// Which observer a computation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Alice,
    Bob,
}

/// One side's outcome for one trial, as a pure function of the shared
/// variate block and that side's own setting. The netdemo nodes and the
/// in-process harness both go through here, which is what makes
/// distributed and single-process sessions bit-identical -- and what makes
/// the model local by construction.
pub fn side_outcome_from_draws(
    variant: ModelVariant,
    side: Side,
    setting: &UnitVector3,
    draws: &TrialDraws,
) -> Result<Outcome, ModelError> {
    if variant.is_planar() {
        setting.require_planar()?;
    }
    let hv = hidden_variable_from_draws(draws, variant);
    if hv.kill {
        return Ok(Outcome::NoDetection);
    }

    if variant.is_planar() {
        return Ok(planar_side_outcome(&hv, side, setting.azimuth(), draws.u_detect));
    }

    // Alice applies the rule with lambda, Bob with the opposite arrow.
    let arrow = match side {
        Side::Alice => hv.lambda,
        Side::Bob => hv.lambda.neg(),
    };
    let sign = local_outcome(&SingleSpinState::maximally_mixed(), &arrow, setting);

    let lossy = match variant {
        ModelVariant::NoLoophole => None,
        ModelVariant::Asymmetric => Some(Side::Alice),
        ModelVariant::Symmetric | ModelVariant::IndependentDetectors => {
            Some(if hv.swap { Side::Bob } else { Side::Alice })
        }
        ModelVariant::PlanarSteiner => unreachable!(),
    };
    let fires = match lossy {
        Some(l) if l == side => alice_detects(&arrow, setting, draws.u_detect),
        _ => true,
    };

    Ok(if fires {
        Outcome::from_sign(sign)
    } else {
        Outcome::NoDetection
    })
}

/// Circle model: lambda is an angle, detection probability
/// |cos(alpha - lambda)|, outcomes sign(cos(alpha_a - lambda)) and the
/// negated analogue for Bob.
fn planar_side_outcome(hv: &HiddenVariable, side: Side, alpha: f64, u_detect: f64) -> Outcome {
    let lam = hv.lambda.azimuth();
    let c = (alpha - lam).cos();
    let sign = match side {
        Side::Alice => sign_plus(c),
        Side::Bob => sign_plus(-c),
    };
    let lossy = if hv.swap { Side::Bob } else { Side::Alice };
    let fires = side != lossy || u_detect < c.abs();
    if fires {
        Outcome::from_sign(sign)
    } else {
        Outcome::NoDetection
    }
}

/// Runs one trial from a pre-drawn variate block: both sides' outcomes.
pub fn trial_outcomes_from_draws(
    variant: ModelVariant,
    a: &UnitVector3,
    b: &UnitVector3,
    draws: &TrialDraws,
) -> Result<(Outcome, Outcome), ModelError> {
    variant.validate_settings(a, b)?;
    let alice = side_outcome_from_draws(variant, Side::Alice, a, draws)?;
    let bob = side_outcome_from_draws(variant, Side::Bob, b, draws)?;
    Ok((alice, bob))
}

/// Runs one trial, drawing the variate block from `rng` in the fixed order.
pub fn run_trial(
    variant: ModelVariant,
    a: &UnitVector3,
    b: &UnitVector3,
    rng: &mut impl Rng,
) -> Result<(Outcome, Outcome), ModelError> {
    let draws = TrialDraws {
        u_z: rng.random(),
        u_phi: rng.random(),
        u_swap: rng.random(),
        u_kill: rng.random(),
        u_detect: rng.random(),
    };
    trial_outcomes_from_draws(variant, a, b, &draws)
}

/// Conditional density of lambda given a detection on the lossy side:
/// |a . lambda| / (2 pi).
pub fn conditional_lambda_density(lambda: &UnitVector3, a: &UnitVector3) -> f64 {
    lambda.dot(a).abs() / (2.0 * PI)
}

/// Singlet correlation: E(a, b) = -a.b.
pub fn correlation_quantum(a: &UnitVector3, b: &UnitVector3) -> f64 {
    -a.dot(b)
}

/// Lossless-model correlation: linear in the angle, E = -1 + 2 theta / pi.
pub fn correlation_no_loophole(theta_ab: f64) -> Result<f64, ModelError> {
    if !(0.0..=PI).contains(&theta_ab) {
        return Err(ModelError::AngleOutOfRange(theta_ab));
    }
    Ok(-1.0 + 2.0 * theta_ab / PI)
}

/// Mean detection probability of the lossy side in the spherical model.
pub const MEAN_DETECTION_SPHERE: f64 = 0.5;

/// Mean detection probability of the lossy side in the planar model.
pub fn mean_detection_planar() -> f64 {
    2.0 / PI
}

/// Planar-model efficiencies: (mean per-side efficiency, relevant efficiency).
/// The relevant efficiency weighs coincidences, not singles, and equals
/// p / ((p + 1) / 2) at p = 2/pi.
pub fn planar_efficiencies() -> (f64, f64) {
    let mean = 0.5 * (1.0 + 2.0 / PI);
    let relevant = 4.0 / (PI + 2.0);
    (mean, relevant)
}
