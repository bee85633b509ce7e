//! A local hidden variable model that reproduces the singlet-state
//! correlation for detected pairs by exploiting detector inefficiency,
//! together with the machinery to probe it: closed-form predictions,
//! numerical quadrature oracles, CHSH/CH inequality evaluation, detection
//! efficiency thresholds, a deterministic Monte Carlo harness, and a
//! two-process network demo with a no-signaling check.

pub mod counts;
pub mod geom;
pub mod harness;
pub mod inequalities;
pub mod model;
pub mod net;
pub mod quadrature;
pub mod rng;

pub use counts::{CountsTable, PairCounts, PairIndex};
pub use geom::{sign_plus, GeomError, UnitVector3};
pub use harness::{
    run_experiment, scan_correlation, ExperimentConfig, ExperimentReport, HarnessError, Schedule,
};
pub use inequalities::{
    ch_evaluate, ch_threshold, chsh_value, optimize_threshold, relevant_efficiency, ChResult,
    ChshResult, EfficiencyModel, InequalityError, SettingQuadruple,
};
pub use model::{ModelVariant, Outcome, Side};
pub use net::{node_run, referee_serve, verify_no_signaling, NetError, SessionConfig, SettingMode};
pub use quadrature::{expected_counts, quadrature_correlation};
