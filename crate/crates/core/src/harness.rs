//! Experiment orchestration: settings schedules, parallel trial batches,
//! count accumulation, statistics, and report serialization.
//!
//! Reproducibility contract: a config fully determines the counts. Trials
//! are keyed by their global index, batches only partition the index range,
//! and count merging is a cellwise integer sum, so any batch count yields
//! byte-identical exported reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counts::{CountsError, CountsTable, PairIndex};
use crate::geom::UnitVector3;
use crate::inequalities::{
    ch_evaluate, chsh_value, renormalized_correlation, ChResult, ChshResult, InequalityError,
    SettingQuadruple,
};
use crate::model::{
    correlation_no_loophole, correlation_quantum, trial_outcomes_from_draws, ModelError,
    ModelVariant,
};
use crate::rng::{setting_draw, trial_draws, StreamDomain};

/// JSON schema version stamped into every exported report.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Stream context used by plain experiments; scans use one context per
/// grid angle.
pub const EXPERIMENT_CONTEXT: u16 = 0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("n_trials must be >= 1")]
    NoTrials,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Counts(#[from] CountsError),
    #[error(transparent)]
    Inequality(#[from] InequalityError),
    #[error("scan grid is empty")]
    EmptyGrid,
    #[error("scan grid must be strictly increasing within [0, pi]")]
    BadGrid,
    #[error("no detected coincidences for pair {0}")]
    NoCoincidences(usize),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV parse error: {0}")]
    CsvParse(String),
}

/// How setting pairs are interleaved over the trial sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Every trial uses the same pair.
    FixedPair(PairIndex),
    /// Deterministic cycle through the quadruple; all four pairs see
    /// identical trial counts.
    CycleQuadruple,
    /// Each side picks its own setting per trial from its private
    /// substream, emulating independent random switching. This is the
    /// same derivation the netdemo nodes use, so a two-process session
    /// reproduces it exactly.
    RandomQuadruple,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub variant: ModelVariant,
    pub quad: SettingQuadruple,
    /// Trials per setting pair (fixed-pair schedule: total trials).
    pub n_trials: u64,
    pub seed: u64,
    pub schedule: Schedule,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n_trials == 0 {
            return Err(HarnessError::NoTrials);
        }
        for idx in PairIndex::ALL {
            let (x, y) = self.quad.pair_settings(idx);
            self.variant.validate_settings(&x, &y)?;
        }
        Ok(())
    }

    pub fn total_trials(&self) -> u64 {
        match self.schedule {
            Schedule::FixedPair(_) => self.n_trials,
            Schedule::CycleQuadruple | Schedule::RandomQuadruple => 4 * self.n_trials,
        }
    }

    /// The setting pair used by global trial `t`.
    pub fn pair_for_trial(&self, context: u16, t: u64) -> PairIndex {
        match self.schedule {
            Schedule::FixedPair(idx) => idx,
            Schedule::CycleQuadruple => PairIndex::ALL[(t % 4) as usize],
            Schedule::RandomQuadruple => {
                let alice = setting_draw(self.seed, StreamDomain::AliceSettings, context, t);
                let bob = setting_draw(self.seed, StreamDomain::BobSettings, context, t);
                PairIndex::from_sides(alice == 1, bob == 1)
            }
        }
    }
}

/// Per-pair estimate of the renormalized correlation. `e`/`sigma` are absent
/// when the pair saw no detected coincidences (degenerate short runs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStatistics {
    pub n_detected: u64,
    pub e: Option<f64>,
    /// Binomial standard error 1/sqrt(n_detected).
    pub sigma: Option<f64>,
}

/// Detection-rate summary over all trials of a session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub alice_rate: f64,
    pub bob_rate: f64,
    pub joint_rate: f64,
    /// P(both fire) - P(A fires) P(B fires).
    pub factorization_residual: f64,
    /// Delta-method standard error of the residual.
    pub residual_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub counts: CountsTable<u64>,
    pub pair_stats: [PairStatistics; 4],
    /// Absent when any pair lacks coincidences.
    pub chsh: Option<ChshResult>,
    pub ch: ChResult,
    pub detection: DetectionStats,
}

impl ExperimentReport {
    /// Builds the derived statistics from raw counts. Every downstream
    /// evaluation is a pure view of the counts, so the report is internally
    /// consistent by construction.
    pub fn from_counts(
        config: ExperimentConfig,
        counts: CountsTable<u64>,
    ) -> Result<Self, HarnessError> {
        counts.validate(0.0)?;

        let mut pair_stats = [PairStatistics {
            n_detected: 0,
            e: None,
            sigma: None,
        }; 4];
        for idx in PairIndex::ALL {
            let pair = counts.pair(idx);
            let n_det = pair.coincidences() as u64;
            let (e, sigma) = match renormalized_correlation(pair) {
                Ok(e) => (Some(e), Some(1.0 / (n_det as f64).sqrt())),
                Err(InequalityError::UndefinedCorrelation) => (None, None),
                Err(other) => return Err(other.into()),
            };
            pair_stats[idx as usize] = PairStatistics {
                n_detected: n_det,
                e,
                sigma,
            };
        }

        let chsh = match (
            pair_stats[0].e,
            pair_stats[1].e,
            pair_stats[2].e,
            pair_stats[3].e,
        ) {
            (Some(e0), Some(e1), Some(e2), Some(e3)) => Some(chsh_value(e0, e1, e2, e3)?),
            _ => None,
        };

        let ch = ch_evaluate(&counts);
        let detection = detection_stats(&counts);

        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            config,
            counts,
            pair_stats,
            chsh,
            ch,
            detection,
        })
    }
}

fn detection_stats(counts: &CountsTable<u64>) -> DetectionStats {
    let n: f64 = counts.total_trials();
    let mut alice = 0.0;
    let mut bob = 0.0;
    let mut joint = 0.0;
    for p in &counts.pairs {
        alice += p.alice_fired();
        bob += p.bob_fired();
        joint += p.coincidences();
    }
    let (pa, pb, pj) = (alice / n, bob / n, joint / n);
    let residual = pj - pa * pb;
    // Delta method over the multinomial proportions, with covariances
    // cov(J, A) = pJ (1 - pA), cov(A, B) = pJ - pA pB.
    let var = (pj * (1.0 - pj)
        + pb * pb * pa * (1.0 - pa)
        + pa * pa * pb * (1.0 - pb)
        - 2.0 * pb * pj * (1.0 - pa)
        - 2.0 * pa * pj * (1.0 - pb)
        + 2.0 * pa * pb * (pj - pa * pb))
        / n;
    DetectionStats {
        alice_rate: pa,
        bob_rate: pb,
        joint_rate: pj,
        factorization_residual: residual,
        residual_sigma: var.max(0.0).sqrt(),
    }
}

fn run_range(
    config: &ExperimentConfig,
    context: u16,
    range: std::ops::Range<u64>,
) -> Result<CountsTable<u64>, HarnessError> {
    let mut table = CountsTable::<u64>::default();
    for t in range {
        let pair = config.pair_for_trial(context, t);
        let (x, y) = config.quad.pair_settings(pair);
        let draws = trial_draws(config.seed, context, t);
        let (alice, bob) = trial_outcomes_from_draws(config.variant, &x, &y, &draws)?;
        table.record(pair, alice, bob);
    }
    Ok(table)
}

/// Generates the full counts table for a config, split over `batches`
/// disjoint index ranges executed in parallel.
pub fn generate_counts(
    config: &ExperimentConfig,
    context: u16,
    batches: usize,
) -> Result<CountsTable<u64>, HarnessError> {
    config.validate()?;
    let total = config.total_trials();
    let batches = batches.max(1).min(total as usize);
    let chunk = total.div_ceil(batches as u64);
    let ranges: Vec<std::ops::Range<u64>> = (0..batches as u64)
        .map(|i| (i * chunk).min(total)..((i + 1) * chunk).min(total))
        .collect();

    let partials: Result<Vec<CountsTable<u64>>, HarnessError> = ranges
        .into_par_iter()
        .map(|r| run_range(config, context, r))
        .collect();

    let mut table = CountsTable::<u64>::default();
    for part in partials? {
        table.merge(&part);
    }
    Ok(table)
}

/// Runs a full experiment with the default parallelism.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    run_experiment_with_batches(config, rayon::current_num_threads())
}

/// Runs a full experiment over an explicit batch count. The batch count
/// never changes the result; it exists so the determinism contract can be
/// exercised directly.
pub fn run_experiment_with_batches(
    config: &ExperimentConfig,
    batches: usize,
) -> Result<ExperimentReport, HarnessError> {
    let counts = generate_counts(config, EXPERIMENT_CONTEXT, batches)?;
    ExperimentReport::from_counts(*config, counts)
}

/// One row of a correlation scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub theta: f64,
    pub e_model: f64,
    pub sigma: f64,
    pub e_quantum: f64,
    pub e_linear: f64,
}

/// Monte Carlo correlation estimate across an angle grid, with the two
/// analytic companion curves (quantum -cos theta and the lossless linear
/// model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub schema_version: u32,
    pub variant: ModelVariant,
    pub n_trials: u64,
    pub seed: u64,
    pub rows: Vec<ScanRow>,
}

pub fn scan_correlation(
    variant: ModelVariant,
    thetas: &[f64],
    n_trials: u64,
    seed: u64,
) -> Result<ScanResult, HarnessError> {
    if thetas.is_empty() {
        return Err(HarnessError::EmptyGrid);
    }
    let increasing = thetas.windows(2).all(|w| w[0] < w[1]);
    let in_range = thetas
        .iter()
        .all(|&t| (0.0..=std::f64::consts::PI + 1e-12).contains(&t));
    if !increasing || !in_range {
        return Err(HarnessError::BadGrid);
    }

    let rows: Result<Vec<ScanRow>, HarnessError> = thetas
        .par_iter()
        .enumerate()
        .map(|(k, &theta)| {
            let a = UnitVector3::from_planar_angle(0.0);
            let b = UnitVector3::from_planar_angle(theta);
            let config = ExperimentConfig {
                variant,
                quad: SettingQuadruple::new(a, a, b, b),
                n_trials,
                seed,
                schedule: Schedule::FixedPair(PairIndex::AB),
            };
            let counts = generate_counts(&config, k as u16, 1)?;
            let pair = counts.pair(PairIndex::AB);
            let e_model = renormalized_correlation(pair)
                .map_err(|_| HarnessError::NoCoincidences(PairIndex::AB as usize))?;
            let sigma = 1.0 / pair.coincidences().sqrt();
            Ok(ScanRow {
                theta,
                e_model,
                sigma,
                e_quantum: correlation_quantum(&a, &b),
                e_linear: correlation_no_loophole(theta)?,
            })
        })
        .collect();

    Ok(ScanResult {
        schema_version: REPORT_SCHEMA_VERSION,
        variant,
        n_trials,
        seed,
        rows: rows?,
    })
}

/// Persistence formats for reports and scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Csv,
}

pub fn report_to_json(report: &ExperimentReport) -> Result<String, HarnessError> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn report_from_json(text: &str) -> Result<ExperimentReport, HarnessError> {
    Ok(serde_json::from_str(text)?)
}

/// CSV view of a report's counts: one row per setting pair.
/// Columns are fixed: pair, n_trials, the nine outcome cells, then the
/// renormalized correlation and its sigma (empty when undefined).
pub const REPORT_CSV_HEADER: &str = "pair,n_trials,pp,pm,mp,mm,pn,mn,np,nm,nn,e,sigma";

pub fn report_to_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for idx in PairIndex::ALL {
        let p = report.counts.pair(idx);
        let st = &report.pair_stats[idx as usize];
        let e = st.e.map(|v| v.to_string()).unwrap_or_default();
        let s = st.sigma.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            idx as usize,
            p.n_trials,
            p.pp,
            p.pm,
            p.mp,
            p.mm,
            p.pn,
            p.mn,
            p.np,
            p.nm,
            p.nn,
            e,
            s
        ));
    }
    out
}

/// Parses the counts rows of the report CSV back into a table.
pub fn counts_from_csv(text: &str) -> Result<CountsTable<u64>, HarnessError> {
    let mut table = CountsTable::<u64>::default();
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| {
        HarnessError::CsvParse("empty document".into())
    })?;
    if header.trim() != REPORT_CSV_HEADER {
        return Err(HarnessError::CsvParse(format!(
            "unexpected header: {header}"
        )));
    }
    let mut seen = 0;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 11 {
            return Err(HarnessError::CsvParse(format!("short row: {line}")));
        }
        let idx: usize = fields[0]
            .parse()
            .map_err(|e| HarnessError::CsvParse(format!("{e}: {line}")))?;
        if idx > 3 {
            return Err(HarnessError::CsvParse(format!("bad pair index {idx}")));
        }
        let mut vals = [0u64; 10];
        for (slot, field) in vals.iter_mut().zip(&fields[1..11]) {
            *slot = field
                .parse()
                .map_err(|e| HarnessError::CsvParse(format!("{e}: {line}")))?;
        }
        let p = &mut table.pairs[idx];
        p.n_trials = vals[0];
        p.pp = vals[1];
        p.pm = vals[2];
        p.mp = vals[3];
        p.mm = vals[4];
        p.pn = vals[5];
        p.mn = vals[6];
        p.np = vals[7];
        p.nm = vals[8];
        p.nn = vals[9];
        seen += 1;
    }
    if seen != 4 {
        return Err(HarnessError::CsvParse(format!("expected 4 rows, got {seen}")));
    }
    table.validate(0.0)?;
    Ok(table)
}

/// Scan CSV: theta, model estimate with sigma, then the analytic curves.
pub const SCAN_CSV_HEADER: &str = "theta,e_model,sigma,e_quantum,e_linear";

pub fn scan_to_csv(scan: &ScanResult) -> String {
    let mut out = String::from(SCAN_CSV_HEADER);
    out.push('\n');
    for row in &scan.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.theta, row.e_model, row.sigma, row.e_quantum, row.e_linear
        ));
    }
    out
}
