//! Coincidence and singles bookkeeping for one setting quadruple.
//!
//! Counts are kept per setting pair in the fixed order
//! (a,b), (a,b'), (a',b), (a',b'). Integer tables come from Monte Carlo;
//! real-valued tables carry expected counts from the quadrature oracle so
//! inequality checks can be run without statistical noise.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Outcome;

/// Index of a setting pair within a quadruple, row-major over (x, y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairIndex {
    AB = 0,
    ABPrime = 1,
    APrimeB = 2,
    APrimeBPrime = 3,
}

impl PairIndex {
    pub const ALL: [PairIndex; 4] = [
        PairIndex::AB,
        PairIndex::ABPrime,
        PairIndex::APrimeB,
        PairIndex::APrimeBPrime,
    ];

    pub fn from_sides(alice_primed: bool, bob_primed: bool) -> Self {
        match (alice_primed, bob_primed) {
            (false, false) => PairIndex::AB,
            (false, true) => PairIndex::ABPrime,
            (true, false) => PairIndex::APrimeB,
            (true, true) => PairIndex::APrimeBPrime,
        }
    }

    pub fn alice_primed(&self) -> bool {
        (*self as u8) & 2 != 0
    }

    pub fn bob_primed(&self) -> bool {
        (*self as u8) & 1 != 0
    }
}

/// Count values: exact integers from simulation or reals from oracles.
pub trait CountValue: Copy + Default + PartialOrd {
    fn to_f64(self) -> f64;
}

impl CountValue for u64 {
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl CountValue for f64 {
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CountsError {
    #[error("pair {0}: outcome cells sum to {1} but n_trials is {2}")]
    NotConserved(usize, f64, f64),
    #[error("pair {0}: negative count")]
    Negative(usize),
}

/// Outcome tally for one setting pair. Cell naming: first letter Alice,
/// second Bob; `p`/`m` detected +/-,`n` no detection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairCounts<T> {
    pub n_trials: T,
    pub pp: T,
    pub pm: T,
    pub mp: T,
    pub mm: T,
    pub pn: T,
    pub mn: T,
    pub np: T,
    pub nm: T,
    pub nn: T,
}

impl PairCounts<u64> {
    pub fn record(&mut self, alice: Outcome, bob: Outcome) {
        self.n_trials += 1;
        let cell = match (alice, bob) {
            (Outcome::Plus, Outcome::Plus) => &mut self.pp,
            (Outcome::Plus, Outcome::Minus) => &mut self.pm,
            (Outcome::Minus, Outcome::Plus) => &mut self.mp,
            (Outcome::Minus, Outcome::Minus) => &mut self.mm,
            (Outcome::Plus, Outcome::NoDetection) => &mut self.pn,
            (Outcome::Minus, Outcome::NoDetection) => &mut self.mn,
            (Outcome::NoDetection, Outcome::Plus) => &mut self.np,
            (Outcome::NoDetection, Outcome::Minus) => &mut self.nm,
            (Outcome::NoDetection, Outcome::NoDetection) => &mut self.nn,
        };
        *cell += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        self.n_trials += other.n_trials;
        self.pp += other.pp;
        self.pm += other.pm;
        self.mp += other.mp;
        self.mm += other.mm;
        self.pn += other.pn;
        self.mn += other.mn;
        self.np += other.np;
        self.nm += other.nm;
        self.nn += other.nn;
    }
}

impl<T: CountValue> PairCounts<T> {
    pub fn to_f64(&self) -> PairCounts<f64> {
        PairCounts {
            n_trials: self.n_trials.to_f64(),
            pp: self.pp.to_f64(),
            pm: self.pm.to_f64(),
            mp: self.mp.to_f64(),
            mm: self.mm.to_f64(),
            pn: self.pn.to_f64(),
            mn: self.mn.to_f64(),
            np: self.np.to_f64(),
            nm: self.nm.to_f64(),
            nn: self.nn.to_f64(),
        }
    }

    /// Trials where both sides detected.
    pub fn coincidences(&self) -> f64 {
        self.pp.to_f64() + self.pm.to_f64() + self.mp.to_f64() + self.mm.to_f64()
    }

    /// Singles count N_{+.}: Alice detected +, regardless of Bob.
    pub fn alice_plus_singles(&self) -> f64 {
        self.pp.to_f64() + self.pm.to_f64() + self.pn.to_f64()
    }

    /// Singles count N_{.+}: Bob detected +, regardless of Alice.
    pub fn bob_plus_singles(&self) -> f64 {
        self.pp.to_f64() + self.mp.to_f64() + self.np.to_f64()
    }

    pub fn alice_fired(&self) -> f64 {
        self.coincidences() + self.pn.to_f64() + self.mn.to_f64()
    }

    pub fn bob_fired(&self) -> f64 {
        self.coincidences() + self.np.to_f64() + self.nm.to_f64()
    }

    /// Alice's outcome distribution [plus, minus, none].
    pub fn alice_marginal(&self) -> [f64; 3] {
        [
            self.pp.to_f64() + self.pm.to_f64() + self.pn.to_f64(),
            self.mp.to_f64() + self.mm.to_f64() + self.mn.to_f64(),
            self.np.to_f64() + self.nm.to_f64() + self.nn.to_f64(),
        ]
    }

    /// Bob's outcome distribution [plus, minus, none].
    pub fn bob_marginal(&self) -> [f64; 3] {
        [
            self.pp.to_f64() + self.mp.to_f64() + self.np.to_f64(),
            self.pm.to_f64() + self.mm.to_f64() + self.nm.to_f64(),
            self.pn.to_f64() + self.mn.to_f64() + self.nn.to_f64(),
        ]
    }

    fn cells(&self) -> [f64; 9] {
        [
            self.pp.to_f64(),
            self.pm.to_f64(),
            self.mp.to_f64(),
            self.mm.to_f64(),
            self.pn.to_f64(),
            self.mn.to_f64(),
            self.np.to_f64(),
            self.nm.to_f64(),
            self.nn.to_f64(),
        ]
    }
}

/// Full counts for a setting quadruple.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CountsTable<T> {
    pub pairs: [PairCounts<T>; 4],
}

impl<T: CountValue> CountsTable<T> {
    pub fn pair(&self, idx: PairIndex) -> &PairCounts<T> {
        &self.pairs[idx as usize]
    }

    pub fn to_f64(&self) -> CountsTable<f64> {
        CountsTable {
            pairs: [
                self.pairs[0].to_f64(),
                self.pairs[1].to_f64(),
                self.pairs[2].to_f64(),
                self.pairs[3].to_f64(),
            ],
        }
    }

    pub fn total_trials(&self) -> f64 {
        self.pairs.iter().map(|p| p.n_trials.to_f64()).sum()
    }

    /// Checks nonnegativity and per-pair count conservation
    /// (cells sum to n_trials, within `tol` for real-valued tables).
    pub fn validate(&self, tol: f64) -> Result<(), CountsError> {
        for (i, p) in self.pairs.iter().enumerate() {
            let cells = p.cells();
            if cells.iter().any(|&c| c < 0.0) {
                return Err(CountsError::Negative(i));
            }
            let sum: f64 = cells.iter().sum();
            let n = p.n_trials.to_f64();
            if (sum - n).abs() > tol.max(1e-9 * n.max(1.0)) {
                return Err(CountsError::NotConserved(i, sum, n));
            }
        }
        Ok(())
    }
}

impl CountsTable<u64> {
    pub fn record(&mut self, pair: PairIndex, alice: Outcome, bob: Outcome) {
        self.pairs[pair as usize].record(alice, bob);
    }

    pub fn merge(&mut self, other: &Self) {
        for (p, q) in self.pairs.iter_mut().zip(other.pairs.iter()) {
            p.merge(q);
        }
    }
}
