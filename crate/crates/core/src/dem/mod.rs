//! Detector error models: representation, text format, sampling and
//! pure-error solves.

mod parse;
mod sample;
mod shots;

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::gf2::{BitMatrix, BitVec, Gf2Solver};

pub use parse::{parse_dem, parse_dem_with_warnings, serialize_dem, ParseWarning};
pub use sample::sample_shots;
pub use shots::{decode_bits, encode_bits, read_shots, write_bits, write_shots, ShotBatch, ShotFormat};

/// Probabilities are clamped into `[PROB_FLOOR, 1 - PROB_FLOOR]` on load.
pub const PROB_FLOOR: f64 = 1e-9;

/// A length-n error configuration.
pub type ErrorConfig = BitVec;
/// A length-m detection-event vector.
pub type Syndrome = BitVec;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// XOR-combination of two independent flips.
pub fn xor_combine(p1: f64, p2: f64) -> f64 {
    p1 * (1.0 - p2) + p2 * (1.0 - p1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMechanism {
    pub prob: f64,
    /// Sorted, deduplicated detector indices.
    pub detectors: Vec<usize>,
    pub flips_logical: bool,
}

impl ErrorMechanism {
    pub fn new(prob: f64, detectors: impl IntoIterator<Item = usize>, flips_logical: bool) -> Self {
        Self {
            prob,
            detectors: cancel_pairs(detectors),
            flips_logical,
        }
    }
}

/// Sorts and cancels detectors that appear an even number of times.
fn cancel_pairs(detectors: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut ds: Vec<usize> = detectors.into_iter().collect();
    ds.sort_unstable();
    let mut out: Vec<usize> = Vec::with_capacity(ds.len());
    for d in ds {
        if out.last() == Some(&d) {
            out.pop();
        } else {
            out.push(d);
        }
    }
    out
}

/// Hypergraph of independent error mechanisms over `m` detectors and one
/// logical observable.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorErrorModel {
    n_detectors: usize,
    mechanisms: Vec<ErrorMechanism>,
    detector_coords: Vec<Option<Vec<f64>>>,
    pub metadata: BTreeMap<String, String>,
}

impl DetectorErrorModel {
    /// Builds a canonical model: detector sets are sorted with repeated
    /// detectors cancelled, mechanisms touching nothing are dropped,
    /// duplicates are merged and probabilities clamped.
    pub fn new(n_detectors: usize, mechanisms: Vec<ErrorMechanism>) -> Result<Self> {
        let mut merged: Vec<ErrorMechanism> = Vec::with_capacity(mechanisms.len());
        let mut index: HashMap<(Vec<usize>, bool), usize> = HashMap::new();
        for mech in mechanisms {
            if !(mech.prob > 0.0 && mech.prob < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "mechanism probability {} outside (0, 1)",
                    mech.prob
                )));
            }
            let detectors = cancel_pairs(mech.detectors);
            if let Some(&bad) = detectors.iter().find(|&&d| d >= n_detectors) {
                return Err(Error::InvalidParameter(format!(
                    "detector D{bad} out of range for {n_detectors} detectors"
                )));
            }
            if detectors.is_empty() && !mech.flips_logical {
                continue;
            }
            let key = (detectors.clone(), mech.flips_logical);
            match index.get(&key) {
                Some(&k) => merged[k].prob = xor_combine(merged[k].prob, mech.prob),
                None => {
                    index.insert(key, merged.len());
                    merged.push(ErrorMechanism {
                        prob: mech.prob,
                        detectors,
                        flips_logical: mech.flips_logical,
                    });
                }
            }
        }
        for m in &mut merged {
            m.prob = clamp_prob(m.prob);
        }
        Ok(Self {
            n_detectors,
            mechanisms: merged,
            detector_coords: vec![None; n_detectors],
            metadata: BTreeMap::new(),
        })
    }

    pub fn empty() -> Self {
        Self {
            n_detectors: 0,
            mechanisms: Vec::new(),
            detector_coords: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    #[inline]
    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    #[inline]
    pub fn n_mechanisms(&self) -> usize {
        self.mechanisms.len()
    }

    #[inline]
    pub fn mechanisms(&self) -> &[ErrorMechanism] {
        &self.mechanisms
    }

    pub fn priors(&self) -> Vec<f64> {
        self.mechanisms.iter().map(|m| m.prob).collect()
    }

    /// Copy of the model carrying the given priors (clamped).
    pub fn with_priors(&self, theta: &[f64]) -> Result<Self> {
        self.check_len(theta.len())?;
        let mut out = self.clone();
        for (m, &p) in out.mechanisms.iter_mut().zip(theta) {
            m.prob = clamp_prob(p);
        }
        Ok(out)
    }

    pub fn detector_coords(&self, j: usize) -> Option<&[f64]> {
        self.detector_coords.get(j).and_then(|c| c.as_deref())
    }

    pub fn set_detector_coords(&mut self, j: usize, coords: Vec<f64>) {
        self.detector_coords[j] = Some(coords);
    }

    pub fn has_logical(&self) -> bool {
        self.mechanisms.iter().any(|m| m.flips_logical)
    }

    pub fn is_graphlike(&self) -> bool {
        self.mechanisms.iter().all(|m| m.detectors.len() <= 2)
    }

    pub fn max_mechanism_degree(&self) -> usize {
        self.mechanisms
            .iter()
            .map(|m| m.detectors.len())
            .max()
            .unwrap_or(0)
    }

    /// Coordinate index holding the round; defaults to the last coordinate.
    pub fn round_axis(&self) -> Option<usize> {
        if let Some(axis) = self.metadata.get("round_axis") {
            return axis.parse().ok();
        }
        self.detector_coords
            .iter()
            .flatten()
            .map(|c| c.len())
            .min()
            .filter(|&len| len > 0)
            .map(|len| len - 1)
    }

    pub fn metadata_usize(&self, key: &str) -> Option<usize> {
        self.metadata.get(key).and_then(|v| v.parse().ok())
    }

    /// `m × n` incidence matrix between detectors and mechanisms.
    pub fn incidence(&self) -> BitMatrix {
        let mut h = BitMatrix::zeros(self.n_detectors, self.n_mechanisms());
        for (i, m) in self.mechanisms.iter().enumerate() {
            for &j in &m.detectors {
                h.set(j, i, true);
            }
        }
        h
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.n_mechanisms() {
            return Err(Error::LengthMismatch {
                expected: self.n_mechanisms(),
                got,
            });
        }
        Ok(())
    }

    /// Detection events and logical flip produced by the error configuration `e`.
    pub fn syndrome_of(&self, e: &ErrorConfig) -> Result<(Syndrome, bool)> {
        self.check_len(e.len())?;
        let mut s = BitVec::zeros(self.n_detectors);
        let mut logical = false;
        for i in e.iter_ones() {
            let m = &self.mechanisms[i];
            for &j in &m.detectors {
                s.flip(j);
            }
            logical ^= m.flips_logical;
        }
        Ok((s, logical))
    }

    /// Logical action of an error configuration.
    pub fn logical_of(&self, e: &ErrorConfig) -> bool {
        e.iter_ones()
            .filter(|&i| self.mechanisms[i].flips_logical)
            .count()
            % 2
            == 1
    }

    /// Factorizes the incidence matrix for repeated pure-error solves.
    pub fn pure_error_solver(&self) -> PureErrorSolver {
        PureErrorSolver {
            solver: Gf2Solver::new(&self.incidence()),
            n_detectors: self.n_detectors,
        }
    }

    /// Some error configuration with syndrome `s`.
    pub fn pure_error(&self, s: &Syndrome) -> Result<ErrorConfig> {
        self.pure_error_solver().solve(s)
    }
}

/// Reusable GF(2) factorization of a model's incidence matrix.
#[derive(Clone, Debug)]
pub struct PureErrorSolver {
    solver: Gf2Solver,
    n_detectors: usize,
}

impl PureErrorSolver {
    pub fn solve(&self, s: &Syndrome) -> Result<ErrorConfig> {
        if s.len() != self.n_detectors {
            return Err(Error::LengthMismatch {
                expected: self.n_detectors,
                got: s.len(),
            });
        }
        self.solver.solve(s)
    }

    pub fn solve_batch(&self, batch: &ShotBatch) -> Result<Vec<ErrorConfig>> {
        use rayon::prelude::*;
        (0..batch.n_shots())
            .into_par_iter()
            .map(|k| self.solve(&batch.syndrome(k)))
            .collect()
    }
}
