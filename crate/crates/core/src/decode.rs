//! Exact maximum-likelihood decoding and logical error rates.

use rayon::prelude::*;
use serde::Serialize;

use crate::backend::{tn_contractor, Backend, TnSettings};
use crate::contract::Contractor;
use crate::dem::{DetectorErrorModel, ShotBatch};
use crate::error::{Error, Result};
use crate::gf2::BitVec;
use crate::planar::PlanarSolver;
use crate::tnbuild::{build_decoder_network, build_likelihood_network};

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    /// Predicted logical flip per shot: `log_odds < 0`.
    pub predicted: BitVec,
    /// `log(p0 / p1)` per shot; infinite when one class is empty.
    pub log_odds: Vec<f64>,
    /// Shots where both classes were equally likely (predicted 0).
    pub ties: Vec<usize>,
}

impl DecodeResult {
    fn from_log_odds(log_odds: Vec<f64>) -> Self {
        let mut predicted = BitVec::zeros(log_odds.len());
        let mut ties = Vec::new();
        for (k, &x) in log_odds.iter().enumerate() {
            if x < 0.0 {
                predicted.set(k, true);
            } else if x == 0.0 || x.is_nan() {
                ties.push(k);
            }
        }
        Self {
            predicted,
            log_odds,
            ties,
        }
    }
}

/// Coset comparison through the planar dual Ising model.
pub fn decode_planar(model: &DetectorErrorModel, theta: &[f64], batch: &ShotBatch) -> Result<DecodeResult> {
    PlanarDecoder::new(model)?.decode(theta, batch)
}

pub struct PlanarDecoder {
    solver: PlanarSolver,
}

impl PlanarDecoder {
    pub fn new(model: &DetectorErrorModel) -> Result<Self> {
        Ok(Self {
            solver: PlanarSolver::new(model)?,
        })
    }

    pub fn decode(&self, theta: &[f64], batch: &ShotBatch) -> Result<DecodeResult> {
        let odds: Vec<f64> = (0..batch.n_shots())
            .into_par_iter()
            .map(|k| {
                let (a, b) = self.solver.coset_log_probs(theta, &batch.syndrome(k))?;
                Ok(if a == b { 0.0 } else { a - b })
            })
            .collect::<Result<_>>()?;
        Ok(DecodeResult::from_log_odds(odds))
    }
}

/// Decoder network (value `p0 - p1`) together with the likelihood network
/// (value `p0 + p1`).
pub struct TnDecoder {
    difference: Contractor,
    total: Contractor,
}

impl TnDecoder {
    pub fn new(model: &DetectorErrorModel, settings: &TnSettings) -> Result<Self> {
        let th = model.priors();
        Ok(Self {
            difference: tn_contractor(build_decoder_network(model, &th)?, settings)?,
            total: tn_contractor(build_likelihood_network(model, &th)?, settings)?,
        })
    }

    pub fn decode(&self, theta: &[f64], batch: &ShotBatch) -> Result<DecodeResult> {
        let a = self.difference.contract(theta, batch)?;
        let p = self.total.contract(theta, batch)?;
        let odds = a
            .iter()
            .zip(&p)
            .map(|(a, p)| {
                if a.sign == 0.0 || p.sign <= 0.0 {
                    return 0.0;
                }
                // r = (p0 - p1) / (p0 + p1); log(p0 / p1) = log((1 + r) / (1 - r)).
                let r = (a.sign * (a.log_abs - p.log_abs).exp()).clamp(-1.0, 1.0);
                r.ln_1p() - (-r).ln_1p()
            })
            .collect();
        Ok(DecodeResult::from_log_odds(odds))
    }
}

/// Sign of the decoder-network contraction, with log-odds from the
/// companion likelihood contraction.
pub fn decode_tn(
    model: &DetectorErrorModel,
    theta: &[f64],
    batch: &ShotBatch,
    settings: &TnSettings,
) -> Result<DecodeResult> {
    TnDecoder::new(model, settings)?.decode(theta, batch)
}

pub fn decode(
    model: &DetectorErrorModel,
    theta: &[f64],
    batch: &ShotBatch,
    backend: Backend,
    settings: &TnSettings,
) -> Result<DecodeResult> {
    if theta.len() != model.n_mechanisms() {
        return Err(Error::LengthMismatch {
            expected: model.n_mechanisms(),
            got: theta.len(),
        });
    }
    match backend {
        Backend::Planar => decode_planar(model, theta, batch),
        Backend::TensorNetwork => decode_tn(model, theta, batch, settings),
    }
}

const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if k as f64 == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Per-round rate from a total rate over `rounds` rounds.
pub fn per_round_rate(ler: f64, rounds: usize) -> f64 {
    let f = 1.0 - 2.0 * ler;
    if f <= 0.0 {
        return 0.5;
    }
    0.5 * (1.0 - f.powf(1.0 / rounds as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LerReport {
    pub shots: usize,
    pub failures: usize,
    pub ler: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub rounds: Option<usize>,
    pub per_round: Option<f64>,
    pub ties: usize,
}

impl LerReport {
    pub fn new(predicted: &BitVec, labels: &BitVec, rounds: Option<usize>, ties: usize) -> Result<Self> {
        if predicted.len() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: labels.len(),
                got: predicted.len(),
            });
        }
        let mut diff = predicted.clone();
        diff.xor_assign(labels);
        let failures = diff.count_ones();
        let shots = labels.len();
        let ler = if shots == 0 { 0.0 } else { failures as f64 / shots as f64 };
        let (wilson_low, wilson_high) = wilson_interval(failures, shots, Z95);
        let rounds = rounds.filter(|&r| r > 0);
        Ok(Self {
            shots,
            failures,
            ler,
            wilson_low,
            wilson_high,
            rounds,
            per_round: rounds.map(|r| per_round_rate(ler, r)),
            ties,
        })
    }
}

/// Decodes labelled shots and reports the logical error rate.
pub fn evaluate_ler(
    model: &DetectorErrorModel,
    theta: &[f64],
    batch: &ShotBatch,
    backend: Backend,
    settings: &TnSettings,
) -> Result<LerReport> {
    let labels = batch
        .logical_flips()
        .ok_or_else(|| Error::Missing("logical labels for the shots".into()))?;
    let rounds = model.metadata_usize("r");
    if rounds.is_none() {
        log::warn!("model has no round count; per-round rate omitted");
    }
    let res = decode(model, theta, batch, backend, settings)?;
    LerReport::new(&res.predicted, labels, rounds, res.ties.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::{generate, truncate, CodeFamily};
    use crate::dem::{sample_shots, ErrorMechanism};
    use crate::oracle;

    fn all_syndromes(m: usize) -> ShotBatch {
        let rows: Vec<BitVec> = (0..1usize << m)
            .map(|x| BitVec::from_ones(m, (0..m).filter(|j| (x >> j) & 1 == 1)))
            .collect();
        ShotBatch::from_syndromes(m, &rows).unwrap()
    }

    /// Every prediction must pick a class whose probability is maximal
    /// (within rounding), on every syndrome with nonzero probability.
    fn assert_ml(model: &DetectorErrorModel, res: &DecodeResult) {
        let th = model.priors();
        let joint = oracle::joint_distribution(model, &th).unwrap();
        for (k, [p0, p1]) in joint.iter().enumerate() {
            let total = p0 + p1;
            if total == 0.0 {
                continue;
            }
            let chosen = if res.predicted.get(k) { p1 } else { p0 };
            assert!(*chosen >= p0.max(*p1) - 1e-9 * total, "syndrome {k}: {p0} {p1}");
            if (p0 - p1).abs() > 1e-9 * total {
                let want = (p0 / p1).ln();
                let got = res.log_odds[k];
                assert!(
                    (got - want).abs() <= 1e-6 * want.abs().max(1.0) || (want.is_infinite() && got == want),
                    "syndrome {k}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn both_decoders_are_maximum_likelihood() {
        let rep = generate(CodeFamily::Repetition, 3, 3, 0.04).unwrap();
        let batch = all_syndromes(rep.n_detectors());
        assert_ml(&rep, &decode_planar(&rep, &rep.priors(), &batch).unwrap());
        assert_ml(&rep, &decode_tn(&rep, &rep.priors(), &batch, &TnSettings::default()).unwrap());
        let surf = truncate(&generate(CodeFamily::Surface, 3, 2, 0.02).unwrap(), 20).unwrap();
        let batch = all_syndromes(surf.n_detectors());
        assert_ml(&surf, &decode_tn(&surf, &surf.priors(), &batch, &TnSettings::default()).unwrap());
    }

    #[test]
    fn trivial_syndrome_and_single_boundary_mechanism() {
        let rep = generate(CodeFamily::Repetition, 3, 2, 0.001).unwrap();
        let zero = ShotBatch::from_syndromes(rep.n_detectors(), &[BitVec::zeros(rep.n_detectors())]).unwrap();
        for backend in [Backend::Planar, Backend::TensorNetwork] {
            let r = decode(&rep, &rep.priors(), &zero, backend, &TnSettings::default()).unwrap();
            assert!(!r.predicted.get(0) && r.log_odds[0] > 0.0);
        }
        let mut one = DetectorErrorModel::new(1, vec![ErrorMechanism::new(0.1, [0], true)]).unwrap();
        one.set_detector_coords(0, vec![0.0, 0.0]);
        let s = ShotBatch::from_syndromes(1, &[BitVec::from_ones(1, [0])]).unwrap();
        for backend in [Backend::Planar, Backend::TensorNetwork] {
            let r = decode(&one, &[0.1], &s, backend, &TnSettings::default()).unwrap();
            assert!(r.predicted.get(0), "{backend}");
            assert_eq!(r.log_odds[0], f64::NEG_INFINITY);
        }
    }

    #[test]
    fn model_without_logical_always_predicts_zero() {
        let mut m = DetectorErrorModel::new(
            2,
            vec![ErrorMechanism::new(0.2, [0], false), ErrorMechanism::new(0.3, [0, 1], false)],
        )
        .unwrap();
        m.set_detector_coords(0, vec![0.0, 0.0]);
        m.set_detector_coords(1, vec![1.0, 0.0]);
        let batch = all_syndromes(2);
        for backend in [Backend::Planar, Backend::TensorNetwork] {
            let r = decode(&m, &m.priors(), &batch, backend, &TnSettings::default()).unwrap();
            assert!(r.predicted.is_zero(), "{backend}");
        }
    }

    #[test]
    fn backends_agree_on_random_shots() {
        let m = generate(CodeFamily::Repetition, 5, 3, 0.05).unwrap();
        let batch = sample_shots(&m, 1000, 11);
        let a = decode_planar(&m, &m.priors(), &batch).unwrap();
        let b = decode_tn(&m, &m.priors(), &batch, &TnSettings::default()).unwrap();
        assert_eq!(a.predicted, b.predicted);
        for (x, y) in a.log_odds.iter().zip(&b.log_odds) {
            assert!((x - y).abs() < 1e-6 * x.abs().max(1.0));
        }
    }

    #[test]
    fn exact_tie_is_flagged() {
        // Two mechanisms with equal prior explain the same syndrome with
        // opposite logical action.
        let m = DetectorErrorModel::new(
            1,
            vec![ErrorMechanism::new(0.1, [0], false), ErrorMechanism::new(0.1, [0], true)],
        )
        .unwrap();
        let s = ShotBatch::from_syndromes(1, &[BitVec::from_ones(1, [0])]).unwrap();
        let r = decode_tn(&m, &m.priors(), &s, &TnSettings::default()).unwrap();
        assert_eq!(r.ties, vec![0]);
        assert!(!r.predicted.get(0));
    }

    #[test]
    fn wilson_interval_values() {
        let (lo, hi) = wilson_interval(0, 10, Z95);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.277_532).abs() < 1e-5);
        let (lo, hi) = wilson_interval(50, 100, Z95);
        assert!((lo - 0.403_831).abs() < 1e-5 && (hi - 0.596_169).abs() < 1e-5);
    }

    #[test]
    fn report_rates() {
        let labels = BitVec::from_ones(8, [1, 3]);
        let perfect = LerReport::new(&labels, &labels, Some(5), 0).unwrap();
        assert_eq!((perfect.failures, perfect.ler, perfect.per_round), (0, 0.0, Some(0.0)));
        let wrong = LerReport::new(&BitVec::zeros(8), &labels, Some(1), 0).unwrap();
        assert_eq!(wrong.ler, 0.25);
        assert!((wrong.per_round.unwrap() - 0.25).abs() < 1e-15);
        let r = per_round_rate(0.1, 5);
        assert!(((1.0 - 2.0 * r).powi(5) - 0.8).abs() < 1e-12);
        assert!(LerReport::new(&BitVec::zeros(3), &labels, None, 0).is_err());
    }

    #[test]
    fn random_guessing_is_calibrated() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let labels = BitVec::from_bools(&(0..n).map(|_| rng.random_bool(0.5)).collect::<Vec<_>>());
        let guess = BitVec::from_bools(&(0..n).map(|_| rng.random_bool(0.5)).collect::<Vec<_>>());
        let r = LerReport::new(&guess, &labels, None, 0).unwrap();
        assert!(r.wilson_low <= 0.5 && 0.5 <= r.wilson_high, "{r:?}");
    }

    #[test]
    fn evaluation_needs_labels() {
        let m = generate(CodeFamily::Repetition, 3, 1, 0.05).unwrap();
        let batch = sample_shots(&m, 100, 1);
        let plain = ShotBatch::new(batch.syndromes().clone(), None).unwrap();
        assert!(evaluate_ler(&m, &m.priors(), &plain, Backend::Planar, &TnSettings::default()).is_err());
        let r = evaluate_ler(&m, &m.priors(), &batch, Backend::Planar, &TnSettings::default()).unwrap();
        assert_eq!(r.shots, 100);
        assert!(r.wilson_low <= r.ler && r.ler <= r.wilson_high);
    }
}
