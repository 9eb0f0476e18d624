//! Brute-force references for small instances.
//!
//! Nothing here calls into the likelihood backends or the GF(2) code: parities
//! are recomputed from raw detector lists and sums use compensated
//! accumulation.

use crate::dem::DetectorErrorModel;
use crate::error::{Error, Result};
use crate::gf2::BitVec;

pub const MAX_MECHANISMS: usize = 24;
pub const MAX_DETECTORS: usize = 24;
pub const MAX_SPINS: usize = 20;

/// Neumaier compensated sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn check_sizes(model: &DetectorErrorModel, theta: &[f64]) -> Result<()> {
    if theta.len() != model.n_mechanisms() {
        return Err(Error::LengthMismatch {
            expected: model.n_mechanisms(),
            got: theta.len(),
        });
    }
    if model.n_mechanisms() > MAX_MECHANISMS {
        return Err(Error::TooLarge {
            what: "mechanisms",
            value: model.n_mechanisms(),
            limit: MAX_MECHANISMS,
        });
    }
    if model.n_detectors() > MAX_DETECTORS {
        return Err(Error::TooLarge {
            what: "detectors",
            value: model.n_detectors(),
            limit: MAX_DETECTORS,
        });
    }
    Ok(())
}

fn masks(model: &DetectorErrorModel) -> Vec<(u32, bool)> {
    model
        .mechanisms()
        .iter()
        .map(|m| {
            let mut mask = 0u32;
            for &j in &m.detectors {
                mask ^= 1 << j;
            }
            (mask, m.flips_logical)
        })
        .collect()
}

fn syndrome_index(s: &BitVec) -> u32 {
    let mut idx = 0u32;
    for j in 0..s.len() {
        if s.get(j) {
            idx |= 1 << j;
        }
    }
    idx
}

/// Joint distribution `p(s, l)` for every syndrome index, by depth-first
/// enumeration of all error configurations.
pub fn joint_distribution(model: &DetectorErrorModel, theta: &[f64]) -> Result<Vec<[f64; 2]>> {
    check_sizes(model, theta)?;
    let masks = masks(model);
    let mut acc = vec![[KahanSum::default(); 2]; 1usize << model.n_detectors()];
    fn walk(
        i: usize,
        prob: f64,
        synd: u32,
        logical: bool,
        masks: &[(u32, bool)],
        theta: &[f64],
        acc: &mut [[KahanSum; 2]],
    ) {
        if i == masks.len() {
            acc[synd as usize][logical as usize].add(prob);
            return;
        }
        walk(i + 1, prob * (1.0 - theta[i]), synd, logical, masks, theta, acc);
        let (mask, l) = masks[i];
        walk(i + 1, prob * theta[i], synd ^ mask, logical ^ l, masks, theta, acc);
    }
    walk(0, 1.0, 0, false, &masks, theta, &mut acc);
    Ok(acc
        .into_iter()
        .map(|[a, b]| [a.value(), b.value()])
        .collect())
}

/// `p(s)` summed over all configurations with syndrome `s`.
pub fn brute_prob(model: &DetectorErrorModel, theta: &[f64], s: &BitVec) -> Result<f64> {
    let (p0, p1) = coset_probs(model, theta, s)?;
    let mut k = KahanSum::default();
    k.add(p0);
    k.add(p1);
    Ok(k.value())
}

fn coset_probs(model: &DetectorErrorModel, theta: &[f64], s: &BitVec) -> Result<(f64, f64)> {
    check_sizes(model, theta)?;
    if s.len() != model.n_detectors() {
        return Err(Error::LengthMismatch {
            expected: model.n_detectors(),
            got: s.len(),
        });
    }
    let target = syndrome_index(s);
    let masks = masks(model);
    let n = masks.len();
    let mut acc = [KahanSum::default(); 2];
    for e in 0u64..(1u64 << n) {
        let mut synd = 0u32;
        let mut logical = false;
        for (i, &(mask, l)) in masks.iter().enumerate() {
            if (e >> i) & 1 == 1 {
                synd ^= mask;
                logical ^= l;
            }
        }
        if synd != target {
            continue;
        }
        let mut p = 1.0;
        for (i, &t) in theta.iter().enumerate() {
            p *= if (e >> i) & 1 == 1 { t } else { 1.0 - t };
        }
        acc[logical as usize].add(p);
    }
    Ok((acc[0].value(), acc[1].value()))
}

/// Maximum-likelihood logical class and both coset probabilities.
/// Ties resolve to class 0.
pub fn brute_ml_decode(
    model: &DetectorErrorModel,
    theta: &[f64],
    s: &BitVec,
) -> Result<(bool, f64, f64)> {
    let (p0, p1) = coset_probs(model, theta, s)?;
    Ok((p1 > p0, p0, p1))
}

/// Closed form `2^-m sum_a (-1)^(a.s) prod_i [(1 - t_i) + t_i (-1)^|a & d_i|]`.
pub fn character_sum_prob(model: &DetectorErrorModel, theta: &[f64], s: &BitVec) -> Result<f64> {
    check_sizes(model, theta)?;
    let m = model.n_detectors();
    let target = syndrome_index(s);
    let masks = masks(model);
    let mut acc = KahanSum::default();
    for alpha in 0u32..(1u32 << m) {
        let mut term = if (alpha & target).count_ones() % 2 == 1 {
            -1.0
        } else {
            1.0
        };
        for (&(mask, _), &t) in masks.iter().zip(theta) {
            term *= if (alpha & mask).count_ones() % 2 == 1 {
                1.0 - 2.0 * t
            } else {
                1.0
            };
        }
        acc.add(term);
    }
    Ok(acc.value() / (1u64 << m) as f64)
}

/// `log p(s)` accumulated entirely in the log domain, for instances whose
/// probability underflows `f64`.
pub fn brute_log_prob(model: &DetectorErrorModel, theta: &[f64], s: &BitVec) -> Result<f64> {
    check_sizes(model, theta)?;
    let target = syndrome_index(s);
    let masks = masks(model);
    let n = masks.len();
    let log_t: Vec<f64> = theta.iter().map(|t| t.ln()).collect();
    let log_1mt: Vec<f64> = theta.iter().map(|t| (-t).ln_1p()).collect();
    let mut terms = Vec::new();
    for e in 0u64..(1u64 << n) {
        let mut synd = 0u32;
        for (i, &(mask, _)) in masks.iter().enumerate() {
            if (e >> i) & 1 == 1 {
                synd ^= mask;
            }
        }
        if synd != target {
            continue;
        }
        let mut lp = KahanSum::default();
        for i in 0..n {
            lp.add(if (e >> i) & 1 == 1 { log_t[i] } else { log_1mt[i] });
        }
        terms.push(lp.value());
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(max);
    }
    let mut acc = KahanSum::default();
    for t in &terms {
        acc.add((t - max).exp());
    }
    Ok(max + acc.value().ln())
}

/// Constraint on a spin pair during enumeration: `(a, b, equal)`.
pub type SpinConstraint = (usize, usize, bool);

/// `log sum_sigma exp(sum_e J_e s_u s_v)` by enumeration over all spins.
pub fn brute_partition(
    n_spins: usize,
    edges: &[(usize, usize, f64)],
    constraint: Option<SpinConstraint>,
) -> Result<f64> {
    if n_spins > MAX_SPINS {
        return Err(Error::TooLarge {
            what: "spins",
            value: n_spins,
            limit: MAX_SPINS,
        });
    }
    let mut energies = Vec::with_capacity(1 << n_spins);
    for state in 0u32..(1u32 << n_spins) {
        let spin = |v: usize| if (state >> v) & 1 == 1 { -1.0 } else { 1.0 };
        if let Some((a, b, equal)) = constraint {
            if (spin(a) == spin(b)) != equal {
                continue;
            }
        }
        let mut e = KahanSum::default();
        for &(u, v, j) in edges {
            e.add(j * spin(u) * spin(v));
        }
        energies.push(e.value());
    }
    let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut acc = KahanSum::default();
    for e in &energies {
        acc.add((e - max).exp());
    }
    Ok(max + acc.value().ln())
}

/// Central finite-difference gradient. Coordinates within `h` of 0 or 1 are
/// stepped in logit space instead.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut grad = Vec::with_capacity(theta.len());
    let mut x = theta.to_vec();
    for i in 0..theta.len() {
        let t = theta[i];
        let (lo, hi) = if t - h > 0.0 && t + h < 1.0 {
            (t - h, t + h)
        } else {
            let phi = (t / (1.0 - t)).ln();
            let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
            (sig(phi - h), sig(phi + h))
        };
        x[i] = hi;
        let fp = f(&x);
        x[i] = lo;
        let fm = f(&x);
        x[i] = t;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite function value while differencing coordinate {i}"
            )));
        }
        grad.push((fp - fm) / (hi - lo));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dem::ErrorMechanism;

    fn toy() -> DetectorErrorModel {
        DetectorErrorModel::new(
            3,
            vec![
                ErrorMechanism::new(0.1, [0], false),
                ErrorMechanism::new(0.2, [0, 1], false),
                ErrorMechanism::new(0.05, [1, 2], true),
                ErrorMechanism::new(0.3, [0, 1, 2], false),
                ErrorMechanism::new(0.07, [2], true),
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_mechanism() {
        let m = DetectorErrorModel::new(1, vec![ErrorMechanism::new(0.1, [0], false)]).unwrap();
        let p1 = brute_prob(&m, &[0.1], &BitVec::from_ones(1, [0])).unwrap();
        assert!((p1 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn total_probability_and_character_sum_agree() {
        let m = toy();
        let th = m.priors();
        let mut total = KahanSum::default();
        for idx in 0..8u32 {
            let s = BitVec::from_bools(&[(idx & 1) != 0, (idx & 2) != 0, (idx & 4) != 0]);
            let p = brute_prob(&m, &th, &s).unwrap();
            let c = character_sum_prob(&m, &th, &s).unwrap();
            assert!((p - c).abs() <= 1e-12 * p.max(1e-300), "{p} vs {c}");
            let joint = joint_distribution(&m, &th).unwrap()[idx as usize];
            assert!((joint[0] + joint[1] - p).abs() < 1e-15);
            let lp = brute_log_prob(&m, &th, &s).unwrap();
            assert!((lp - p.ln()).abs() < 1e-12);
            total.add(p);
        }
        assert!((total.value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decode_without_logical_mechanisms() {
        let m = DetectorErrorModel::new(1, vec![ErrorMechanism::new(0.2, [0], false)]).unwrap();
        let (l, _, p1) = brute_ml_decode(&m, &[0.2], &BitVec::from_ones(1, [0])).unwrap();
        assert!(!l);
        assert_eq!(p1, 0.0);
    }

    #[test]
    fn decode_single_logical_mechanism() {
        let m = DetectorErrorModel::new(1, vec![ErrorMechanism::new(0.1, [0], true)]).unwrap();
        let (l, p0, p1) = brute_ml_decode(&m, &[0.1], &BitVec::from_ones(1, [0])).unwrap();
        assert!(l);
        assert_eq!(p0, 0.0);
        assert!((p1 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn partition_closed_forms() {
        let j: f64 = 0.7;
        let z = brute_partition(2, &[(0, 1, j)], None).unwrap();
        assert!((z - (4.0 * j.cosh()).ln()).abs() < 1e-14);
        let z0 = brute_partition(5, &[(0, 1, 0.0), (2, 3, 0.0)], None).unwrap();
        assert!((z0 - 5.0 * 2f64.ln()).abs() < 1e-14);
        let same = brute_partition(2, &[(0, 1, j)], Some((0, 1, true))).unwrap();
        assert!((same - (2.0 * j.exp()).ln()).abs() < 1e-14);
    }

    #[test]
    fn fd_grad_basics() {
        let g = fd_grad(|t| t[0], &[0.3, 0.4], 1e-6).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-8 && g[1].abs() < 1e-12);
        let g = fd_grad(|_| 2.0, &[0.3], 1e-6).unwrap();
        assert_eq!(g, vec![0.0]);
        let g = fd_grad(|t| t[0].ln(), &[1e-7], 1e-6).unwrap();
        assert!((g[0] - 1e7).abs() / 1e7 < 1e-5);
        assert!(fd_grad(|t| (t[0] - 0.5).ln(), &[0.5], 1e-6).is_err());
    }
}
