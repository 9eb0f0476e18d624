//! Exact likelihoods of graphlike planar models through a dual Ising model.
//!
//! Fix a pure error `e0` of the syndrome. Every configuration with the same
//! syndrome is `e0 + c` for a cycle `c` of the matching graph, and cycles are
//! in two-to-one correspondence with spin configurations on the faces. With
//! `J_i = (-1)^{e0_i} log((1 - theta_i) / theta_i) / 2`,
//!
//! `p(s) = 1/2 * prod_i sqrt(theta_i (1 - theta_i)) * sum_spins exp(sum_i J_i s_u s_v)`,
//!
//! and the partition function is evaluated by the Kac–Ward determinant.

mod dual;
mod embedding;
mod kacward;
mod lu;
mod random;

use std::f64::consts::LN_2;

use rayon::prelude::*;

pub use dual::{DualEdge, DualStructure};
pub use embedding::{wrap_angle, Embedding};
pub use kacward::{log_cosh, EdgeWeight, KacWard, KwResult};
pub use lu::ComplexLu;
pub use random::{random_planar_graph, RandomPlanarGraph};

use crate::dem::{DetectorErrorModel, ErrorConfig, PureErrorSolver, ShotBatch, Syndrome};
use crate::error::{Error, Result};

/// Conditioning on the relative orientation of the logical and auxiliary spins.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixLogical {
    Free,
    /// Logical spin equal to the auxiliary spin: cycles with trivial logical action.
    Plus,
    /// Logical spin opposite to the auxiliary spin.
    Minus,
}

/// Dual spin graph with couplings for one pure error.
#[derive(Clone, Debug)]
pub struct DualSpinGraph {
    pub structure: DualStructure,
    /// Coupling per dual edge.
    pub couplings: Vec<f64>,
    /// Logical action of the pure error the couplings were built from.
    pub pure_error_logical: bool,
}

impl DualSpinGraph {
    pub fn n_spins(&self) -> usize {
        self.structure.n_spins
    }

    pub fn logical_spin(&self) -> Option<usize> {
        self.structure.logical_spin
    }

    pub fn auxiliary_spin(&self) -> Option<usize> {
        self.structure.auxiliary_spin
    }

    /// `(u, v, J)` triples, self-loops included.
    pub fn spin_edges(&self) -> Vec<(usize, usize, f64)> {
        self.structure
            .edges
            .iter()
            .zip(&self.couplings)
            .map(|(e, &j)| (e.u, e.v, j))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct PartitionResult {
    pub log_z: f64,
    /// `d log Z / d J` per dual edge.
    pub grad_j: Option<Vec<f64>>,
    /// `sum_i log(theta_i (1 - theta_i)) / 2` over mechanisms with an edge.
    pub const_term: f64,
}

/// `J = log((1 - theta) / theta) / 2`.
pub fn coupling_magnitude(theta: f64) -> f64 {
    0.5 * ((1.0 - theta) / theta).ln()
}

fn kw_weights(s: &DualStructure, couplings: &[f64], fix: FixLogical) -> (Vec<EdgeWeight>, f64) {
    let mut loops = 0.0;
    for (e, &j) in s.edges.iter().zip(couplings) {
        if e.u == e.v {
            loops += j;
        }
    }
    let weights = s
        .embedded_edge
        .iter()
        .map(|k| match k {
            Some(k) => EdgeWeight::Coupling(couplings[*k]),
            None => match fix {
                FixLogical::Free => EdgeWeight::Absent,
                FixLogical::Plus => EdgeWeight::Pin(1.0),
                FixLogical::Minus => EdgeWeight::Pin(-1.0),
            },
        })
        .collect();
    (weights, loops)
}

/// Precomputed planar likelihood evaluator for one model.
#[derive(Clone, Debug)]
pub struct PlanarSolver {
    n_mechanisms: usize,
    structure: DualStructure,
    kw: KacWard,
    pure: PureErrorSolver,
    flips_logical: Vec<bool>,
}

impl PlanarSolver {
    pub fn new(model: &DetectorErrorModel) -> Result<Self> {
        let structure = dual::build_structure(model)?;
        let kw = KacWard::combinatorial(structure.embedding.clone())?;
        Ok(Self {
            n_mechanisms: model.n_mechanisms(),
            structure,
            kw,
            pure: model.pure_error_solver(),
            flips_logical: model.mechanisms().iter().map(|m| m.flips_logical).collect(),
        })
    }

    pub fn structure(&self) -> &DualStructure {
        &self.structure
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_mechanisms {
            return Err(Error::LengthMismatch {
                expected: self.n_mechanisms,
                got: theta.len(),
            });
        }
        if let Some(t) = theta.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::InvalidParameter(format!("prior {t} outside (0, 1)")));
        }
        Ok(())
    }

    pub fn pure_error(&self, s: &Syndrome) -> Result<ErrorConfig> {
        self.pure.solve(s)
    }

    /// Dual graph for the pure error `e`.
    pub fn dual_graph(&self, theta: &[f64], e: &ErrorConfig) -> Result<DualSpinGraph> {
        self.check_theta(theta)?;
        if e.len() != self.n_mechanisms {
            return Err(Error::LengthMismatch {
                expected: self.n_mechanisms,
                got: e.len(),
            });
        }
        let couplings = self
            .structure
            .edges
            .iter()
            .map(|de| {
                let j = coupling_magnitude(theta[de.mechanism]);
                if e.get(de.mechanism) {
                    -j
                } else {
                    j
                }
            })
            .collect();
        let pure_error_logical = e
            .iter_ones()
            .filter(|&i| self.flips_logical[i])
            .count()
            % 2
            == 1;
        Ok(DualSpinGraph {
            structure: self.structure.clone(),
            couplings,
            pure_error_logical,
        })
    }

    fn partition(
        &self,
        couplings: &[f64],
        fix: FixLogical,
        with_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>)> {
        let s = &self.structure;
        if fix != FixLogical::Free && s.pin_edge().is_none() {
            // Every cycle has trivial logical action.
            return match fix {
                FixLogical::Plus => self.partition(couplings, FixLogical::Free, with_grad),
                _ => Ok((f64::NEG_INFINITY, with_grad.then(|| vec![0.0; s.edges.len()]))),
            };
        }
        let (weights, loops) = kw_weights(s, couplings, fix);
        let r = self.kw.log_partition(&weights, with_grad)?;
        let grad = r.grad.map(|g| {
            let mut out = vec![0.0; s.edges.len()];
            for (k, e) in s.edges.iter().enumerate() {
                if e.u == e.v {
                    out[k] = 1.0;
                }
            }
            for (w, k) in g.iter().zip(&s.embedded_edge) {
                if let Some(k) = k {
                    out[*k] = *w;
                }
            }
            out
        });
        Ok((r.log_z + loops, grad))
    }

    fn const_term(&self, theta: &[f64]) -> f64 {
        self.structure
            .edges
            .iter()
            .map(|e| {
                let t = theta[e.mechanism];
                0.5 * (t * (1.0 - t)).ln()
            })
            .sum()
    }

    /// Kac–Ward partition function of a dual graph built by this solver.
    pub fn log_partition(&self, graph: &DualSpinGraph, fix: FixLogical) -> Result<PartitionResult> {
        let (log_z, grad_j) = self.partition(&graph.couplings, fix, true)?;
        Ok(PartitionResult {
            log_z,
            grad_j,
            const_term: 0.0,
        })
    }

    /// `log p(s)`.
    pub fn log_prob(&self, theta: &[f64], s: &Syndrome) -> Result<f64> {
        let e = self.pure_error(s)?;
        let g = self.dual_graph(theta, &e)?;
        let (log_z, _) = self.partition(&g.couplings, FixLogical::Free, false)?;
        Ok(-LN_2 + log_z + self.const_term(theta))
    }

    /// `log p(s)` and its gradient with respect to `theta`.
    pub fn log_prob_and_grad(&self, theta: &[f64], s: &Syndrome) -> Result<(f64, Vec<f64>)> {
        let e = self.pure_error(s)?;
        let g = self.dual_graph(theta, &e)?;
        let (log_z, grad_j) = self.partition(&g.couplings, FixLogical::Free, true)?;
        let grad_j = grad_j.expect("gradient requested");
        let mut grad = vec![0.0; self.n_mechanisms];
        for (k, de) in self.structure.edges.iter().enumerate() {
            let i = de.mechanism;
            let t = theta[i];
            let q = 2.0 * t * (1.0 - t);
            let sign = if e.get(i) { -1.0 } else { 1.0 };
            grad[i] = grad_j[k] * (-sign / q) + (1.0 - 2.0 * t) / q;
        }
        Ok((-LN_2 + log_z + self.const_term(theta), grad))
    }

    /// `(log p(s, l=0), log p(s, l=1))`.
    pub fn coset_log_probs(&self, theta: &[f64], s: &Syndrome) -> Result<(f64, f64)> {
        let e = self.pure_error(s)?;
        let g = self.dual_graph(theta, &e)?;
        let base = -LN_2 + self.const_term(theta);
        let (same, _) = self.partition(&g.couplings, FixLogical::Plus, false)?;
        let (diff, _) = self.partition(&g.couplings, FixLogical::Minus, false)?;
        let (mut lp0, mut lp1) = if g.pure_error_logical {
            (base + diff, base + same)
        } else {
            (base + same, base + diff)
        };
        // Detector-free logical mechanisms mix the two classes.
        let mut keep = 1.0;
        for &i in &self.structure.logical_only {
            keep *= 1.0 - 2.0 * theta[i];
        }
        if !self.structure.logical_only.is_empty() {
            let q = 0.5 * (1.0 - keep);
            let mix = |a: f64, b: f64| log_add((1.0 - q).ln() + a, q.ln() + b);
            (lp0, lp1) = (mix(lp0, lp1), mix(lp1, lp0));
        }
        Ok((lp0, lp1))
    }

    /// Per-shot log-likelihoods of a batch, in parallel.
    pub fn batch_log_probs(&self, theta: &[f64], batch: &ShotBatch) -> Result<Vec<f64>> {
        (0..batch.n_shots())
            .into_par_iter()
            .map(|k| self.log_prob(theta, &batch.syndrome(k)))
            .collect()
    }
}

/// `log(e^a + e^b)`.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Dual spin graph of `model` for pure error `e` and priors `theta`.
pub fn build_dual_graph(
    model: &DetectorErrorModel,
    e: &ErrorConfig,
    theta: &[f64],
) -> Result<DualSpinGraph> {
    PlanarSolver::new(model)?.dual_graph(theta, e)
}

/// Kac–Ward evaluation of `graph`, optionally conditioned on the logical class.
pub fn kac_ward_log_partition(graph: &DualSpinGraph, fix: FixLogical) -> Result<PartitionResult> {
    let s = &graph.structure;
    let kw = KacWard::combinatorial(s.embedding.clone())?;
    if fix != FixLogical::Free && s.pin_edge().is_none() {
        if fix == FixLogical::Minus {
            return Ok(PartitionResult {
                log_z: f64::NEG_INFINITY,
                grad_j: None,
                const_term: 0.0,
            });
        }
        return kac_ward_log_partition(graph, FixLogical::Free);
    }
    let (weights, loops) = kw_weights(s, &graph.couplings, fix);
    let r = kw.log_partition(&weights, true)?;
    let grad_j = r.grad.map(|g| {
        let mut out: Vec<f64> = s.edges.iter().map(|e| if e.u == e.v { 1.0 } else { 0.0 }).collect();
        for (w, k) in g.iter().zip(&s.embedded_edge) {
            if let Some(k) = k {
                out[*k] = *w;
            }
        }
        out
    });
    Ok(PartitionResult {
        log_z: r.log_z + loops,
        grad_j,
        const_term: 0.0,
    })
}

/// `log p_theta(s)` through the planar mapping.
pub fn log_prob_planar(model: &DetectorErrorModel, theta: &[f64], s: &Syndrome) -> Result<f64> {
    PlanarSolver::new(model)?.log_prob(theta, s)
}

/// `d log p_theta(s) / d theta`.
pub fn grad_log_prob_planar(
    model: &DetectorErrorModel,
    theta: &[f64],
    s: &Syndrome,
) -> Result<Vec<f64>> {
    PlanarSolver::new(model)?.log_prob_and_grad(theta, s).map(|r| r.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::{generate, CodeFamily};
    use crate::dem::ErrorMechanism;
    use crate::gf2::BitVec;
    use crate::oracle;

    fn rep(d: usize, r: usize) -> DetectorErrorModel {
        generate(CodeFamily::Repetition, d, r, 0.01).unwrap()
    }

    fn random_theta(n: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0.01..0.3)).collect()
    }

    fn syndrome_from_index(m: usize, idx: usize) -> BitVec {
        BitVec::from_bools(&(0..m).map(|j| (idx >> j) & 1 == 1).collect::<Vec<_>>())
    }

    #[test]
    fn single_mechanism() {
        let mut model = DetectorErrorModel::new(1, vec![ErrorMechanism::new(0.1, [0], false)]).unwrap();
        model.set_detector_coords(0, vec![1.0, 0.0]);
        let solver = PlanarSolver::new(&model).unwrap();
        let p0 = solver.log_prob(&[0.1], &BitVec::zeros(1)).unwrap().exp();
        let p1 = solver.log_prob(&[0.1], &BitVec::from_ones(1, [0])).unwrap().exp();
        assert!((p0 - 0.9).abs() < 1e-14 && (p1 - 0.1).abs() < 1e-14);
        let (_, g) = solver.log_prob_and_grad(&[0.1], &BitVec::from_ones(1, [0])).unwrap();
        assert!((g[0] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn dual_counts_follow_euler() {
        let model = rep(3, 5);
        let solver = PlanarSolver::new(&model).unwrap();
        let s = solver.structure();
        let n_edges = model
            .mechanisms()
            .iter()
            .filter(|m| !m.detectors.is_empty())
            .count();
        assert_eq!(s.edges.len(), n_edges);
        assert_eq!(s.n_spins, n_edges - model.n_detectors() + 1);
        assert!(s.logical_spin.is_some() && s.auxiliary_spin.is_some());
    }

    #[test]
    fn couplings_vanish_at_one_half_and_flip_with_error() {
        let model = rep(3, 1);
        let solver = PlanarSolver::new(&model).unwrap();
        let n = model.n_mechanisms();
        let g = solver.dual_graph(&vec![0.5; n], &BitVec::zeros(n)).unwrap();
        assert!(g.couplings.iter().all(|&j| j == 0.0));
        let th = random_theta(n, 1);
        let a = solver.dual_graph(&th, &BitVec::zeros(n)).unwrap();
        let b = solver.dual_graph(&th, &BitVec::from_ones(n, [0])).unwrap();
        let k = solver.structure().edge_of_mechanism[0].unwrap();
        assert_eq!(a.couplings[k], -b.couplings[k]);
    }

    #[test]
    fn matches_brute_force_on_every_syndrome() {
        let model = rep(3, 2);
        let th = random_theta(model.n_mechanisms(), 2);
        let model = model.with_priors(&th).unwrap();
        let solver = PlanarSolver::new(&model).unwrap();
        let m = model.n_detectors();
        let joint = oracle::joint_distribution(&model, &th).unwrap();
        let mut total = 0.0;
        for idx in 0..1usize << m {
            let s = syndrome_from_index(m, idx);
            let expect = joint[idx][0] + joint[idx][1];
            let got = solver.log_prob(&th, &s).unwrap().exp();
            assert!((got - expect).abs() <= 1e-10 * expect, "s={idx}: {got} vs {expect}");
            let (l0, l1) = solver.coset_log_probs(&th, &s).unwrap();
            assert!((l0.exp() - joint[idx][0]).abs() <= 1e-9 * expect);
            assert!((l1.exp() - joint[idx][1]).abs() <= 1e-9 * expect);
            total += got;
        }
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn dual_graph_matches_spin_enumeration() {
        let model = rep(3, 2);
        let th = random_theta(model.n_mechanisms(), 3);
        let solver = PlanarSolver::new(&model).unwrap();
        let s = syndrome_from_index(model.n_detectors(), 0b10_0110);
        let e = solver.pure_error(&s).unwrap();
        let g = solver.dual_graph(&th, &e).unwrap();
        let edges = g.spin_edges();
        let (a, b) = (g.auxiliary_spin().unwrap(), g.logical_spin().unwrap());
        for (fix, cons) in [
            (FixLogical::Free, None),
            (FixLogical::Plus, Some((a, b, true))),
            (FixLogical::Minus, Some((a, b, false))),
        ] {
            let kw = kac_ward_log_partition(&g, fix).unwrap().log_z;
            let brute = oracle::brute_partition(g.n_spins(), &edges, cons).unwrap();
            assert!((kw - brute).abs() < 1e-10 * brute.abs(), "{fix:?}: {kw} vs {brute}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = rep(3, 2);
        let th = random_theta(model.n_mechanisms(), 4);
        let solver = PlanarSolver::new(&model).unwrap();
        let s = syndrome_from_index(model.n_detectors(), 0b01_1001);
        let (_, g) = solver.log_prob_and_grad(&th, &s).unwrap();
        let fd = oracle::fd_grad(|t| solver.log_prob(t, &s).unwrap(), &th, 1e-6).unwrap();
        for i in 0..th.len() {
            assert!((g[i] - fd[i]).abs() <= 1e-5 * fd[i].abs().max(1.0), "{i}: {} vs {}", g[i], fd[i]);
        }
    }

    #[test]
    fn rejects_hyperedges_and_nonplanar_graphs() {
        let model =
            DetectorErrorModel::new(3, vec![ErrorMechanism::new(0.1, [0, 1, 2], false)]).unwrap();
        assert!(matches!(PlanarSolver::new(&model), Err(Error::NotGraphlike { .. })));
        let model = generate(CodeFamily::Surface, 3, 1, 0.01).unwrap();
        assert!(matches!(PlanarSolver::new(&model), Err(Error::NonPlanar(_))));
    }
}
