//! Kac–Ward evaluation of planar Ising partition functions.
//!
//! For weights `t_e` on the edges of a planar embedded graph,
//! `sum over even subgraphs of prod t_e = sqrt(det(I - K))`, where `K` acts on
//! directed edges: `K[a, b] = exp(i (turn(a, b) + bend(b)) / 2) t_b` whenever
//! `b` leaves the head of `a` and is not the reversal of `a`.
//!
//! Angles come either from a straight-line drawing, or combinatorially: the
//! half-edges at each vertex are spread evenly and each edge gets a bend
//! whose parity is fixed so that every face boundary turns by `2pi` modulo
//! `4pi`.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::embedding::{rev, wrap_angle, Embedding};
use super::lu::ComplexLu;
use crate::error::{Error, Result};
use crate::gf2::{BitMatrix, BitVec, Gf2Solver};

/// Per-edge weight entering the high-temperature expansion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EdgeWeight {
    /// Ising coupling `J`: factor `cosh J (1 + tanh J s s')`.
    Coupling(f64),
    /// Constraint factor `(1 + t s s') / 2` with `t = +1` or `-1`.
    Pin(f64),
    /// Factor 1: the edge is present in the embedding only.
    Absent,
}

/// `log cosh x` without overflow.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

#[derive(Clone, Debug)]
pub struct KacWard {
    graph: Embedding,
    /// `(from, to, phase)` for every nonzero transition.
    transitions: Vec<(usize, usize, Complex64)>,
}

#[derive(Clone, Debug)]
pub struct KwResult {
    pub log_z: f64,
    /// `d log Z / d J_e` for coupling edges; zero for pins.
    pub grad: Option<Vec<f64>>,
}

impl KacWard {
    /// Angles from the given straight-line drawing.
    pub fn geometric(graph: Embedding, positions: &[(f64, f64)]) -> Result<Self> {
        graph.check_planar()?;
        let mut alpha = vec![0.0; 2 * graph.n_edges()];
        for h in 0..alpha.len() {
            let (xu, yu) = positions[graph.tail(h)];
            let (xv, yv) = positions[graph.head(h)];
            alpha[h] = (yv - yu).atan2(xv - xu);
        }
        let bend = vec![0.0; graph.n_edges()];
        Ok(Self::assemble(graph, &alpha, &bend))
    }

    /// Angles derived from the rotation system alone.
    pub fn combinatorial(graph: Embedding) -> Result<Self> {
        graph.check_planar()?;
        if graph.edges.iter().any(|&(u, v)| u == v) {
            return Err(Error::NonPlanar("self-loops must be removed before Kac-Ward".into()));
        }
        let ne = graph.n_edges();
        let mut alpha = vec![0.0; 2 * ne];
        for rot in &graph.rotation {
            let k = rot.len() as f64;
            for (j, &h) in rot.iter().enumerate() {
                alpha[h] = 2.0 * PI * j as f64 / k;
            }
        }
        // Base bend of edge e in the direction 2e.
        let mut bend: Vec<f64> = (0..ne)
            .map(|e| wrap_angle(alpha[2 * e + 1] + PI - alpha[2 * e]))
            .collect();
        let (faces, _) = graph.faces();
        let pos = graph.positions_in_rotation();
        let mut incidence = BitMatrix::zeros(faces.len(), ne);
        let mut rhs = BitVec::zeros(faces.len());
        for (f, walk) in faces.iter().enumerate() {
            let mut total = 0.0;
            for &h in walk {
                total += if h % 2 == 0 { bend[h / 2] } else { -bend[h / 2] };
                let next = graph.face_successor(h, &pos);
                let gap = (alpha[rev(h)] - alpha[next]).rem_euclid(2.0 * PI);
                let gap = if gap <= 1e-12 { 2.0 * PI } else { gap };
                total += PI - gap;
                incidence.flip(f, h / 2);
            }
            let turns = ((2.0 * PI - total) / (2.0 * PI)).round();
            if ((2.0 * PI - total) - 2.0 * PI * turns).abs() > 1e-6 {
                return Err(Error::NonPlanar(format!(
                    "face {f} turning {total} is not a multiple of 2pi"
                )));
            }
            if (turns as i64).rem_euclid(2) == 1 {
                rhs.set(f, true);
            }
        }
        let k = Gf2Solver::new(&incidence).solve(&rhs).map_err(|_| {
            Error::NonPlanar("no consistent edge bends exist for this rotation system".into())
        })?;
        for e in k.iter_ones() {
            bend[e] += 2.0 * PI;
        }
        Ok(Self::assemble(graph, &alpha, &bend))
    }

    fn assemble(graph: Embedding, alpha: &[f64], bend: &[f64]) -> Self {
        let mut transitions = Vec::new();
        for a in 0..2 * graph.n_edges() {
            let v = graph.head(a);
            for &b in &graph.rotation[v] {
                if b == rev(a) {
                    continue;
                }
                let turn = wrap_angle(alpha[b] - alpha[rev(a)] - PI);
                let bb = if b % 2 == 0 { bend[b / 2] } else { -bend[b / 2] };
                transitions.push((a, b, Complex64::from_polar(1.0, 0.5 * (turn + bb))));
            }
        }
        Self { graph, transitions }
    }

    pub fn graph(&self) -> &Embedding {
        &self.graph
    }

    /// `log sum_s prod_e w_e(s)` over `+-1` spins on all vertices.
    pub fn log_partition(&self, weights: &[EdgeWeight], with_grad: bool) -> Result<KwResult> {
        let ne = self.graph.n_edges();
        if weights.len() != ne {
            return Err(Error::LengthMismatch {
                expected: ne,
                got: weights.len(),
            });
        }
        let mut t = Vec::with_capacity(ne);
        let mut log_z = self.graph.n_vertices as f64 * std::f64::consts::LN_2;
        for w in weights {
            match *w {
                EdgeWeight::Coupling(j) => {
                    if !j.is_finite() {
                        return Err(Error::Numerical(format!("non-finite coupling {j}")));
                    }
                    t.push(j.tanh());
                    log_z += log_cosh(j);
                }
                EdgeWeight::Pin(s) => {
                    t.push(s);
                    log_z -= std::f64::consts::LN_2;
                }
                EdgeWeight::Absent => t.push(0.0),
            }
        }
        let n = 2 * ne;
        if n == 0 {
            return Ok(KwResult {
                log_z,
                grad: with_grad.then(Vec::new),
            });
        }
        let mut m = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            m[i * n + i] = Complex64::new(1.0, 0.0);
        }
        for &(a, b, phase) in &self.transitions {
            m[a * n + b] -= phase * t[b / 2];
        }
        let lu = ComplexLu::factor(m, n)?;
        log_z += 0.5 * lu.log_abs_det;
        let residue = lu.arg_det.abs();
        if residue > 1e-8 * log_z.abs().max(1.0) {
            return Err(Error::Numerical(format!(
                "Kac-Ward determinant is not real positive: arg {residue:e}, |U_ii| in [{:e}, {:e}]",
                lu.pivot_range.0, lu.pivot_range.1
            )));
        }
        if !log_z.is_finite() {
            return Err(Error::Numerical("non-finite log partition function".into()));
        }
        let grad = if with_grad {
            let inv = lu.inverse();
            // d log det / d t_e = -sum over directions b of e of (M^-1 P)_{bb}.
            let mut dt = vec![0.0; ne];
            for &(a, b, phase) in &self.transitions {
                dt[b / 2] -= (inv[b * n + a] * phase).re;
            }
            Some(
                weights
                    .iter()
                    .zip(&dt)
                    .map(|(w, &d)| match *w {
                        EdgeWeight::Coupling(j) => {
                            let th = j.tanh();
                            th + 0.5 * d * (1.0 - th * th)
                        }
                        EdgeWeight::Pin(_) | EdgeWeight::Absent => 0.0,
                    })
                    .collect(),
            )
        } else {
            None
        };
        Ok(KwResult { log_z, grad })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::brute_partition;

    fn couplings(js: &[f64]) -> Vec<EdgeWeight> {
        js.iter().map(|&j| EdgeWeight::Coupling(j)).collect()
    }

    #[test]
    fn single_edge() {
        let g = Embedding::from_positions(&[(0.0, 0.0), (1.0, 0.0)], vec![(0, 1)]).unwrap();
        let kw = KacWard::combinatorial(g).unwrap();
        for j in [0.0, 0.3, -1.7] {
            let r = kw.log_partition(&couplings(&[j]), false).unwrap();
            assert!((r.log_z - (4.0 * f64::cosh(j)).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn square_with_diagonal_matches_enumeration() {
        let pos = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let edges = vec![(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)];
        let js = [0.4, -0.9, 1.3, 0.2, -0.5];
        let g = Embedding::from_positions(&pos, edges.clone()).unwrap();
        let brute: Vec<(usize, usize, f64)> =
            edges.iter().zip(&js).map(|(&(u, v), &j)| (u, v, j)).collect();
        let expect = brute_partition(4, &brute, None).unwrap();
        let geo = KacWard::geometric(g.clone(), &pos).unwrap();
        let comb = KacWard::combinatorial(g).unwrap();
        for kw in [geo, comb] {
            let r = kw.log_partition(&couplings(&js), false).unwrap();
            assert!((r.log_z - expect).abs() < 1e-12 * expect.abs(), "{} vs {expect}", r.log_z);
        }
    }

    #[test]
    fn multi_edges_and_pins() {
        // Two vertices joined by three parallel edges, one of them a pin.
        let g = Embedding {
            n_vertices: 2,
            edges: vec![(0, 1), (0, 1), (0, 1)],
            rotation: vec![vec![0, 2, 4], vec![5, 3, 1]],
        };
        let kw = KacWard::combinatorial(g).unwrap();
        let (j1, j2) = (0.7, -0.2);
        let free = kw
            .log_partition(&[EdgeWeight::Coupling(j1), EdgeWeight::Coupling(j2), EdgeWeight::Absent], false)
            .unwrap();
        let brute = brute_partition(2, &[(0, 1, j1), (0, 1, j2)], None).unwrap();
        assert!((free.log_z - brute).abs() < 1e-13);
        let same = kw
            .log_partition(&[EdgeWeight::Coupling(j1), EdgeWeight::Coupling(j2), EdgeWeight::Pin(1.0)], false)
            .unwrap();
        let brute_same = brute_partition(2, &[(0, 1, j1), (0, 1, j2)], Some((0, 1, true))).unwrap();
        assert!((same.log_z - brute_same).abs() < 1e-13);
    }

    #[test]
    fn gradient_matches_differences() {
        let pos = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (2.0, 0.5)];
        let edges = vec![(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (1, 4), (2, 4)];
        let js = vec![0.4, -0.9, 1.3, 0.2, -0.5, 0.8, -1.1];
        let kw = KacWard::combinatorial(Embedding::from_positions(&pos, edges).unwrap()).unwrap();
        let g = kw.log_partition(&couplings(&js), true).unwrap().grad.unwrap();
        for e in 0..js.len() {
            let mut p = js.clone();
            p[e] += 1e-6;
            let mut m = js.clone();
            m[e] -= 1e-6;
            let fd = (kw.log_partition(&couplings(&p), false).unwrap().log_z
                - kw.log_partition(&couplings(&m), false).unwrap().log_z)
                / 2e-6;
            assert!((fd - g[e]).abs() < 1e-7, "edge {e}: {fd} vs {}", g[e]);
        }
    }
}
