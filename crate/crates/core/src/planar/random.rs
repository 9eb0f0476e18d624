//! Seeded random planar graphs with straight-line drawings.

use rand::Rng;

use super::embedding::Embedding;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct RandomPlanarGraph {
    pub positions: Vec<(f64, f64)>,
    pub edges: Vec<(usize, usize)>,
    pub couplings: Vec<f64>,
}

impl RandomPlanarGraph {
    pub fn embedding(&self) -> Result<Embedding> {
        Embedding::from_positions(&self.positions, self.edges.clone())
    }
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

/// Segments `pq` and `rs` cross at a point interior to both (shared
/// endpoints do not count).
fn crosses(p: (f64, f64), q: (f64, f64), r: (f64, f64), s: (f64, f64)) -> bool {
    let d1 = orient(p, q, r);
    let d2 = orient(p, q, s);
    let d3 = orient(r, s, p);
    let d4 = orient(r, s, q);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// `n` random points; candidate segments are taken shortest first and kept
/// with probability `keep` when they cross no kept segment. Couplings are
/// uniform in `[-j_max, j_max]`.
pub fn random_planar_graph(n: usize, keep: f64, j_max: f64, rng: &mut impl Rng) -> RandomPlanarGraph {
    let positions: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let (dx, dy) = (positions[u].0 - positions[v].0, positions[u].1 - positions[v].1);
            cand.push((dx * dx + dy * dy, u, v));
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for (_, u, v) in cand {
        let free = edges.iter().all(|&(a, b)| {
            a == u || a == v || b == u || b == v || !crosses(positions[u], positions[v], positions[a], positions[b])
        });
        if free && rng.random_bool(keep) {
            edges.push((u, v));
        }
    }
    let couplings = edges.iter().map(|_| rng.random_range(-j_max..=j_max)).collect();
    RandomPlanarGraph {
        positions,
        edges,
        couplings,
    }
}
