//! Contraction trees and their symbolic cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tnbuild::{IndexKind, TensorNetwork};

/// Binary contraction tree. Leaves `0..n_leaves` are network nodes; internal
/// node `n_leaves + k` contracts `children[k]`, and children always have
/// smaller ids than their parent. The root is the last node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractionTree {
    pub n_leaves: usize,
    pub children: Vec<(usize, usize)>,
}

impl ContractionTree {
    pub fn n_nodes(&self) -> usize {
        self.n_leaves + self.children.len()
    }

    pub fn root(&self) -> Option<usize> {
        self.n_nodes().checked_sub(1)
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node < self.n_leaves
    }

    /// Left-deep tree over the leaves in order.
    pub fn sequential(n_leaves: usize) -> Self {
        let mut children = Vec::new();
        let mut acc = 0;
        for leaf in 1..n_leaves {
            children.push((acc, leaf));
            acc = n_leaves + children.len() - 1;
        }
        Self { n_leaves, children }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_leaves > 0 && self.children.len() + 1 != self.n_leaves {
            return Err(Error::MalformedTree(format!(
                "{} leaves need {} internal nodes, found {}",
                self.n_leaves,
                self.n_leaves - 1,
                self.children.len()
            )));
        }
        if self.n_leaves == 0 && !self.children.is_empty() {
            return Err(Error::MalformedTree("internal nodes without leaves".into()));
        }
        let mut used = vec![false; self.n_nodes()];
        for (k, &(a, b)) in self.children.iter().enumerate() {
            let id = self.n_leaves + k;
            for c in [a, b] {
                if c >= id {
                    return Err(Error::MalformedTree(format!(
                        "node {id} has child {c} that is not earlier in the order"
                    )));
                }
                if std::mem::replace(&mut used[c], true) {
                    return Err(Error::MalformedTree(format!("node {c} is used twice")));
                }
            }
        }
        if let Some(root) = self.root() {
            if let Some(c) = (0..root).find(|&c| !used[c]) {
                return Err(Error::MalformedTree(format!("node {c} is never contracted")));
            }
        }
        Ok(())
    }
}

/// Per-node index sets of a tree over a specific network.
#[derive(Clone, Debug)]
pub struct TreeAnalysis {
    /// Indices of each node's tensor that remain open, sorted.
    pub open: Vec<Vec<usize>>,
    /// Indices summed when forming each internal node (empty for leaves
    /// unless the leaf holds an index nobody else holds).
    pub summed: Vec<Vec<usize>>,
}

impl TreeAnalysis {
    pub fn new(network: &TensorNetwork, tree: &ContractionTree) -> Result<Self> {
        tree.validate()?;
        if tree.n_leaves != network.n_nodes() {
            return Err(Error::MalformedTree(format!(
                "tree has {} leaves, network has {} nodes",
                tree.n_leaves,
                network.n_nodes()
            )));
        }
        let deg = network.index_degrees();
        let batch = network.batch_index();
        // Open indices with the number of holders inside the subtree.
        let mut held: Vec<Vec<(usize, usize)>> = Vec::with_capacity(tree.n_nodes());
        let mut open = Vec::with_capacity(tree.n_nodes());
        let mut summed = Vec::with_capacity(tree.n_nodes());
        for node in &network.nodes {
            let mut h: Vec<(usize, usize)> = node.indices.iter().map(|&i| (i, 1)).collect();
            h.sort_unstable();
            let (keep, drop): (Vec<_>, Vec<_>) = h.into_iter().partition(|&(i, c)| i == batch || c < deg[i]);
            open.push(keep.iter().map(|p| p.0).collect());
            summed.push(drop.iter().map(|p| p.0).collect());
            held.push(keep);
        }
        for &(a, b) in &tree.children {
            let (ha, hb) = (&held[a], &held[b]);
            let mut merged = Vec::with_capacity(ha.len() + hb.len());
            let (mut x, mut y) = (0, 0);
            while x < ha.len() || y < hb.len() {
                let next = match (ha.get(x), hb.get(y)) {
                    (Some(&p), Some(&q)) if p.0 == q.0 => {
                        x += 1;
                        y += 1;
                        (p.0, p.1 + q.1)
                    }
                    (Some(&p), Some(&q)) if p.0 < q.0 => {
                        x += 1;
                        p
                    }
                    (Some(_), Some(&q)) => {
                        y += 1;
                        q
                    }
                    (Some(&p), None) => {
                        x += 1;
                        p
                    }
                    (None, Some(&q)) => {
                        y += 1;
                        q
                    }
                    (None, None) => unreachable!(),
                };
                merged.push(next);
            }
            let (keep, drop): (Vec<_>, Vec<_>) =
                merged.into_iter().partition(|&(i, c)| i == batch || c < deg[i]);
            open.push(keep.iter().map(|p| p.0).collect());
            summed.push(drop.iter().map(|p| p.0).collect());
            held.push(keep);
        }
        Ok(Self { open, summed })
    }
}

/// Weights and limits of the path cost function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub w_mem: f64,
    pub w_acc: f64,
    /// Trees whose largest intermediate exceeds this many elements get infinite loss.
    pub max_elems: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_mem: 1.0,
            w_acc: 0.2,
            max_elems: (1u64 << 30) as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub total_flops: f64,
    pub max_tensor_elems: f64,
    pub total_access_bytes: f64,
    pub loss: f64,
}

impl CostWeights {
    pub fn loss(&self, flops: f64, max_elems: f64, access_bytes: f64) -> f64 {
        if max_elems > self.max_elems {
            return f64::INFINITY;
        }
        flops.max(1.0).log2() + self.w_mem * max_elems.max(1.0).log2() + self.w_acc * access_bytes.max(1.0).log2()
    }
}

/// `log2` of the element count of a tensor over `indices`.
pub(crate) fn log2_size(network: &TensorNetwork, indices: &[usize], log2_batch: f64) -> f64 {
    indices
        .iter()
        .map(|&i| match network.indices[i] {
            IndexKind::Batch => log2_batch,
            _ => 1.0,
        })
        .sum()
}

/// Symbolic cost of executing `tree` on `network` with `batch_size` shots.
///
/// The cost of a pairwise contraction is the product of the dimensions of
/// the union of its operands' open indices; the maximum is taken over
/// intermediates (leaves when there are none) and access counts eight bytes
/// per element read or written.
pub fn estimate_cost(
    network: &TensorNetwork,
    tree: &ContractionTree,
    batch_size: usize,
    weights: &CostWeights,
) -> Result<CostReport> {
    let an = TreeAnalysis::new(network, tree)?;
    let lb = (batch_size.max(1) as f64).log2();
    let size = |n: usize| log2_size(network, &an.open[n], lb).exp2();
    let mut flops = 0.0;
    let mut max_elems: f64 = 0.0;
    let mut access = 0.0;
    for (k, &(a, b)) in tree.children.iter().enumerate() {
        let id = tree.n_leaves + k;
        let mut union: Vec<usize> = an.open[a].clone();
        union.extend(an.open[b].iter().filter(|i| !an.open[a].contains(i)));
        flops += log2_size(network, &union, lb).exp2();
        max_elems = max_elems.max(size(id));
        access += 8.0 * (size(a) + size(b) + size(id));
    }
    if tree.children.is_empty() {
        max_elems = (0..tree.n_leaves).map(size).fold(0.0, f64::max);
    }
    Ok(CostReport {
        total_flops: flops,
        max_tensor_elems: max_elems,
        total_access_bytes: access,
        loss: weights.loss(flops, max_elems, access),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tnbuild::{Node, NodeKind};

    /// Network of plain nodes over the given index lists (all dimension 2).
    pub(crate) fn raw_network(n_indices: usize, nodes: &[&[usize]]) -> TensorNetwork {
        let mut indices: Vec<IndexKind> = (0..n_indices).map(IndexKind::Mechanism).collect();
        indices.push(IndexKind::Batch);
        TensorNetwork {
            indices,
            nodes: nodes
                .iter()
                .map(|ix| Node {
                    kind: NodeKind::Hadamard {
                        mechanism: 0,
                        detector: 0,
                    },
                    indices: ix.to_vec(),
                })
                .collect(),
            global_log_scale: 0.0,
            decoder: false,
            n_mechanisms: n_indices,
            n_detectors: 0,
            flips_logical: Vec::new(),
            theta: Vec::new(),
        }
    }

    #[test]
    fn validation_catches_reuse_and_order() {
        assert!(ContractionTree::sequential(4).validate().is_ok());
        let bad = ContractionTree {
            n_leaves: 3,
            children: vec![(0, 1), (0, 3)],
        };
        assert!(bad.validate().is_err());
        let forward_ref = ContractionTree {
            n_leaves: 3,
            children: vec![(0, 4), (1, 2)],
        };
        assert!(forward_ref.validate().is_err());
    }

    #[test]
    fn dot_product_cost() {
        let net = raw_network(1, &[&[0], &[0]]);
        let r = estimate_cost(&net, &ContractionTree::sequential(2), 1, &CostWeights::default()).unwrap();
        assert_eq!(r.total_flops, 2.0);
        assert_eq!(r.max_tensor_elems, 1.0);
    }

    #[test]
    fn matrix_chain_is_symmetric() {
        let net = raw_network(4, &[&[0, 1], &[1, 2], &[2, 3]]);
        let left = ContractionTree::sequential(3);
        let right = ContractionTree {
            n_leaves: 3,
            children: vec![(1, 2), (0, 3)],
        };
        let w = CostWeights::default();
        let a = estimate_cost(&net, &left, 1, &w).unwrap();
        let b = estimate_cost(&net, &right, 1, &w).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hyper_index_is_summed_at_covering_node() {
        // Index 0 is held by three nodes; it closes only at the root.
        let net = raw_network(2, &[&[0], &[0, 1], &[0, 1]]);
        let tree = ContractionTree::sequential(3);
        let an = TreeAnalysis::new(&net, &tree).unwrap();
        assert_eq!(an.open[3], vec![0, 1]);
        assert_eq!(an.summed[4], vec![0, 1]);
        assert!(an.open[4].is_empty());
    }
}
