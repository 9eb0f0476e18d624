//! Detector-picture tensor networks after Walsh–Hadamard factorization.
//!
//! Every parity constraint on detector `j` is written with a binary central
//! index `a_j`: `[xor of legs = s_j] = 1/2 sum_a (-1)^(a s_j) prod_legs H(a, leg)`.
//! The network then holds one probability vector per mechanism, one 2x2
//! Hadamard per (mechanism, detector) incidence and one sign vector per
//! detector. The `2^-m` normalization lives in `global_log_scale`.

use std::f64::consts::LN_2;

use serde::Serialize;

use crate::dem::{DetectorErrorModel, ShotBatch};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "type", content = "id")]
pub enum IndexKind {
    /// `e_i`.
    Mechanism(usize),
    /// `a_j`.
    Detector(usize),
    /// Shot axis of bound sign vectors; never summed.
    Batch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "type")]
pub enum NodeKind {
    /// `(1 - theta_i, theta_i)`, or `(1 - theta_i, -theta_i)` for logical
    /// mechanisms in a decoder network.
    Prob { mechanism: usize },
    /// `[[1, 1], [1, -1]]` on `(a_j, e_i)`.
    Hadamard { mechanism: usize, detector: usize },
    /// `(1, (-1)^s_j)` per shot, on `(batch, a_j)`.
    Sign { detector: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Node {
    pub kind: NodeKind,
    pub indices: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorNetwork {
    pub indices: Vec<IndexKind>,
    pub nodes: Vec<Node>,
    pub global_log_scale: f64,
    /// Logical mechanisms carry `(1 - theta, -theta)`: the contraction is
    /// `p(s, l=0) - p(s, l=1)`.
    pub decoder: bool,
    pub n_mechanisms: usize,
    pub n_detectors: usize,
    #[serde(skip)]
    pub flips_logical: Vec<bool>,
    #[serde(skip)]
    pub theta: Vec<f64>,
}

impl TensorNetwork {
    pub fn batch_index(&self) -> usize {
        self.indices.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Number of nodes holding each index.
    pub fn index_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.indices.len()];
        for n in &self.nodes {
            for &i in &n.indices {
                deg[i] += 1;
            }
        }
        deg
    }

    /// Dimension of index `i` for a given batch size.
    pub fn dim(&self, i: usize, batch_size: usize) -> usize {
        match self.indices[i] {
            IndexKind::Batch => batch_size,
            _ => 2,
        }
    }

    /// Values of a non-sign leaf, row-major over its indices, for priors `theta`.
    pub fn leaf_values(&self, node: usize, theta: &[f64]) -> Vec<f64> {
        match self.nodes[node].kind {
            NodeKind::Prob { mechanism } => {
                let t = theta[mechanism];
                if self.decoder && self.flips_logical[mechanism] {
                    vec![1.0 - t, -t]
                } else {
                    vec![1.0 - t, t]
                }
            }
            NodeKind::Hadamard { .. } => vec![1.0, 1.0, 1.0, -1.0],
            NodeKind::Sign { .. } => panic!("sign vectors are bound per shot"),
        }
    }

    /// Structure-only JSON document.
    pub fn to_json(&self) -> serde_json::Value {
        let deg = self.index_degrees();
        serde_json::json!({
            "n_mechanisms": self.n_mechanisms,
            "n_detectors": self.n_detectors,
            "decoder": self.decoder,
            "global_log_scale": self.global_log_scale,
            "indices": self.indices.iter().enumerate().map(|(i, k)| serde_json::json!({
                "id": i,
                "kind": k,
                "dim": if *k == IndexKind::Batch { serde_json::Value::from("batch") } else { 2.into() },
                "degree": deg[i],
            })).collect::<Vec<_>>(),
            "nodes": self.nodes,
        })
    }
}

fn build(model: &DetectorErrorModel, theta: &[f64], decoder: bool) -> Result<TensorNetwork> {
    let n = model.n_mechanisms();
    let m = model.n_detectors();
    if theta.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: theta.len(),
        });
    }
    let mut indices: Vec<IndexKind> = (0..n).map(IndexKind::Mechanism).collect();
    indices.extend((0..m).map(IndexKind::Detector));
    indices.push(IndexKind::Batch);
    let batch = n + m;
    let mut nodes = Vec::new();
    for (i, mech) in model.mechanisms().iter().enumerate() {
        nodes.push(Node {
            kind: NodeKind::Prob { mechanism: i },
            indices: vec![i],
        });
        for &j in &mech.detectors {
            nodes.push(Node {
                kind: NodeKind::Hadamard {
                    mechanism: i,
                    detector: j,
                },
                indices: vec![n + j, i],
            });
        }
    }
    for j in 0..m {
        nodes.push(Node {
            kind: NodeKind::Sign { detector: j },
            indices: vec![batch, n + j],
        });
    }
    Ok(TensorNetwork {
        indices,
        nodes,
        global_log_scale: -(m as f64) * LN_2,
        decoder,
        n_mechanisms: n,
        n_detectors: m,
        flips_logical: model.mechanisms().iter().map(|x| x.flips_logical).collect(),
        theta: theta.to_vec(),
    })
}

/// Network whose contraction with bound syndromes is `p_theta(s)`.
pub fn build_likelihood_network(model: &DetectorErrorModel, theta: &[f64]) -> Result<TensorNetwork> {
    build(model, theta, false)
}

/// Network whose contraction is `p(s, l=0) - p(s, l=1)`. Without logical
/// mechanisms this is the likelihood network and a warning is logged.
pub fn build_decoder_network(model: &DetectorErrorModel, theta: &[f64]) -> Result<TensorNetwork> {
    if !model.has_logical() {
        log::warn!("{}", Error::NoLogical);
    }
    build(model, theta, true)
}

/// A network together with the syndromes its sign vectors are bound to.
#[derive(Clone, Copy, Debug)]
pub struct BoundNetwork<'a> {
    pub network: &'a TensorNetwork,
    pub batch: &'a ShotBatch,
}

impl BoundNetwork<'_> {
    pub fn n_shots(&self) -> usize {
        self.batch.n_shots()
    }

    /// `n_shots x 2` values of sign vector `node`.
    pub fn sign_values(&self, node: usize, shots: std::ops::Range<usize>) -> Vec<f64> {
        let NodeKind::Sign { detector } = self.network.nodes[node].kind else {
            panic!("node {node} is not a sign vector");
        };
        let mut out = Vec::with_capacity(2 * shots.len());
        for k in shots {
            out.push(1.0);
            out.push(if self.batch.syndromes().get(k, detector) { -1.0 } else { 1.0 });
        }
        out
    }
}

/// Binds a batch of syndromes to the sign vectors of `network`.
pub fn bind_syndromes<'a>(network: &'a TensorNetwork, batch: &'a ShotBatch) -> Result<BoundNetwork<'a>> {
    if batch.width() != network.n_detectors {
        return Err(Error::LengthMismatch {
            expected: network.n_detectors,
            got: batch.width(),
        });
    }
    Ok(BoundNetwork { network, batch })
}
