//! Batched execution of a contraction tree with per-shot scale tracking, and
//! its reverse-mode gradient.
//!
//! After every pairwise contraction the intermediate is divided by its
//! largest magnitude (per shot when batched) and the logarithm of that factor
//! is accumulated. In the backward pass each node carries the normalized
//! adjoint `G_T * S_T`, where `S_T` is its accumulated scale; for a child `A`
//! of `T = c_T * (A . B)` this gives `G_A = c_T * (G_T . B)` with no
//! further scale bookkeeping.

use std::borrow::Cow;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::{contract_pair, Tensor};
use super::tree::{ContractionTree, TreeAnalysis};
use crate::dem::ShotBatch;
use crate::error::{Error, Result};
use crate::tnbuild::{bind_syndromes, BoundNetwork, NodeKind, TensorNetwork};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecOptions {
    /// Shots contracted together; chunks run in parallel.
    pub chunk_size: usize,
    /// Intermediates larger than this are recomputed in the backward pass.
    pub checkpoint_elems: usize,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            chunk_size: 512,
            checkpoint_elems: 1 << 24,
        }
    }
}

/// `value = sign * exp(log_abs)` for one shot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShotValue {
    pub log_abs: f64,
    /// `1`, `-1`, or `0` when the value vanishes exactly.
    pub sign: f64,
}

/// A network with a fixed tree, ready to evaluate many batches.
#[derive(Clone, Debug)]
pub struct Contractor {
    network: TensorNetwork,
    tree: ContractionTree,
    analysis: TreeAnalysis,
    pub options: ExecOptions,
}

struct Forward {
    tensors: Vec<Option<Tensor>>,
    /// Multiplier applied at each internal node, per shot or single.
    factor: Vec<Vec<f64>>,
    /// Accumulated log scale of the root.
    root_scale: Vec<f64>,
    flops: f64,
}

impl Contractor {
    pub fn new(network: TensorNetwork, tree: ContractionTree, options: ExecOptions) -> Result<Self> {
        let analysis = TreeAnalysis::new(&network, &tree)?;
        Ok(Self {
            network,
            tree,
            analysis,
            options,
        })
    }

    pub fn network(&self) -> &TensorNetwork {
        &self.network
    }

    pub fn tree(&self) -> &ContractionTree {
        &self.tree
    }

    fn check(&self, theta: &[f64], batch: &ShotBatch) -> Result<()> {
        if theta.len() != self.network.n_mechanisms {
            return Err(Error::LengthMismatch {
                expected: self.network.n_mechanisms,
                got: theta.len(),
            });
        }
        bind_syndromes(&self.network, batch).map(|_| ())
    }

    fn chunks(&self, n: usize) -> Vec<Range<usize>> {
        let c = self.options.chunk_size.max(1);
        (0..n.div_ceil(c)).map(|k| k * c..((k + 1) * c).min(n)).collect()
    }

    fn leaf(&self, bound: &BoundNetwork, node: usize, theta: &[f64], shots: &Range<usize>) -> Tensor {
        let net = &self.network;
        let n = &net.nodes[node];
        let t = match n.kind {
            NodeKind::Sign { .. } => Tensor::new(
                n.indices.clone(),
                vec![shots.len(), 2],
                bound.sign_values(node, shots.clone()),
            ),
            _ => Tensor::new(n.indices.clone(), vec![2; n.indices.len()], net.leaf_values(node, theta)),
        };
        t.sum_over(&self.analysis.summed[node])
    }

    fn is_batched(&self, t: &Tensor) -> bool {
        t.indices.first() == Some(&self.network.batch_index())
    }

    /// Contracts internal node `id` from its children, without normalization.
    fn combine(&self, id: usize, a: &Tensor, b: &Tensor) -> (Tensor, f64) {
        let c = contract_pair(a, b, &self.analysis.open[id], Some(self.network.batch_index()), None);
        (c.tensor, c.flops)
    }

    fn forward(
        &self,
        bound: &BoundNetwork,
        theta: &[f64],
        shots: &Range<usize>,
        keep: bool,
    ) -> Forward {
        let nb = shots.len();
        let n_nodes = self.tree.n_nodes();
        let mut tensors: Vec<Option<Tensor>> = vec![None; n_nodes];
        let mut scale: Vec<Vec<f64>> = vec![Vec::new(); n_nodes];
        let mut factor: Vec<Vec<f64>> = vec![Vec::new(); n_nodes];
        for leaf in 0..self.tree.n_leaves {
            tensors[leaf] = Some(self.leaf(bound, leaf, theta, shots));
            scale[leaf] = vec![0.0];
        }
        let mut flops = 0.0;
        let root = self.tree.root();
        for (k, &(a, b)) in self.tree.children.iter().enumerate() {
            let id = self.tree.n_leaves + k;
            let (mut t, f) = {
                let ta = tensors[a].as_ref().expect("child computed");
                let tb = tensors[b].as_ref().expect("child computed");
                self.combine(id, ta, tb)
            };
            flops += f;
            let batched = self.is_batched(&t);
            let (fac, log_max) = normalize(&mut t, batched, nb);
            let mut s = broadcast_add(&scale[a], &scale[b]);
            s = broadcast_add(&s, &log_max);
            scale[id] = s;
            factor[id] = fac;
            for c in [a, b] {
                let drop_child = !keep || tensors[c].as_ref().is_some_and(|t| t.len() > self.options.checkpoint_elems);
                if drop_child {
                    tensors[c] = None;
                }
            }
            tensors[id] = Some(t);
        }
        let root_scale = root.map_or(vec![0.0], |r| scale[r].clone());
        Forward {
            tensors,
            factor,
            root_scale,
            flops,
        }
    }

    /// Node tensor, recomputing dropped intermediates from their children.
    fn materialize<'f>(
        &self,
        fw: &'f Forward,
        bound: &BoundNetwork,
        theta: &[f64],
        shots: &Range<usize>,
        node: usize,
    ) -> Cow<'f, Tensor> {
        if let Some(t) = &fw.tensors[node] {
            return Cow::Borrowed(t);
        }
        if node < self.tree.n_leaves {
            return Cow::Owned(self.leaf(bound, node, theta, shots));
        }
        let (a, b) = self.tree.children[node - self.tree.n_leaves];
        let ta = self.materialize(fw, bound, theta, shots, a);
        let tb = self.materialize(fw, bound, theta, shots, b);
        let (mut t, _) = self.combine(node, &ta, &tb);
        let batched = self.is_batched(&t);
        scale_by(&mut t, batched, &fw.factor[node]);
        Cow::Owned(t)
    }

    fn root_values(&self, fw: &Forward, nb: usize) -> Vec<ShotValue> {
        let root = self.tree.root();
        let vals: Vec<f64> = match root {
            None => vec![1.0; nb],
            Some(r) => {
                let t = fw.tensors[r].as_ref().expect("root kept");
                if self.is_batched(t) {
                    t.data.clone()
                } else {
                    vec![t.data[0]; nb]
                }
            }
        };
        vals.iter()
            .enumerate()
            .map(|(k, &v)| {
                let s = if fw.root_scale.len() == 1 { fw.root_scale[0] } else { fw.root_scale[k] };
                ShotValue {
                    log_abs: v.abs().ln() + s + self.network.global_log_scale,
                    sign: if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    },
                }
            })
            .collect()
    }

    /// Per-shot values of the network bound to `batch`.
    pub fn contract(&self, theta: &[f64], batch: &ShotBatch) -> Result<Vec<ShotValue>> {
        Ok(self.contract_counting(theta, batch)?.0)
    }

    /// As [`Contractor::contract`], also returning the executed multiply-adds.
    pub fn contract_counting(&self, theta: &[f64], batch: &ShotBatch) -> Result<(Vec<ShotValue>, f64)> {
        self.check(theta, batch)?;
        let bound = bind_syndromes(&self.network, batch)?;
        let parts: Vec<(Vec<ShotValue>, f64)> = self
            .chunks(batch.n_shots())
            .into_par_iter()
            .map(|r| {
                let fw = self.forward(&bound, theta, &r, false);
                (self.root_values(&fw, r.len()), fw.flops)
            })
            .collect();
        let mut out = Vec::with_capacity(batch.n_shots());
        let mut flops = 0.0;
        for (v, f) in parts {
            out.extend(v);
            flops += f;
        }
        Ok((out, flops))
    }

    /// Per-shot values and `d/d theta sum_k weights[k] log|value_k|`.
    pub fn value_and_grad(
        &self,
        theta: &[f64],
        batch: &ShotBatch,
        weights: &[f64],
    ) -> Result<(Vec<ShotValue>, Vec<f64>)> {
        self.check(theta, batch)?;
        if weights.len() != batch.n_shots() {
            return Err(Error::LengthMismatch {
                expected: batch.n_shots(),
                got: weights.len(),
            });
        }
        let bound = bind_syndromes(&self.network, batch)?;
        let parts: Vec<Result<(Vec<ShotValue>, Vec<f64>)>> = self
            .chunks(batch.n_shots())
            .into_par_iter()
            .map(|r| self.backward_chunk(&bound, theta, &r, &weights[r.clone()]))
            .collect();
        let mut values = Vec::with_capacity(batch.n_shots());
        let mut grad = vec![0.0; self.network.n_mechanisms];
        for p in parts {
            let (v, g) = p?;
            values.extend(v);
            for (x, y) in grad.iter_mut().zip(g) {
                *x += y;
            }
        }
        Ok((values, grad))
    }

    fn backward_chunk(
        &self,
        bound: &BoundNetwork,
        theta: &[f64],
        shots: &Range<usize>,
        weights: &[f64],
    ) -> Result<(Vec<ShotValue>, Vec<f64>)> {
        let nb = shots.len();
        let fw = self.forward(bound, theta, shots, true);
        let values = self.root_values(&fw, nb);
        let mut grad = vec![0.0; self.network.n_mechanisms];
        let Some(root) = self.tree.root() else {
            return Ok((values, grad));
        };
        let rt = fw.tensors[root].as_ref().ok_or(Error::MissingCache(root))?;
        let inv = |k: usize, v: f64| -> Result<f64> {
            if weights[k] == 0.0 {
                return Ok(0.0);
            }
            if v == 0.0 {
                return Err(Error::Numerical(format!(
                    "shot {} has zero likelihood; its log has no gradient",
                    shots.start + k
                )));
            }
            Ok(weights[k] / v)
        };
        let g_root = if self.is_batched(rt) {
            let data = (0..nb).map(|k| inv(k, rt.data[k])).collect::<Result<Vec<_>>>()?;
            Tensor::new(rt.indices.clone(), rt.dims.clone(), data)
        } else {
            let mut s = 0.0;
            for k in 0..nb {
                s += inv(k, rt.data[0])?;
            }
            Tensor::scalar(s)
        };
        let mut adj: Vec<Option<Tensor>> = vec![None; self.tree.n_nodes()];
        adj[root] = Some(g_root);
        for id in (self.tree.n_leaves..self.tree.n_nodes()).rev() {
            let mut g = adj[id].take().ok_or(Error::MissingCache(id))?;
            let batched = self.is_batched(&g);
            scale_by(&mut g, batched, &fw.factor[id]);
            let (a, b) = self.tree.children[id - self.tree.n_leaves];
            let ta = self.materialize(&fw, bound, theta, shots, a);
            let tb = self.materialize(&fw, bound, theta, shots, b);
            adj[a] = Some(contract_pair(&g, &tb, &ta.indices, None, Some(&ta.indices)).tensor);
            adj[b] = Some(contract_pair(&g, &ta, &tb.indices, None, Some(&tb.indices)).tensor);
        }
        for (leaf, node) in self.network.nodes.iter().enumerate() {
            let NodeKind::Prob { mechanism } = node.kind else {
                continue;
            };
            let g = adj[leaf].as_ref().ok_or(Error::MissingCache(leaf))?;
            let negated = self.network.decoder && self.network.flips_logical[mechanism];
            grad[mechanism] += match (g.len(), negated) {
                (2, false) => g.data[1] - g.data[0],
                (2, true) => -g.data[0] - g.data[1],
                (1, false) => 0.0,
                (1, true) => -2.0 * g.data[0],
                _ => unreachable!("probability leaves hold one index"),
            };
        }
        Ok((values, grad))
    }
}

fn broadcast_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    match (a.len(), b.len()) {
        (1, _) => b.iter().map(|y| a[0] + y).collect(),
        (_, 1) => a.iter().map(|x| x + b[0]).collect(),
        _ => a.iter().zip(b).map(|(x, y)| x + y).collect(),
    }
}

/// Divides by the largest magnitude (per leading-axis slice when batched).
/// Returns the applied multipliers and the logs of the removed factors.
fn normalize(t: &mut Tensor, batched: bool, nb: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = if batched { nb } else { 1 };
    let width = t.data.len() / rows.max(1);
    let mut fac = Vec::with_capacity(rows);
    let mut logs = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &mut t.data[r * width..(r + 1) * width];
        let m = row.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if m == 0.0 || !m.is_finite() {
            fac.push(1.0);
            logs.push(0.0);
            continue;
        }
        let c = 1.0 / m;
        for x in row.iter_mut() {
            *x *= c;
        }
        fac.push(c);
        logs.push(m.ln());
    }
    (fac, logs)
}

fn scale_by(t: &mut Tensor, batched: bool, fac: &[f64]) {
    if fac.len() == 1 {
        let c = fac[0];
        t.data.iter_mut().for_each(|x| *x *= c);
        return;
    }
    debug_assert!(batched);
    let width = t.data.len() / fac.len();
    for (row, &c) in t.data.chunks_mut(width).zip(fac) {
        row.iter_mut().for_each(|x| *x *= c);
    }
}

/// Per-shot `(log|value|, sign)` of a bound network under `tree`.
pub fn contract(
    bound: BoundNetwork,
    tree: &ContractionTree,
    theta: &[f64],
    options: ExecOptions,
) -> Result<Vec<ShotValue>> {
    Contractor::new(bound.network.clone(), tree.clone(), options)?.contract(theta, bound.batch)
}

/// `d/d theta sum_k upstream[k] log|value_k|`, with the forward values.
pub fn backward(
    bound: BoundNetwork,
    tree: &ContractionTree,
    theta: &[f64],
    upstream: &[f64],
    options: ExecOptions,
) -> Result<(Vec<ShotValue>, Vec<f64>)> {
    Contractor::new(bound.network.clone(), tree.clone(), options)?.value_and_grad(theta, bound.batch, upstream)
}
