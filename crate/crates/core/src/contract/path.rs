//! Contraction path search: greedy initial trees refined by simulated
//! annealing over subtree rotations and cousin swaps.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tree::{estimate_cost, log2_size, ContractionTree, CostReport, CostWeights};
use crate::error::{Error, Result};
use crate::tnbuild::{IndexKind, TensorNetwork};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaConfig {
    pub seed: u64,
    pub proposals_per_temperature: usize,
    /// Initial temperature; chosen for roughly 80% initial acceptance when absent.
    pub t0: Option<f64>,
    pub decay: f64,
    pub t_floor: f64,
    /// Independent chains; the best result wins.
    pub chains: usize,
    /// Shot count used when costing batched tensors.
    pub batch_size: usize,
    pub weights: CostWeights,
}

impl Default for SaConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            proposals_per_temperature: 10_000,
            t0: None,
            decay: 0.96,
            t_floor: 1e-3,
            chains: 1,
            batch_size: 1,
            weights: CostWeights::default(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, PartialOrd)]
struct Ord64(f64);
impl Eq for Ord64 {}
#[allow(clippy::derive_ord_xor_partial_ord)]
impl Ord for Ord64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn leaf_open(network: &TensorNetwork, deg: &[usize]) -> Vec<Vec<usize>> {
    let batch = network.batch_index();
    network
        .nodes
        .iter()
        .map(|n| {
            let mut ix: Vec<usize> = n.indices.iter().copied().filter(|&i| i == batch || deg[i] > 1).collect();
            ix.sort_unstable();
            ix
        })
        .collect()
}

/// Greedy tree: repeatedly contracts the pair of tensors sharing an index
/// that minimizes `size(result) - size(a) - size(b)`.
pub fn greedy_tree(network: &TensorNetwork, batch_size: usize) -> ContractionTree {
    let n_leaves = network.n_nodes();
    if n_leaves == 0 {
        return ContractionTree {
            n_leaves: 0,
            children: Vec::new(),
        };
    }
    let deg = network.index_degrees();
    let batch = network.batch_index();
    let lb = (batch_size.max(1) as f64).log2();
    let mut sets: Vec<Option<Vec<usize>>> = leaf_open(network, &deg).into_iter().map(Some).collect();
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); network.indices.len()];
    for (t, s) in sets.iter().enumerate() {
        for &i in s.as_ref().unwrap() {
            holders[i].push(t);
        }
    }
    let mut remaining: Vec<usize> = holders.iter().map(|h| h.len()).collect();
    let size = |ix: &[usize]| log2_size(network, ix, lb).exp2();

    let merged = |a: &[usize], b: &[usize], remaining: &[usize]| -> Vec<usize> {
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut x, mut y) = (0, 0);
        while x < a.len() || y < b.len() {
            match (a.get(x), b.get(y)) {
                (Some(&p), Some(&q)) if p == q => {
                    if p == batch || remaining[p] > 2 {
                        out.push(p);
                    }
                    x += 1;
                    y += 1;
                }
                (Some(&p), Some(&q)) if p < q => {
                    out.push(p);
                    x += 1;
                }
                (Some(_), Some(&q)) => {
                    out.push(q);
                    y += 1;
                }
                (Some(&p), None) => {
                    out.push(p);
                    x += 1;
                }
                (None, Some(&q)) => {
                    out.push(q);
                    y += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        out
    };
    let cost = |a: &[usize], b: &[usize], remaining: &[usize]| {
        size(&merged(a, b, remaining)) - size(a) - size(b)
    };

    let mut heap = BinaryHeap::new();
    let push_neighbours = |t: usize,
                           sets: &[Option<Vec<usize>>],
                           holders: &[Vec<usize>],
                           remaining: &[usize],
                           heap: &mut BinaryHeap<Reverse<(Ord64, usize, usize)>>| {
        let st = sets[t].as_ref().unwrap();
        let mut seen: Vec<usize> = Vec::new();
        for &i in st {
            if i == batch {
                continue;
            }
            for &u in &holders[i] {
                if u != t && sets[u].is_some() && !seen.contains(&u) {
                    seen.push(u);
                    let c = cost(st, sets[u].as_ref().unwrap(), remaining);
                    let (a, b) = if u < t { (u, t) } else { (t, u) };
                    heap.push(Reverse((Ord64(c), a, b)));
                }
            }
        }
    };
    for t in 0..n_leaves {
        push_neighbours(t, &sets, &holders, &remaining, &mut heap);
    }

    let mut children = Vec::with_capacity(n_leaves - 1);
    let mut alive = n_leaves;
    while let Some(Reverse((Ord64(c), a, b))) = heap.pop() {
        let (Some(sa), Some(sb)) = (&sets[a], &sets[b]) else {
            continue;
        };
        let now = cost(sa, sb, &remaining);
        if now != c {
            heap.push(Reverse((Ord64(now), a, b)));
            continue;
        }
        let new = merged(sa, sb, &remaining);
        let id = sets.len();
        for &i in sa.iter().chain(sb.iter()) {
            holders[i].retain(|&h| h != a && h != b);
        }
        for &i in sa {
            if sb.contains(&i) {
                remaining[i] -= 1;
            }
        }
        for &i in &new {
            holders[i].push(id);
        }
        sets[a] = None;
        sets[b] = None;
        sets.push(Some(new));
        children.push((a, b));
        alive -= 1;
        push_neighbours(id, &sets, &holders, &remaining, &mut heap);
    }
    // Disconnected pieces: join the smallest first.
    while alive > 1 {
        let mut live: Vec<(Ord64, usize)> = sets
            .iter()
            .enumerate()
            .filter_map(|(t, s)| s.as_ref().map(|s| (Ord64(size(s)), t)))
            .collect();
        live.sort();
        let (a, b) = (live[0].1.min(live[1].1), live[0].1.max(live[1].1));
        let new = merged(sets[a].as_ref().unwrap(), sets[b].as_ref().unwrap(), &remaining);
        for &i in sets[a].as_ref().unwrap() {
            if sets[b].as_ref().unwrap().contains(&i) {
                remaining[i] -= 1;
            }
        }
        sets[a] = None;
        sets[b] = None;
        sets.push(Some(new));
        children.push((a, b));
        alive -= 1;
    }
    ContractionTree { n_leaves, children }
}

/// Variable-elimination tree: repeatedly picks the index whose holders would
/// merge into the smallest tensor, and merges those holders smallest-first.
pub fn elimination_tree(network: &TensorNetwork, batch_size: usize) -> ContractionTree {
    eliminate(network, batch_size, None)
}

/// Elimination tree for a fixed order: every mechanism index first, then
/// detector indices by id. Generated models number detectors round by
/// round, so this sweeps the network along time.
pub fn sweep_tree(network: &TensorNetwork, batch_size: usize) -> ContractionTree {
    let mut order: Vec<usize> = (0..network.indices.len())
        .filter(|&i| matches!(network.indices[i], IndexKind::Mechanism(_)))
        .collect();
    let mut det: Vec<(usize, usize)> = (0..network.indices.len())
        .filter_map(|i| match network.indices[i] {
            IndexKind::Detector(j) => Some((j, i)),
            _ => None,
        })
        .collect();
    det.sort_unstable();
    order.extend(det.into_iter().map(|p| p.1));
    eliminate(network, batch_size, Some(&order))
}

fn eliminate(network: &TensorNetwork, batch_size: usize, order: Option<&[usize]>) -> ContractionTree {
    let n_leaves = network.n_nodes();
    if n_leaves == 0 {
        return ContractionTree {
            n_leaves: 0,
            children: Vec::new(),
        };
    }
    let deg = network.index_degrees();
    let batch = network.batch_index();
    let lb = (batch_size.max(1) as f64).log2();
    let mut sets: Vec<Option<Vec<usize>>> = leaf_open(network, &deg).into_iter().map(Some).collect();
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); network.indices.len()];
    for (t, s) in sets.iter().enumerate() {
        for &i in s.as_ref().unwrap() {
            holders[i].push(t);
        }
    }
    let mut remaining: Vec<usize> = holders.iter().map(|h| h.len()).collect();
    let l2 = |ix: &[usize]| log2_size(network, ix, lb);

    // log2 size of the tensor obtained by merging every holder of `v`.
    let score = |v: usize, sets: &[Option<Vec<usize>>], holders: &[Vec<usize>], remaining: &[usize]| {
        let mut count: BTreeMap<usize, usize> = BTreeMap::new();
        for &t in &holders[v] {
            for &i in sets[t].as_ref().unwrap() {
                *count.entry(i).or_default() += 1;
            }
        }
        let open: Vec<usize> = count
            .into_iter()
            .filter(|&(i, c)| i == batch || c < remaining[i])
            .map(|(i, _)| i)
            .collect();
        l2(&open)
    };

    let mut heap = BinaryHeap::new();
    for v in 0..network.indices.len() {
        if order.is_none() && v != batch && !holders[v].is_empty() {
            heap.push(Reverse((Ord64(score(v, &sets, &holders, &remaining)), v)));
        }
    }
    let mut children = Vec::with_capacity(n_leaves - 1);
    let merge = |a: usize,
                     b: usize,
                     sets: &mut Vec<Option<Vec<usize>>>,
                     holders: &mut Vec<Vec<usize>>,
                     remaining: &mut Vec<usize>,
                     children: &mut Vec<(usize, usize)>| {
        let sa = sets[a].take().unwrap();
        let sb = sets[b].take().unwrap();
        let id = sets.len();
        let mut new = Vec::with_capacity(sa.len() + sb.len());
        for &i in &sa {
            if sb.contains(&i) {
                remaining[i] -= 1;
                if i == batch || remaining[i] > 1 {
                    new.push(i);
                }
            } else {
                new.push(i);
            }
        }
        new.extend(sb.iter().copied().filter(|i| !sa.contains(i)));
        new.sort_unstable();
        for &i in sa.iter().chain(&sb) {
            holders[i].retain(|&h| h != a && h != b);
        }
        for &i in &new {
            holders[i].push(id);
        }
        sets.push(Some(new));
        children.push((a.min(b), a.max(b)));
        id
    };
    let mut alive = n_leaves;
    let mut fixed = order.unwrap_or(&[]).iter();
    loop {
        let v = if order.is_some() {
            match fixed.next() {
                Some(&v) => v,
                None => break,
            }
        } else {
            let Some(Reverse((Ord64(sc), v))) = heap.pop() else {
                break;
            };
            if holders[v].len() >= 2 {
                let now = score(v, &sets, &holders, &remaining);
                if now != sc {
                    heap.push(Reverse((Ord64(now), v)));
                    continue;
                }
            }
            v
        };
        if holders[v].len() < 2 {
            continue;
        }
        let mut group: Vec<usize> = holders[v].clone();
        let mut touched: Vec<usize> = Vec::new();
        while group.len() > 1 {
            group.sort_by(|&x, &y| {
                l2(sets[y].as_ref().unwrap())
                    .total_cmp(&l2(sets[x].as_ref().unwrap()))
                    .then(y.cmp(&x))
            });
            let a = group.pop().unwrap();
            let b = group.pop().unwrap();
            let id = merge(a, b, &mut sets, &mut holders, &mut remaining, &mut children);
            alive -= 1;
            group.push(id);
        }
        for &i in sets[group[0]].as_ref().unwrap() {
            if i != batch && !touched.contains(&i) {
                touched.push(i);
            }
        }
        for i in touched {
            if order.is_none() && holders[i].len() > 1 {
                heap.push(Reverse((Ord64(score(i, &sets, &holders, &remaining)), i)));
            }
        }
    }
    while alive > 1 {
        let mut live: Vec<(Ord64, usize)> = sets
            .iter()
            .enumerate()
            .filter_map(|(t, s)| s.as_ref().map(|s| (Ord64(l2(s)), t)))
            .collect();
        live.sort();
        merge(live[0].1, live[1].1, &mut sets, &mut holders, &mut remaining, &mut children);
        alive -= 1;
    }
    // Children must precede parents: ids are assigned in merge order, so
    // they already do.
    ContractionTree { n_leaves, children }
}

/// Mutable pointer form of a tree with per-node open index bitsets.
struct Annealer {
    weights: CostWeights,
    n_leaves: usize,
    words: usize,
    left: Vec<usize>,
    right: Vec<usize>,
    open: Vec<u64>,
    l2size: Vec<f64>,
    /// `log2` of the contraction cost at each internal node.
    l2flops: Vec<f64>,
    lb: f64,
    batch_word: usize,
    batch_bit: u64,
    flops: f64,
    access: f64,
    sizes: BTreeMap<i64, usize>,
}

const NONE: usize = usize::MAX;

/// `(node, new left, new right, new open set)`.
type Change = (usize, usize, usize, Vec<u64>);

struct Evaluated {
    loss: f64,
    flops: f64,
    access: f64,
    node_sizes: Vec<(f64, f64)>,
}

fn size_key(l2: f64) -> i64 {
    (l2 * 1e6).round() as i64
}

impl Annealer {
    fn new(net: &TensorNetwork, tree: &ContractionTree, cfg: &SaConfig) -> Self {
        let n_nodes = tree.n_nodes();
        let words = net.indices.len().div_ceil(64);
        let deg = net.index_degrees();
        let batch = net.batch_index();
        let mut a = Self {
            weights: cfg.weights,
            n_leaves: tree.n_leaves,
            words,
            left: vec![NONE; n_nodes],
            right: vec![NONE; n_nodes],
            open: vec![0; n_nodes * words],
            l2size: vec![0.0; n_nodes],
            l2flops: vec![0.0; n_nodes],
            lb: (cfg.batch_size.max(1) as f64).log2(),
            batch_word: batch / 64,
            batch_bit: 1 << (batch % 64),
            flops: 0.0,
            access: 0.0,
            sizes: BTreeMap::new(),
        };
        for (leaf, ix) in leaf_open(net, &deg).iter().enumerate() {
            for &i in ix {
                a.open[leaf * words + i / 64] |= 1 << (i % 64);
            }
            a.l2size[leaf] = a.set_l2(&a.open[leaf * words..(leaf + 1) * words].to_vec());
        }
        // Open sets bottom-up from holder counts.
        let mut counts: Vec<BTreeMap<usize, usize>> = Vec::with_capacity(n_nodes);
        for ix in leaf_open(net, &deg) {
            counts.push(ix.into_iter().map(|i| (i, 1)).collect());
        }
        for (k, &(l, r)) in tree.children.iter().enumerate() {
            let id = tree.n_leaves + k;
            a.left[id] = l;
            a.right[id] = r;
            let mut c = counts[l].clone();
            for (&i, &n) in &counts[r] {
                *c.entry(i).or_default() += n;
            }
            c.retain(|&i, n| i == batch || *n < deg[i]);
            for &i in c.keys() {
                a.open[id * words + i / 64] |= 1 << (i % 64);
            }
            counts.push(c);
            let s = a.open[id * words..(id + 1) * words].to_vec();
            a.l2size[id] = a.set_l2(&s);
        }
        drop(counts);
        for id in tree.n_leaves..n_nodes {
            let u = a.union(a.left[id], a.right[id]);
            a.l2flops[id] = a.set_l2(&u);
        }
        a.recompute_totals();
        a
    }

    fn row(&self, n: usize) -> &[u64] {
        &self.open[n * self.words..(n + 1) * self.words]
    }

    fn set_l2(&self, s: &[u64]) -> f64 {
        let mut bits: u32 = s.iter().map(|w| w.count_ones()).sum();
        let mut l2 = 0.0;
        if s[self.batch_word] & self.batch_bit != 0 {
            bits -= 1;
            l2 += self.lb;
        }
        l2 + bits as f64
    }

    fn union(&self, a: usize, b: usize) -> Vec<u64> {
        self.row(a).iter().zip(self.row(b)).map(|(x, y)| x | y).collect()
    }

    /// Open set of the union of parts `p`, given the other parts `q` of
    /// the node `x` they partition.
    fn open_of(&self, p: &[usize], q: &[usize], x: usize) -> Vec<u64> {
        (0..self.words)
            .map(|w| {
                let inside = p.iter().fold(0, |acc, &n| acc | self.open[n * self.words + w]);
                let outside = q.iter().fold(self.open[x * self.words + w], |acc, &n| {
                    acc | self.open[n * self.words + w]
                });
                inside & outside
            })
            .collect()
    }

    fn recompute_totals(&mut self) {
        self.flops = 0.0;
        self.access = 0.0;
        self.sizes.clear();
        for id in self.n_leaves..self.left.len() {
            self.flops += self.l2flops[id].exp2();
            self.access += self.node_access(self.left[id], self.right[id], self.l2size[id]);
            *self.sizes.entry(size_key(self.l2size[id])).or_default() += 1;
        }
    }

    fn node_access(&self, l: usize, r: usize, l2: f64) -> f64 {
        8.0 * (self.l2size[l].exp2() + self.l2size[r].exp2() + l2.exp2())
    }

    fn max_l2(&self) -> f64 {
        self.sizes.keys().next_back().map_or(0.0, |&k| k as f64 / 1e6)
    }

    fn loss(&self) -> f64 {
        self.weights.loss(self.flops, self.max_l2().exp2(), self.access)
    }

    fn parent_map(&self) -> Vec<usize> {
        let mut p = vec![NONE; self.left.len()];
        for id in self.n_leaves..self.left.len() {
            p[self.left[id]] = id;
            p[self.right[id]] = id;
        }
        p
    }

    /// Evaluates a proposal that rewires internal nodes. `changes` lists
    /// `(node, left, right, open)` for every node whose children change.
    fn delta(&self, changes: &[Change]) -> Evaluated {
        let mut flops = self.flops;
        let mut access = self.access;
        let mut sizes = SizeDelta {
            base: &self.sizes,
            changes: Vec::new(),
        };
        let new_l2: Vec<(usize, f64)> = changes.iter().map(|c| (c.0, self.set_l2(&c.3))).collect();
        let l2_of = |n: usize| new_l2.iter().find(|p| p.0 == n).map_or(self.l2size[n], |p| p.1);
        let open_word = |n: usize, w: usize| {
            changes
                .iter()
                .find(|c| c.0 == n)
                .map_or(self.open[n * self.words + w], |c| c.3[w])
        };
        let mut node_sizes = Vec::with_capacity(changes.len());
        for &(n, l, r, _) in changes {
            let s = l2_of(n);
            let u: Vec<u64> = (0..self.words).map(|w| open_word(l, w) | open_word(r, w)).collect();
            let fl = self.set_l2(&u);
            flops += fl.exp2() - self.l2flops[n].exp2();
            access += 8.0 * (l2_of(l).exp2() + l2_of(r).exp2() + s.exp2())
                - self.node_access(self.left[n], self.right[n], self.l2size[n]);
            sizes.changes.push((size_key(self.l2size[n]), -1));
            sizes.changes.push((size_key(s), 1));
            node_sizes.push((s, fl));
        }
        let max = sizes.max_key().map_or(0.0, |k| k as f64 / 1e6);
        Evaluated {
            loss: self.weights.loss(flops, max.exp2(), access),
            flops,
            access,
            node_sizes,
        }
    }

    fn apply(&mut self, changes: Vec<Change>, ev: Evaluated) {
        for ((n, l, r, o), (s, fl)) in changes.into_iter().zip(ev.node_sizes) {
            let key = size_key(self.l2size[n]);
            let e = self.sizes.get_mut(&key).unwrap();
            *e -= 1;
            if *e == 0 {
                self.sizes.remove(&key);
            }
            self.left[n] = l;
            self.right[n] = r;
            self.open[n * self.words..(n + 1) * self.words].copy_from_slice(&o);
            self.l2size[n] = s;
            self.l2flops[n] = fl;
            *self.sizes.entry(size_key(s)).or_default() += 1;
        }
        self.flops = ev.flops;
        self.access = ev.access;
    }

    /// A random proposal at an internal node, or `None` if not applicable.
    fn propose(&self, rng: &mut ChaCha8Rng) -> Option<Vec<Change>> {
        let n_internal = self.left.len() - self.n_leaves;
        if n_internal < 2 {
            return None;
        }
        let x = self.n_leaves + rng.random_range(0..n_internal);
        let (l, r) = (self.left[x], self.right[x]);
        if rng.random_bool(0.5) {
            // Rotation: X = (Y, C), Y = (A, B) -> X = (A, (B, C)) or (B, (A, C)).
            let (y, c) = if rng.random_bool(0.5) { (l, r) } else { (r, l) };
            if y < self.n_leaves {
                return None;
            }
            let (mut a, mut b) = (self.left[y], self.right[y]);
            if rng.random_bool(0.5) {
                std::mem::swap(&mut a, &mut b);
            }
            let oy = self.open_of(&[b, c], &[a], x);
            Some(vec![(y, b, c, oy), (x, a, y, self.row(x).to_vec())])
        } else {
            // Cousin swap: X = ((a, b), (c, d)) -> ((a, c), (b, d)) or ((a, d), (c, b)).
            if l < self.n_leaves || r < self.n_leaves {
                return None;
            }
            let (a, b) = (self.left[l], self.right[l]);
            let (mut c, mut d) = (self.left[r], self.right[r]);
            if rng.random_bool(0.5) {
                std::mem::swap(&mut c, &mut d);
            }
            let oy = self.open_of(&[a, c], &[b, d], x);
            let oz = self.open_of(&[b, d], &[a, c], x);
            Some(vec![(l, a, c, oy), (r, b, d, oz), (x, l, r, self.row(x).to_vec())])
        }
    }

    fn to_tree(&self) -> ContractionTree {
        let parent = self.parent_map();
        let root = (self.n_leaves..self.left.len())
            .find(|&n| parent[n] == NONE)
            .unwrap_or(0);
        let mut id = vec![NONE; self.left.len()];
        for (leaf, slot) in id.iter_mut().enumerate().take(self.n_leaves) {
            *slot = leaf;
        }
        let mut children = Vec::with_capacity(self.n_leaves.saturating_sub(1));
        let mut stack = vec![(root, false)];
        while let Some((n, expanded)) = stack.pop() {
            if n < self.n_leaves {
                continue;
            }
            if expanded {
                children.push((id[self.left[n]], id[self.right[n]]));
                id[n] = self.n_leaves + children.len() - 1;
            } else {
                stack.push((n, true));
                stack.push((self.right[n], false));
                stack.push((self.left[n], false));
            }
        }
        ContractionTree {
            n_leaves: self.n_leaves,
            children,
        }
    }
}

/// Pending changes to the size histogram of an annealer.
struct SizeDelta<'a> {
    base: &'a BTreeMap<i64, usize>,
    changes: Vec<(i64, i64)>,
}

impl SizeDelta<'_> {
    fn count(&self, k: i64) -> i64 {
        *self.base.get(&k).unwrap_or(&0) as i64
            + self.changes.iter().filter(|c| c.0 == k).map(|c| c.1).sum::<i64>()
    }
    fn max_key(&self) -> Option<i64> {
        let added = self.changes.iter().filter(|c| c.1 > 0).map(|c| c.0).max();
        let base = self.base.keys().rev().find(|&&k| self.count(k) > 0).copied();
        match (added, base) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        }
    }
}

fn anneal(net: &TensorNetwork, start: &ContractionTree, cfg: &SaConfig, seed: u64) -> (ContractionTree, f64) {
    let mut st = Annealer::new(net, start, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = st.loss();
    let mut best = current;
    let mut best_tree = start.clone();
    if st.left.len() - st.n_leaves < 2 {
        return (best_tree, best);
    }
    let mut t = match cfg.t0 {
        Some(t) => t,
        None => {
            let mut ups = Vec::new();
            for _ in 0..200 {
                if let Some(ch) = st.propose(&mut rng) {
                    let l = st.delta(&ch).loss;
                    if l.is_finite() && l > current {
                        ups.push(l - current);
                    }
                }
            }
            if ups.is_empty() {
                cfg.t_floor
            } else {
                (-ups.iter().sum::<f64>() / ups.len() as f64 / 0.8f64.ln()).max(cfg.t_floor)
            }
        }
    };
    loop {
        for _ in 0..cfg.proposals_per_temperature {
            let Some(ch) = st.propose(&mut rng) else {
                continue;
            };
            let ev = st.delta(&ch);
            let l = ev.loss;
            let accept = if l <= current {
                true
            } else if l.is_finite() && current.is_finite() {
                rng.random::<f64>() < ((current - l) / t).exp()
            } else {
                current.is_infinite() && l.is_finite()
            };
            if accept {
                st.apply(ch, ev);
                current = st.loss();
                if current < best {
                    best = current;
                    best_tree = st.to_tree();
                }
            }
        }
        st.recompute_totals();
        current = st.loss();
        if t <= cfg.t_floor {
            break;
        }
        t = (t * cfg.decay).max(cfg.t_floor);
    }
    (best_tree, best)
}

/// Greedy start followed by simulated annealing; returns the best tree seen.
pub fn optimize_path(network: &TensorNetwork, cfg: &SaConfig) -> Result<(ContractionTree, CostReport)> {
    if cfg.decay <= 0.0 || cfg.decay >= 1.0 || cfg.t_floor <= 0.0 {
        return Err(Error::InvalidParameter("annealing needs 0 < decay < 1 and t_floor > 0".into()));
    }
    let mut seeds = Vec::with_capacity(3);
    for (name, tree) in [
        ("pairwise greedy", greedy_tree(network, cfg.batch_size)),
        ("min-size elimination", elimination_tree(network, cfg.batch_size)),
        ("detector sweep", sweep_tree(network, cfg.batch_size)),
    ] {
        let c = estimate_cost(network, &tree, cfg.batch_size, &cfg.weights)?;
        log::info!(
            "{name} tree: flops {:.3e}, max tensor {:.3e}, loss {:.4}",
            c.total_flops,
            c.max_tensor_elems,
            c.loss
        );
        seeds.push((tree, c));
    }
    let (start, greedy) = seeds
        .into_iter()
        .min_by(|a, b| a.1.loss.total_cmp(&b.1.loss).then(a.1.total_flops.total_cmp(&b.1.total_flops)))
        .unwrap();
    if cfg.proposals_per_temperature == 0 || network.n_nodes() < 4 {
        return Ok((start, greedy));
    }
    let chains = cfg.chains.max(1);
    let results: Vec<(ContractionTree, f64)> = (0..chains)
        .into_par_iter()
        .map(|c| anneal(network, &start, cfg, cfg.seed.wrapping_add(c as u64)))
        .collect();
    let mut best = (start, greedy.loss);
    for (tree, loss) in results {
        if loss < best.1 {
            best = (tree, loss);
        }
    }
    let report = estimate_cost(network, &best.0, cfg.batch_size, &cfg.weights)?;
    Ok((best.0, report))
}

/// Hash of the network structure and search settings.
pub fn tree_cache_key(network: &TensorNetwork, cfg: &SaConfig) -> String {
    let mut h = Sha256::new();
    h.update(b"dmle-tree-v1");
    h.update((network.indices.len() as u64).to_le_bytes());
    for k in &network.indices {
        h.update([matches!(k, IndexKind::Batch) as u8]);
    }
    for n in &network.nodes {
        h.update((n.indices.len() as u64).to_le_bytes());
        for &i in &n.indices {
            h.update((i as u64).to_le_bytes());
        }
    }
    h.update(serde_json::to_vec(cfg).unwrap_or_default());
    hex::encode(h.finalize())
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    tree: ContractionTree,
    report: CostReport,
}

/// Loads a cached tree for this network and configuration, or optimizes and stores one.
pub fn load_or_optimize(
    network: &TensorNetwork,
    cfg: &SaConfig,
    cache_dir: &Path,
) -> Result<(ContractionTree, CostReport)> {
    let key = tree_cache_key(network, cfg);
    let path = cache_dir.join(format!("{key}.json"));
    if let Ok(text) = std::fs::read_to_string(&path) {
        match serde_json::from_str::<CacheEntry>(&text) {
            Ok(e) if e.key == key && e.tree.n_leaves == network.n_nodes() && e.tree.validate().is_ok() => {
                return Ok((e.tree, e.report));
            }
            _ => log::warn!("ignoring unreadable tree cache {}", path.display()),
        }
    }
    let (tree, report) = optimize_path(network, cfg)?;
    std::fs::create_dir_all(cache_dir)?;
    let entry = CacheEntry { key, tree, report };
    std::fs::write(&path, serde_json::to_string(&entry)?)?;
    Ok((entry.tree, entry.report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tnbuild::{Node, NodeKind};

    fn random_network(n_nodes: usize, n_indices: usize, seed: u64) -> TensorNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        // Each index joins two or three random nodes.
        for i in 0..n_indices {
            let k = rng.random_range(2..=3);
            for _ in 0..k {
                let t = rng.random_range(0..n_nodes);
                if !nodes[t].contains(&i) {
                    nodes[t].push(i);
                }
            }
        }
        let mut indices: Vec<IndexKind> = (0..n_indices).map(IndexKind::Mechanism).collect();
        indices.push(IndexKind::Batch);
        TensorNetwork {
            indices,
            nodes: nodes
                .into_iter()
                .map(|ix| Node {
                    kind: NodeKind::Prob { mechanism: 0 },
                    indices: ix,
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

    fn quick() -> SaConfig {
        SaConfig {
            proposals_per_temperature: 300,
            decay: 0.8,
            t_floor: 1e-2,
            ..SaConfig::default()
        }
    }

    #[test]
    fn two_nodes_give_the_unique_tree() {
        let net = random_network(2, 3, 1);
        let (tree, _) = optimize_path(&net, &quick()).unwrap();
        assert_eq!(tree.children, vec![(0, 1)]);
    }

    #[test]
    fn greedy_trees_are_valid() {
        for seed in 0..10 {
            let net = random_network(15, 20, seed);
            for t in [greedy_tree(&net, 1), elimination_tree(&net, 1), sweep_tree(&net, 1)] {
                t.validate().unwrap();
                assert_eq!(t.n_leaves, 15);
            }
        }
    }

    #[test]
    fn annealing_bookkeeping_matches_fresh_estimate() {
        let net = random_network(20, 30, 7);
        let cfg = quick();
        let start = greedy_tree(&net, 1);
        let (tree, loss) = anneal(&net, &start, &cfg, 3);
        tree.validate().unwrap();
        let fresh = estimate_cost(&net, &tree, 1, &cfg.weights).unwrap();
        assert!((fresh.loss - loss).abs() < 1e-9, "{} vs {loss}", fresh.loss);
    }

    #[test]
    fn same_seed_same_tree() {
        let net = random_network(20, 30, 9);
        let a = optimize_path(&net, &quick()).unwrap();
        let b = optimize_path(&net, &quick()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn cache_round_trip() {
        let dir = std::env::temp_dir().join(format!("dmle-cache-{}", std::process::id()));
        let net = random_network(10, 12, 2);
        let a = load_or_optimize(&net, &quick(), &dir).unwrap();
        let b = load_or_optimize(&net, &quick(), &dir).unwrap();
        assert_eq!(a.0, b.0);
        std::fs::remove_dir_all(&dir).ok();
    }
}
