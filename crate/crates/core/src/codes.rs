//! Built-in memory-experiment models under uniform depolarizing noise.
//!
//! A small stabilizer circuit is written out gate by gate, and every single
//! fault of every noise channel is pushed through the rest of the circuit as
//! a Pauli frame. The detectors and logical observable each fault flips
//! define one mechanism; identical mechanisms are merged.
//!
//! Noise placement (all rates equal to `p`):
//! - `X_ERROR(p)` after every reset and before every measurement,
//! - `DEPOLARIZE1(p)` on data qubits at the start of each round,
//! - `DEPOLARIZE1(p)` after each single-qubit gate, `DEPOLARIZE2(p)` after each CX.
//!
//! A depolarizing channel is decomposed into independent Pauli channels:
//! three channels of probability `(1 - sqrt(1 - 4p/3)) / 2` for one qubit and
//! fifteen of probability `(1 - (1 - 16p/15)^(1/8)) / 2` for two qubits.
//!
//! Detector coordinates are `(x, t)` for repetition codes and `(x, y, t)` for
//! the rotated surface code; the round is always the last coordinate.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::dem::{DetectorErrorModel, ErrorMechanism};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeFamily {
    Repetition,
    Surface,
}

impl FromStr for CodeFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "repetition" | "rep" => Ok(CodeFamily::Repetition),
            "surface" => Ok(CodeFamily::Surface),
            other => Err(Error::InvalidParameter(format!("unknown code family '{other}'"))),
        }
    }
}

impl fmt::Display for CodeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodeFamily::Repetition => "repetition",
            CodeFamily::Surface => "surface",
        })
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    R(Vec<usize>),
    M(Vec<usize>),
    MR(Vec<usize>),
    H(Vec<usize>),
    CX(Vec<(usize, usize)>),
    XError(f64, Vec<usize>),
    Depolarize1(f64, Vec<usize>),
    Depolarize2(f64, Vec<(usize, usize)>),
}

#[derive(Clone, Debug, Default)]
pub(crate) struct Circuit {
    pub n_qubits: usize,
    pub ops: Vec<Op>,
    pub n_measurements: usize,
    pub detectors: Vec<(Vec<usize>, Vec<f64>)>,
    pub observable: Vec<usize>,
}

impl Circuit {
    fn push_measure(&mut self, qs: &[usize], reset: bool) -> Vec<usize> {
        let first = self.n_measurements;
        self.n_measurements += qs.len();
        self.ops.push(if reset {
            Op::MR(qs.to_vec())
        } else {
            Op::M(qs.to_vec())
        });
        (first..first + qs.len()).collect()
    }
}

/// One Pauli fault: `(qubit, x, z)` components and its probability.
struct Fault {
    op: usize,
    prob: f64,
    paulis: Vec<(usize, bool, bool)>,
}

fn single_qubit_channel(p: f64) -> f64 {
    0.5 * (1.0 - (1.0 - 4.0 * p / 3.0).sqrt())
}

fn two_qubit_channel(p: f64) -> f64 {
    0.5 * (1.0 - (1.0 - 16.0 * p / 15.0).powf(0.125))
}

const PAULIS: [(bool, bool); 4] = [(false, false), (true, false), (true, true), (false, true)];

fn enumerate_faults(circuit: &Circuit) -> Vec<Fault> {
    let mut faults = Vec::new();
    for (k, op) in circuit.ops.iter().enumerate() {
        match op {
            Op::XError(p, qs) => {
                for &q in qs {
                    faults.push(Fault {
                        op: k,
                        prob: *p,
                        paulis: vec![(q, true, false)],
                    });
                }
            }
            Op::Depolarize1(p, qs) => {
                let q1 = single_qubit_channel(*p);
                for &q in qs {
                    for &(x, z) in &PAULIS[1..] {
                        faults.push(Fault {
                            op: k,
                            prob: q1,
                            paulis: vec![(q, x, z)],
                        });
                    }
                }
            }
            Op::Depolarize2(p, pairs) => {
                let q2 = two_qubit_channel(*p);
                for &(a, b) in pairs {
                    for (i, &(xa, za)) in PAULIS.iter().enumerate() {
                        for (j, &(xb, zb)) in PAULIS.iter().enumerate() {
                            if i == 0 && j == 0 {
                                continue;
                            }
                            faults.push(Fault {
                                op: k,
                                prob: q2,
                                paulis: vec![(a, xa, za), (b, xb, zb)],
                            });
                        }
                    }
                }
            }
            _ => {}
        }
    }
    faults
}

/// Propagates every fault through the circuit, 64 faults per pass.
pub(crate) fn circuit_to_dem(circuit: &Circuit) -> Result<DetectorErrorModel> {
    let faults = enumerate_faults(circuit);
    let n_det = circuit.detectors.len();
    let mut mechanisms = Vec::with_capacity(faults.len());
    for batch in faults.chunks(64) {
        let mut x = vec![0u64; circuit.n_qubits];
        let mut z = vec![0u64; circuit.n_qubits];
        let mut meas = vec![0u64; circuit.n_measurements];
        let mut next_fault = 0;
        let mut m_idx = 0usize;
        for (k, op) in circuit.ops.iter().enumerate() {
            while next_fault < batch.len() && batch[next_fault].op == k {
                let bit = 1u64 << next_fault;
                for &(q, px, pz) in &batch[next_fault].paulis {
                    if px {
                        x[q] ^= bit;
                    }
                    if pz {
                        z[q] ^= bit;
                    }
                }
                next_fault += 1;
            }
            match op {
                Op::R(qs) => {
                    for &q in qs {
                        x[q] = 0;
                        z[q] = 0;
                    }
                }
                Op::M(qs) | Op::MR(qs) => {
                    for &q in qs {
                        meas[m_idx] = x[q];
                        m_idx += 1;
                        z[q] = 0;
                        if matches!(op, Op::MR(_)) {
                            x[q] = 0;
                        }
                    }
                }
                Op::H(qs) => {
                    for &q in qs {
                        std::mem::swap(&mut x[q], &mut z[q]);
                    }
                }
                Op::CX(pairs) => {
                    for &(c, t) in pairs {
                        x[t] ^= x[c];
                        z[c] ^= z[t];
                    }
                }
                Op::XError(..) | Op::Depolarize1(..) | Op::Depolarize2(..) => {}
            }
        }
        let mut lane_dets: Vec<Vec<usize>> = vec![Vec::new(); batch.len()];
        for (j, (ms, _)) in circuit.detectors.iter().enumerate() {
            let mut w = ms.iter().fold(0u64, |acc, &mi| acc ^ meas[mi]);
            while w != 0 {
                let lane = w.trailing_zeros() as usize;
                lane_dets[lane].push(j);
                w &= w - 1;
            }
        }
        let obs = circuit.observable.iter().fold(0u64, |acc, &mi| acc ^ meas[mi]);
        for (lane, (fault, dets)) in batch.iter().zip(lane_dets).enumerate() {
            let logical = (obs >> lane) & 1 == 1;
            if dets.is_empty() && !logical {
                continue;
            }
            mechanisms.push(ErrorMechanism::new(fault.prob, dets, logical));
        }
    }
    let mut model = DetectorErrorModel::new(n_det, mechanisms)?;
    for (j, (_, coords)) in circuit.detectors.iter().enumerate() {
        model.set_detector_coords(j, coords.clone());
    }
    Ok(model)
}

/// Checks that every detector and the observable are deterministic in the
/// noiseless circuit by propagating their Z-sensitivity backwards.
pub(crate) fn check_deterministic(circuit: &Circuit) -> Result<()> {
    let mut sets: Vec<&[usize]> = circuit.detectors.iter().map(|(m, _)| m.as_slice()).collect();
    sets.push(&circuit.observable);
    // Measurement index of each measured target, in op order.
    let mut starts = Vec::with_capacity(circuit.ops.len());
    let mut count = 0;
    for op in &circuit.ops {
        starts.push(count);
        if let Op::M(qs) | Op::MR(qs) = op {
            count += qs.len();
        }
    }
    for (j, set) in sets.iter().enumerate() {
        let mut x = vec![false; circuit.n_qubits];
        let mut z = vec![false; circuit.n_qubits];
        let fail = || Error::InvalidParameter(format!("generated detector {j} is not deterministic"));
        for (k, op) in circuit.ops.iter().enumerate().rev() {
            match op {
                Op::R(qs) => {
                    for &q in qs {
                        if x[q] {
                            return Err(fail());
                        }
                        z[q] = false;
                    }
                }
                Op::M(qs) | Op::MR(qs) => {
                    for (i, &q) in qs.iter().enumerate() {
                        if matches!(op, Op::MR(_)) {
                            if x[q] {
                                return Err(fail());
                            }
                            z[q] = false;
                        }
                        if x[q] {
                            return Err(fail());
                        }
                        if set.contains(&(starts[k] + i)) {
                            z[q] ^= true;
                        }
                    }
                }
                Op::H(qs) => {
                    for &q in qs {
                        std::mem::swap(&mut x[q], &mut z[q]);
                    }
                }
                Op::CX(pairs) => {
                    for &(c, t) in pairs {
                        x[t] ^= x[c];
                        z[c] ^= z[t];
                    }
                }
                _ => {}
            }
        }
        if x.iter().any(|&b| b) {
            return Err(fail());
        }
    }
    Ok(())
}

fn check_params(d: usize, r: usize, p: f64) -> Result<()> {
    if d < 3 || d % 2 == 0 {
        return Err(Error::InvalidParameter(format!("distance must be odd and >= 3, got {d}")));
    }
    if r < 1 {
        return Err(Error::InvalidParameter("at least one round is required".into()));
    }
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::InvalidParameter(format!("error rate {p} outside (0, 0.5)")));
    }
    Ok(())
}

pub(crate) fn repetition_circuit(d: usize, r: usize, p: f64) -> Circuit {
    // Data D_k at x = 2k, ancilla A_k at x = 2k + 1.
    let data: Vec<usize> = (0..d).map(|k| 2 * k).collect();
    let anc: Vec<usize> = (0..d - 1).map(|k| 2 * k + 1).collect();
    let all: Vec<usize> = (0..2 * d - 1).collect();
    let mut c = Circuit {
        n_qubits: 2 * d - 1,
        ..Default::default()
    };
    c.ops.push(Op::R(all.clone()));
    c.ops.push(Op::XError(p, all));
    let layer1: Vec<(usize, usize)> = (0..d - 1).map(|k| (data[k], anc[k])).collect();
    let layer2: Vec<(usize, usize)> = (0..d - 1).map(|k| (data[k + 1], anc[k])).collect();
    let mut prev: Vec<usize> = Vec::new();
    for t in 0..r {
        c.ops.push(Op::Depolarize1(p, data.clone()));
        for layer in [&layer1, &layer2] {
            c.ops.push(Op::CX(layer.clone()));
            c.ops.push(Op::Depolarize2(p, layer.clone()));
        }
        c.ops.push(Op::XError(p, anc.clone()));
        let ms = c.push_measure(&anc, true);
        c.ops.push(Op::XError(p, anc.clone()));
        for k in 0..d - 1 {
            let mut set = vec![ms[k]];
            if t > 0 {
                set.push(prev[k]);
            }
            c.detectors.push((set, vec![(2 * k + 1) as f64, t as f64]));
        }
        prev = ms;
    }
    c.ops.push(Op::XError(p, data.clone()));
    let md = c.push_measure(&data, false);
    for k in 0..d - 1 {
        c.detectors
            .push((vec![md[k], md[k + 1], prev[k]], vec![(2 * k + 1) as f64, r as f64]));
    }
    c.observable = vec![md[d - 1]];
    c
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Basis {
    X,
    Z,
}

pub(crate) fn surface_circuit(d: usize, r: usize, p: f64) -> Circuit {
    // Data (i, j) at (2i+1, 2j+1); plaquettes (a, b) at (2a, 2b).
    let data_id = |i: usize, j: usize| j * d + i;
    let n_data = d * d;
    let mut plaquettes: Vec<(usize, usize, Basis)> = Vec::new();
    for b in 0..=d {
        for a in 0..=d {
            let basis = if (a + b) % 2 == 1 { Basis::Z } else { Basis::X };
            let side = a == 0 || a == d;
            let cap = b == 0 || b == d;
            let keep = match (side, cap) {
                (false, false) => true,
                (true, false) => basis == Basis::Z,
                (false, true) => basis == Basis::X,
                (true, true) => false,
            };
            if keep {
                plaquettes.push((a, b, basis));
            }
        }
    }
    let anc: Vec<usize> = (0..plaquettes.len()).map(|k| n_data + k).collect();
    let x_anc: Vec<usize> = plaquettes
        .iter()
        .zip(&anc)
        .filter(|(pl, _)| pl.2 == Basis::X)
        .map(|(_, &q)| q)
        .collect();
    let data: Vec<usize> = (0..n_data).collect();
    let neighbour = |a: usize, b: usize, dx: i64, dy: i64| -> Option<usize> {
        // Offsets are in units of half a plaquette: data at (2a+dx, 2b+dy).
        let x = 2 * a as i64 + dx;
        let y = 2 * b as i64 + dy;
        if x < 1 || y < 1 || x > 2 * d as i64 - 1 || y > 2 * d as i64 - 1 {
            return None;
        }
        Some(data_id(((x - 1) / 2) as usize, ((y - 1) / 2) as usize))
    };
    // The last two partners of an X ancilla lie in one row so that hook
    // errors run parallel to the Z logical and do not reduce the distance.
    let x_order = [(1, 1), (-1, 1), (1, -1), (-1, -1)];
    let z_order = [(1, 1), (1, -1), (-1, 1), (-1, -1)];
    let mut layers: Vec<Vec<(usize, usize)>> = vec![Vec::new(); 4];
    for ((a, b, basis), &q) in plaquettes.iter().zip(&anc) {
        let order = if *basis == Basis::Z { z_order } else { x_order };
        for (layer, &(dx, dy)) in order.iter().enumerate() {
            if let Some(dq) = neighbour(*a, *b, dx, dy) {
                layers[layer].push(match basis {
                    Basis::Z => (dq, q),
                    Basis::X => (q, dq),
                });
            }
        }
    }

    let mut c = Circuit {
        n_qubits: n_data + anc.len(),
        ..Default::default()
    };
    let all: Vec<usize> = (0..c.n_qubits).collect();
    c.ops.push(Op::R(all.clone()));
    c.ops.push(Op::XError(p, all));
    let mut prev: Vec<usize> = Vec::new();
    for t in 0..r {
        c.ops.push(Op::Depolarize1(p, data.clone()));
        c.ops.push(Op::H(x_anc.clone()));
        c.ops.push(Op::Depolarize1(p, x_anc.clone()));
        for layer in &layers {
            c.ops.push(Op::CX(layer.clone()));
            c.ops.push(Op::Depolarize2(p, layer.clone()));
        }
        c.ops.push(Op::H(x_anc.clone()));
        c.ops.push(Op::Depolarize1(p, x_anc.clone()));
        c.ops.push(Op::XError(p, anc.clone()));
        let ms = c.push_measure(&anc, true);
        c.ops.push(Op::XError(p, anc.clone()));
        for (k, (a, b, basis)) in plaquettes.iter().enumerate() {
            if t == 0 && *basis == Basis::X {
                continue;
            }
            let mut set = vec![ms[k]];
            if t > 0 {
                set.push(prev[k]);
            }
            c.detectors
                .push((set, vec![(2 * a) as f64, (2 * b) as f64, t as f64]));
        }
        prev = ms;
    }
    c.ops.push(Op::XError(p, data.clone()));
    let md = c.push_measure(&data, false);
    for (k, (a, b, basis)) in plaquettes.iter().enumerate() {
        if *basis != Basis::Z {
            continue;
        }
        let mut set: Vec<usize> = [(1, 1), (-1, 1), (1, -1), (-1, -1)]
            .iter()
            .filter_map(|&(dx, dy)| neighbour(*a, *b, dx, dy))
            .map(|dq| md[dq])
            .collect();
        set.push(prev[k]);
        c.detectors
            .push((set, vec![(2 * a) as f64, (2 * b) as f64, r as f64]));
    }
    c.observable = (0..d).map(|i| md[data_id(i, 0)]).collect();
    c
}

/// Generates the detector error model of a Z-basis memory experiment with
/// `r` rounds of stabilizer measurement at code distance `d`.
pub fn generate(code: CodeFamily, d: usize, r: usize, p: f64) -> Result<DetectorErrorModel> {
    check_params(d, r, p)?;
    let circuit = match code {
        CodeFamily::Repetition => repetition_circuit(d, r, p),
        CodeFamily::Surface => surface_circuit(d, r, p),
    };
    check_deterministic(&circuit)?;
    let mut model = circuit_to_dem(&circuit)?;
    model.metadata.insert("code".into(), code.to_string());
    model.metadata.insert("d".into(), d.to_string());
    model.metadata.insert("r".into(), r.to_string());
    model.metadata.insert("p".into(), p.to_string());
    Ok(model)
}

/// Keeps the first `n_max` mechanisms and renumbers the detectors they touch.
/// Used to obtain small non-graphlike instances from the surface code.
pub fn truncate(model: &DetectorErrorModel, n_max: usize) -> Result<DetectorErrorModel> {
    let kept: Vec<ErrorMechanism> = model.mechanisms().iter().take(n_max).cloned().collect();
    let mut used: Vec<usize> = kept.iter().flat_map(|m| m.detectors.iter().copied()).collect();
    used.sort_unstable();
    used.dedup();
    let remap: HashMap<usize, usize> = used.iter().enumerate().map(|(k, &j)| (j, k)).collect();
    let mechs = kept
        .into_iter()
        .map(|m| ErrorMechanism::new(m.prob, m.detectors.iter().map(|j| remap[j]), m.flips_logical))
        .collect();
    let mut out = DetectorErrorModel::new(used.len(), mechs)?;
    for (k, &j) in used.iter().enumerate() {
        if let Some(c) = model.detector_coords(j) {
            out.set_detector_coords(k, c.to_vec());
        }
    }
    out.metadata = model.metadata.clone();
    out.metadata.insert("truncated".into(), n_max.to_string());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_decomposition_reproduces_depolarizing_fidelity() {
        let p: f64 = 0.01;
        let q1 = single_qubit_channel(p);
        assert!(((1.0 - 2.0 * q1).powi(2) - (1.0 - 4.0 * p / 3.0)).abs() < 1e-15);
        let q2 = two_qubit_channel(p);
        assert!(((1.0 - 2.0 * q2).powi(8) - (1.0 - 16.0 * p / 15.0)).abs() < 1e-14);
    }

    #[test]
    fn repetition_counts_and_graphlike() {
        for (d, r) in [(3, 1), (3, 5), (5, 3), (7, 7)] {
            let m = generate(CodeFamily::Repetition, d, r, 0.001).unwrap();
            assert_eq!(m.n_detectors(), (d - 1) * (r + 1));
            assert!(m.is_graphlike(), "d={d} r={r}");
            assert!(m.has_logical());
            assert_eq!(m.metadata_usize("r"), Some(r));
        }
    }

    #[test]
    fn surface_counts() {
        for (d, r, m) in [(3, 1, 8), (3, 2, 16), (3, 5, 40), (5, 2, 48)] {
            let model = generate(CodeFamily::Surface, d, r, 0.001).unwrap();
            assert_eq!(model.n_detectors(), m, "d={d} r={r}");
            assert!(model.max_mechanism_degree() <= 4);
        }
    }

    #[test]
    fn swapped_x_schedule_is_detected() {
        // A circuit whose X-stabilizer is measured without the basis change
        // yields a random outcome; the checker must reject it.
        let mut c = repetition_circuit(3, 2, 0.001);
        c.ops.insert(2, Op::H(vec![1]));
        assert!(check_deterministic(&c).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate(CodeFamily::Repetition, 4, 3, 0.001).is_err());
        assert!(generate(CodeFamily::Repetition, 3, 0, 0.001).is_err());
        assert!(generate(CodeFamily::Surface, 3, 2, 0.0).is_err());
    }

    #[test]
    fn truncation_renumbers_detectors() {
        let model = generate(CodeFamily::Surface, 3, 1, 0.001).unwrap();
        let t = truncate(&model, 12).unwrap();
        assert!(t.n_mechanisms() <= 12);
        for j in 0..t.n_detectors() {
            assert!(t.mechanisms().iter().any(|m| m.detectors.contains(&j)));
        }
    }
}
