//! Transfer of trained priors between models of the same code with
//! different round counts.
//!
//! A mechanism is keyed by its detector coordinates with the round
//! coordinate made relative: to the first round for mechanisms touching
//! one of the first `BOUNDARY_LAYERS` detector layers, to the last round for
//! those touching one of the last `BOUNDARY_LAYERS`, and to the mechanism's
//! own earliest round otherwise (bulk). Two layers are needed because the
//! first round after initialization (and the one before the final readout)
//! sees a different mix of merged circuit faults than the steady state.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::dem::DetectorErrorModel;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum RoundClass {
    Start,
    Bulk,
    End,
    /// No detectors (pure logical flips).
    Static,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct MechanismKey {
    pub class: RoundClass,
    /// Per detector: coordinates scaled by 1000 and rounded, round axis relative.
    pub offsets: Vec<Vec<i64>>,
    pub flips_logical: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BroadcastReport {
    pub theta: Vec<f64>,
    /// Target mechanisms with no source key; they keep their initial prior.
    pub unmatched: Vec<usize>,
    pub unmatched_bulk: usize,
    /// Source keys whose mechanisms carry differing trained values.
    pub collisions: usize,
}

/// Detector layers at each end treated as boundary.
pub const BOUNDARY_LAYERS: usize = 2;

fn quantize(x: f64) -> i64 {
    (x * 1000.0).round() as i64
}

/// Keys of every mechanism, plus the earliest round of each (for matching
/// bulk mechanisms positionally when two models have the same round span).
pub fn mechanism_keys(model: &DetectorErrorModel) -> Result<Vec<(MechanismKey, i64)>> {
    let axis = model
        .round_axis()
        .ok_or_else(|| Error::Missing("round axis in detector coordinates".into()))?;
    let coords: Vec<&[f64]> = (0..model.n_detectors())
        .map(|j| {
            model
                .detector_coords(j)
                .filter(|c| c.len() > axis)
                .ok_or_else(|| Error::Missing(format!("coordinates of detector D{j}")))
        })
        .collect::<Result<_>>()?;
    let round = |j: usize| quantize(coords[j][axis]);
    let mut layers: Vec<i64> = (0..model.n_detectors()).map(round).collect();
    layers.sort_unstable();
    layers.dedup();
    let first = layers.first().copied().unwrap_or(0);
    let last = layers.last().copied().unwrap_or(0);
    let start_edge = layers.get(BOUNDARY_LAYERS - 1).copied().unwrap_or(last);
    let end_edge = layers
        .len()
        .checked_sub(BOUNDARY_LAYERS)
        .map_or(first, |i| layers[i]);
    Ok(model
        .mechanisms()
        .iter()
        .map(|m| {
            let lo = m.detectors.iter().map(|&j| round(j)).min();
            let hi = m.detectors.iter().map(|&j| round(j)).max();
            let (class, anchor) = match (lo, hi) {
                (Some(lo), _) if lo <= start_edge => (RoundClass::Start, first),
                (_, Some(hi)) if hi >= end_edge => (RoundClass::End, last),
                (Some(lo), _) => (RoundClass::Bulk, lo),
                _ => (RoundClass::Static, 0),
            };
            let mut offsets: Vec<Vec<i64>> = m
                .detectors
                .iter()
                .map(|&j| {
                    coords[j]
                        .iter()
                        .enumerate()
                        .map(|(a, &x)| if a == axis { quantize(x) - anchor } else { quantize(x) })
                        .collect()
                })
                .collect();
            offsets.sort();
            let pos = if class == RoundClass::Bulk { anchor - first } else { 0 };
            (
                MechanismKey {
                    class,
                    offsets,
                    flips_logical: m.flips_logical,
                },
                pos,
            )
        })
        .collect())
}

fn round_span(model: &DetectorErrorModel) -> Result<(usize, i64)> {
    let axis = model
        .round_axis()
        .ok_or_else(|| Error::Missing("round axis in detector coordinates".into()))?;
    let mut rounds: Vec<i64> = (0..model.n_detectors())
        .filter_map(|j| model.detector_coords(j).and_then(|c| c.get(axis)).map(|&x| quantize(x)))
        .collect();
    rounds.sort_unstable();
    rounds.dedup();
    let span = rounds.last().copied().unwrap_or(0) - rounds.first().copied().unwrap_or(0);
    Ok((rounds.len(), span))
}

/// Maps `trained` priors of `source` onto `target`, starting from
/// `target`'s own priors.
pub fn broadcast_params(
    source: &DetectorErrorModel,
    trained: &[f64],
    target: &DetectorErrorModel,
) -> Result<BroadcastReport> {
    if trained.len() != source.n_mechanisms() {
        return Err(Error::LengthMismatch {
            expected: source.n_mechanisms(),
            got: trained.len(),
        });
    }
    let (layers, src_span) = round_span(source)?;
    if layers < 2 * BOUNDARY_LAYERS + 1 {
        return Err(Error::InvalidParameter(format!(
            "source has {layers} detector rounds; at least {} are needed for a bulk round",
            2 * BOUNDARY_LAYERS + 1
        )));
    }
    let (_, dst_span) = round_span(target)?;
    let same_span = src_span == dst_span;

    let src_keys = mechanism_keys(source)?;
    let mut by_key: BTreeMap<&MechanismKey, Vec<f64>> = BTreeMap::new();
    let mut by_pos: HashMap<(&MechanismKey, i64), f64> = HashMap::new();
    for ((key, pos), &t) in src_keys.iter().zip(trained) {
        by_key.entry(key).or_default().push(t);
        by_pos.insert((key, *pos), t);
    }
    let mut collisions = 0;
    let mean: BTreeMap<&MechanismKey, f64> = by_key
        .into_iter()
        .map(|(k, vals)| {
            if vals.iter().any(|v| v.to_bits() != vals[0].to_bits()) {
                collisions += 1;
                (k, vals.iter().sum::<f64>() / vals.len() as f64)
            } else {
                (k, vals[0])
            }
        })
        .collect();
    if collisions > 0 {
        log::warn!("{collisions} source keys have differing trained values; their mean is used");
    }

    let mut theta = target.priors();
    let mut unmatched = Vec::new();
    let mut unmatched_bulk = 0;
    for (i, (key, pos)) in mechanism_keys(target)?.iter().enumerate() {
        let exact = same_span.then(|| by_pos.get(&(key, *pos))).flatten();
        match exact.or_else(|| mean.get(key)) {
            Some(&t) => theta[i] = t,
            None => {
                unmatched.push(i);
                unmatched_bulk += (key.class == RoundClass::Bulk) as usize;
            }
        }
    }
    if !unmatched.is_empty() {
        log::warn!("{} target mechanisms have no source counterpart", unmatched.len());
    }
    Ok(BroadcastReport {
        theta,
        unmatched,
        unmatched_bulk,
        collisions,
    })
}
