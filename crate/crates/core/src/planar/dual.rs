//! Matching graph embedding and its dual spin graph.
//!
//! The matching graph has one vertex per detector plus one boundary vertex
//! `B`; every mechanism with one or two detectors is an edge. Its rotation
//! system comes from the detector layout: detector-to-detector edges use the
//! direction between `(x, t)` coordinates, non-logical boundary edges leave
//! to the left and logical ones to the right. Around `B` the left edges are
//! ordered by increasing round and the right edges by decreasing round.
//!
//! Dual spins are the faces. The logical action of a cycle is the parity of
//! the spins of the faces bordered by an odd number of logical edges; for a
//! memory experiment these are the two faces touching `B` above and below
//! the layout. They are joined by an extra "pin" edge through the corner at
//! `B`, whose weight selects the logical class.

use std::f64::consts::PI;

use super::embedding::Embedding;
use crate::dem::DetectorErrorModel;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DualEdge {
    pub u: usize,
    pub v: usize,
    pub mechanism: usize,
}

/// Coupling-independent part of the dual spin graph.
#[derive(Clone, Debug)]
pub struct DualStructure {
    pub n_spins: usize,
    /// One edge per mechanism with at least one detector, in mechanism order.
    pub edges: Vec<DualEdge>,
    /// Embedded graph handed to Kac–Ward: non-loop dual edges, then the pin.
    pub embedding: Embedding,
    /// Dual edge index of every embedded edge; `None` for the pin.
    pub embedded_edge: Vec<Option<usize>>,
    /// Faces whose spin product gives the logical class of a cycle.
    pub logical_spin: Option<usize>,
    pub auxiliary_spin: Option<usize>,
    /// Mechanisms that touch no detector but flip the logical.
    pub logical_only: Vec<usize>,
    /// Dual edge of each mechanism, if any.
    pub edge_of_mechanism: Vec<Option<usize>>,
}

impl DualStructure {
    pub fn pin_edge(&self) -> Option<usize> {
        self.embedded_edge.iter().position(|e| e.is_none())
    }
}

fn layout_xy(model: &DetectorErrorModel) -> Result<Vec<(f64, f64)>> {
    let axis = model
        .round_axis()
        .ok_or_else(|| Error::NonPlanar("detector coordinates with a round axis are required".into()))?;
    (0..model.n_detectors())
        .map(|j| {
            let c = model
                .detector_coords(j)
                .ok_or_else(|| Error::NonPlanar(format!("detector D{j} has no coordinates")))?;
            if c.len() <= axis || axis == 0 {
                return Err(Error::NonPlanar(format!(
                    "detector D{j} lacks a spatial coordinate besides the round"
                )));
            }
            Ok((c[0], c[axis]))
        })
        .collect()
}

pub fn build_structure(model: &DetectorErrorModel) -> Result<DualStructure> {
    for (i, m) in model.mechanisms().iter().enumerate() {
        if m.detectors.len() > 2 {
            return Err(Error::NotGraphlike {
                mechanism: i,
                detectors: m.detectors.len(),
            });
        }
    }
    let xy = layout_xy(model)?;
    let m = model.n_detectors();
    let boundary = m;

    let mut edges = Vec::new();
    let mut edge_mech = Vec::new();
    let mut logical_edge = Vec::new();
    let mut logical_only = Vec::new();
    let mut edge_of_mechanism = vec![None; model.n_mechanisms()];
    for (i, mech) in model.mechanisms().iter().enumerate() {
        match mech.detectors[..] {
            [] => logical_only.push(i),
            [a] => edges.push((a, boundary)),
            [a, b] => edges.push((a, b)),
            _ => unreachable!(),
        }
        if !mech.detectors.is_empty() {
            edge_of_mechanism[i] = Some(edge_mech.len());
            edge_mech.push(i);
            logical_edge.push(mech.flips_logical);
        }
    }

    // Rotation system: sort half-edges at each vertex by a geometric key.
    let mut keyed: Vec<Vec<((f64, f64, f64), usize)>> = vec![Vec::new(); m + 1];
    for (e, &(a, b)) in edges.iter().enumerate() {
        if b == boundary {
            let angle = if logical_edge[e] { 0.0 } else { PI };
            keyed[a].push(((angle, 0.0, e as f64), 2 * e));
            let (x, t) = xy[a];
            let key = if logical_edge[e] {
                (1.0, -t, -x)
            } else {
                (0.0, t, x)
            };
            keyed[boundary].push((key, 2 * e + 1));
        } else {
            let (xa, ta) = xy[a];
            let (xb, tb) = xy[b];
            // Parallel edges are mirrored at the two ends.
            keyed[a].push((((tb - ta).atan2(xb - xa), -(e as f64), 0.0), 2 * e));
            keyed[b].push((((ta - tb).atan2(xa - xb), e as f64, 0.0), 2 * e + 1));
        }
    }
    let rotation: Vec<Vec<usize>> = keyed
        .into_iter()
        .map(|mut hs| {
            hs.sort_by(|p, q| {
                p.0 .0
                    .total_cmp(&q.0 .0)
                    .then(p.0 .1.total_cmp(&q.0 .1))
                    .then(p.0 .2.total_cmp(&q.0 .2))
            });
            hs.into_iter().map(|(_, h)| h).collect()
        })
        .collect();
    let primal = Embedding {
        n_vertices: m + 1,
        edges,
        rotation,
    };
    if primal.n_components() != 1 {
        return Err(Error::NonPlanar("matching graph is disconnected".into()));
    }
    primal.check_planar()?;
    let (faces, face_of) = primal.faces();

    let dual_edges: Vec<DualEdge> = (0..primal.n_edges())
        .map(|e| DualEdge {
            u: face_of[2 * e],
            v: face_of[2 * e + 1],
            mechanism: edge_mech[e],
        })
        .collect();

    // Faces bordered by an odd number of logical edges.
    let odd: Vec<usize> = faces
        .iter()
        .enumerate()
        .filter(|(_, walk)| walk.iter().filter(|&&h| logical_edge[h / 2]).count() % 2 == 1)
        .map(|(f, _)| f)
        .collect();
    let pin = match odd.len() {
        0 => None,
        2 => {
            let (a, b) = (odd[0], odd[1]);
            let corner_in = |f: usize, v: usize| faces[f].iter().position(|&h| primal.head(h) == v);
            let mut found = None;
            let mut candidates = vec![boundary];
            candidates.extend(0..m);
            for v in candidates {
                if let (Some(ja), Some(jb)) = (corner_in(a, v), corner_in(b, v)) {
                    found = Some((ja, jb));
                    break;
                }
            }
            let (ja, jb) = found.ok_or_else(|| {
                Error::NonPlanar("logical faces share no corner; the pin edge cannot be embedded".into())
            })?;
            Some((a, b, ja, jb))
        }
        k => {
            return Err(Error::NonPlanar(format!(
                "logical observable borders {k} faces with odd parity; expected 2"
            )))
        }
    };

    // Embedded dual: keep non-loop edges, in dual edge order.
    let mut embedded_edge = Vec::new();
    let mut emb_index = vec![None; primal.n_edges()];
    let mut emb_edges = Vec::new();
    for (k, de) in dual_edges.iter().enumerate() {
        if de.u != de.v {
            emb_index[k] = Some(emb_edges.len());
            emb_edges.push((de.u, de.v));
            embedded_edge.push(Some(k));
        }
    }
    let pin_index = emb_edges.len();
    if let Some((a, b, _, _)) = pin {
        emb_edges.push((a, b));
        embedded_edge.push(None);
    }
    let mut rotation = vec![Vec::new(); faces.len()];
    for (f, walk) in faces.iter().enumerate() {
        for (j, &h) in walk.iter().enumerate() {
            if let Some(k) = emb_index[h / 2] {
                rotation[f].push(2 * k + (h % 2));
            }
            if let Some((a, b, ja, jb)) = pin {
                if f == a && j == ja {
                    rotation[f].push(2 * pin_index);
                }
                if f == b && j == jb {
                    rotation[f].push(2 * pin_index + 1);
                }
            }
        }
    }
    let embedding = Embedding {
        n_vertices: faces.len(),
        edges: emb_edges,
        rotation,
    };
    embedding.check_planar()?;
    Ok(DualStructure {
        n_spins: faces.len(),
        edges: dual_edges,
        embedding,
        embedded_edge,
        logical_spin: pin.map(|p| p.1),
        auxiliary_spin: pin.map(|p| p.0),
        logical_only,
        edge_of_mechanism,
    })
}
