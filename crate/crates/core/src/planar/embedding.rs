use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    x
}

/// A graph with a rotation system. Half-edge `2e` runs `u -> v` along edge
/// `e = (u, v)` and `2e + 1` runs back; `rotation[v]` lists the half-edges
/// leaving `v` in counterclockwise order.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub n_vertices: usize,
    pub edges: Vec<(usize, usize)>,
    pub rotation: Vec<Vec<usize>>,
}

#[inline]
pub fn rev(h: usize) -> usize {
    h ^ 1
}

impl Embedding {
    /// Builds the rotation system of a straight-line drawing.
    pub fn from_positions(positions: &[(f64, f64)], edges: Vec<(usize, usize)>) -> Result<Self> {
        let n = positions.len();
        let mut keyed: Vec<Vec<(f64, usize)>> = vec![Vec::new(); n];
        for (e, &(u, v)) in edges.iter().enumerate() {
            if u == v {
                return Err(Error::NonPlanar("self-loop in straight-line drawing".into()));
            }
            let (xu, yu) = positions[u];
            let (xv, yv) = positions[v];
            keyed[u].push(((yv - yu).atan2(xv - xu), 2 * e));
            keyed[v].push(((yu - yv).atan2(xu - xv), 2 * e + 1));
        }
        let rotation = keyed
            .into_iter()
            .map(|mut hs| {
                hs.sort_by(|a, b| a.0.total_cmp(&b.0));
                hs.into_iter().map(|(_, h)| h).collect()
            })
            .collect();
        Ok(Self {
            n_vertices: n,
            edges,
            rotation,
        })
    }

    #[inline]
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    #[inline]
    pub fn tail(&self, h: usize) -> usize {
        let (u, v) = self.edges[h / 2];
        if h % 2 == 0 {
            u
        } else {
            v
        }
    }

    #[inline]
    pub fn head(&self, h: usize) -> usize {
        self.tail(rev(h))
    }

    /// Position of every half-edge within its tail's rotation.
    pub fn positions_in_rotation(&self) -> Vec<usize> {
        let mut pos = vec![usize::MAX; 2 * self.n_edges()];
        for rot in &self.rotation {
            for (k, &h) in rot.iter().enumerate() {
                pos[h] = k;
            }
        }
        pos
    }

    /// Successor of `h` in the boundary walk of the face on its left.
    pub fn face_successor(&self, h: usize, pos: &[usize]) -> usize {
        let back = rev(h);
        let rot = &self.rotation[self.tail(back)];
        let k = pos[back];
        rot[(k + rot.len() - 1) % rot.len()]
    }

    /// Face boundary walks, plus the face on the left of every half-edge.
    pub fn faces(&self) -> (Vec<Vec<usize>>, Vec<usize>) {
        let pos = self.positions_in_rotation();
        let mut face_of = vec![usize::MAX; 2 * self.n_edges()];
        let mut faces = Vec::new();
        for start in 0..2 * self.n_edges() {
            if face_of[start] != usize::MAX {
                continue;
            }
            let id = faces.len();
            let mut walk = Vec::new();
            let mut h = start;
            loop {
                face_of[h] = id;
                walk.push(h);
                h = self.face_successor(h, &pos);
                if h == start {
                    break;
                }
            }
            faces.push(walk);
        }
        (faces, face_of)
    }

    pub fn n_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.n_vertices).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut comps = self.n_vertices;
        for &(u, v) in &self.edges {
            let (a, b) = (find(&mut parent, u), find(&mut parent, v));
            if a != b {
                parent[a] = b;
                comps -= 1;
            }
        }
        comps
    }

    /// Checks that every component has genus zero: faces are traced per
    /// component, so `V - E + F = 2C`.
    pub fn check_planar(&self) -> Result<usize> {
        for (v, rot) in self.rotation.iter().enumerate() {
            for &h in rot {
                if self.tail(h) != v {
                    return Err(Error::NonPlanar(format!(
                        "half-edge {h} listed at vertex {v} but leaves vertex {}",
                        self.tail(h)
                    )));
                }
            }
        }
        let (faces, _) = self.faces();
        let isolated = self.rotation.iter().filter(|r| r.is_empty()).count();
        let v = self.n_vertices as i64;
        let e = self.n_edges() as i64;
        // An isolated vertex has no traced face but counts as one.
        let f = faces.len() as i64 + isolated as i64;
        let c = self.n_components() as i64;
        if v - e + f != 2 * c {
            return Err(Error::NonPlanar(format!(
                "Euler characteristic mismatch: V={v} E={e} F={f} components={c}"
            )));
        }
        Ok(faces.len())
    }
}
