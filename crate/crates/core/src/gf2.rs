//! Bit-packed vectors and matrices over GF(2).
//!
//! Rows are stored as `u64` words, least-significant bit first, so that row
//! operations are word-level XORs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[inline]
pub(crate) fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

/// Fixed-length bit vector.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BitVec {
    len: usize,
    words: Vec<u64>,
}

impl BitVec {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.set(i, true);
            }
        }
        v
    }

    pub fn from_ones(len: usize, ones: impl IntoIterator<Item = usize>) -> Self {
        let mut v = Self::zeros(len);
        for i in ones {
            v.flip(i);
        }
        v
    }

    pub(crate) fn from_words(len: usize, words: Vec<u64>) -> Self {
        debug_assert_eq!(words.len(), words_for(len));
        Self { len, words }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / 64] ^= 1u64 << (i % 64);
    }

    pub fn xor_assign(&mut self, other: &BitVec) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    /// Parity of the bitwise AND with `other`.
    pub fn dot(&self, other: &BitVec) -> bool {
        debug_assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .fold(0u32, |acc, (a, b)| acc ^ (a & b).count_ones())
            & 1
            == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let tz = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(wi * 64 + tz)
                }
            })
        })
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }
}

/// Dense bit matrix with packed rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    data: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let stride = words_for(cols);
        Self {
            rows,
            cols,
            stride,
            data: vec![0; rows * stride],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[u64] {
        &self.data[r * self.stride..(r + 1) * self.stride]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        (self.data[r * self.stride + c / 64] >> (c % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        let mask = 1u64 << (c % 64);
        let w = &mut self.data[r * self.stride + c / 64];
        if value {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, r: usize, c: usize) {
        self.data[r * self.stride + c / 64] ^= 1u64 << (c % 64);
    }

    /// `row[dst] ^= row[src]`.
    pub fn xor_row_into(&mut self, src: usize, dst: usize) {
        if src == dst {
            return;
        }
        let s = self.stride;
        let (a, b) = if src < dst {
            let (lo, hi) = self.data.split_at_mut(dst * s);
            (&lo[src * s..src * s + s], &mut hi[..s])
        } else {
            let (lo, hi) = self.data.split_at_mut(src * s);
            (&hi[..s], &mut lo[dst * s..dst * s + s])
        };
        for (d, x) in b.iter_mut().zip(a) {
            *d ^= x;
        }
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let s = self.stride;
        for k in 0..s {
            self.data.swap(a * s + k, b * s + k);
        }
    }

    pub fn row_vec(&self, r: usize) -> BitVec {
        BitVec::from_words(self.cols, self.row(r).to_vec())
    }

    /// `self · x` for a column vector `x` of length `cols`.
    pub fn mul_vec(&self, x: &BitVec) -> BitVec {
        debug_assert_eq!(x.len(), self.cols);
        let mut out = BitVec::zeros(self.rows);
        for r in 0..self.rows {
            let p = self
                .row(r)
                .iter()
                .zip(x.words())
                .fold(0u32, |acc, (a, b)| acc ^ (a & b).count_ones());
            if p & 1 == 1 {
                out.set(r, true);
            }
        }
        out
    }
}

/// Factorization of an `m × n` incidence matrix for repeated preimage solves.
///
/// Stores an invertible row transform `T` with `T·H` in reduced row echelon
/// form; solving for a syndrome costs one `m × m` bit product.
#[derive(Clone, Debug)]
pub struct Gf2Solver {
    n_cols: usize,
    rank: usize,
    pivot_cols: Vec<usize>,
    transform: BitMatrix,
}

impl Gf2Solver {
    pub fn new(h: &BitMatrix) -> Self {
        let m = h.rows();
        let n = h.cols();
        // Augmented [H | I].
        let mut aug = BitMatrix::zeros(m, n + m);
        for r in 0..m {
            for c in 0..n {
                if h.get(r, c) {
                    aug.set(r, c, true);
                }
            }
            aug.set(r, n + r, true);
        }
        let mut pivot_cols = Vec::new();
        let mut rank = 0;
        for c in 0..n {
            if rank == m {
                break;
            }
            let Some(p) = (rank..m).find(|&r| aug.get(r, c)) else {
                continue;
            };
            aug.swap_rows(p, rank);
            for r in 0..m {
                if r != rank && aug.get(r, c) {
                    aug.xor_row_into(rank, r);
                }
            }
            pivot_cols.push(c);
            rank += 1;
        }
        let mut transform = BitMatrix::zeros(m, m);
        for r in 0..m {
            for c in 0..m {
                if aug.get(r, n + c) {
                    transform.set(r, c, true);
                }
            }
        }
        Self {
            n_cols: n,
            rank,
            pivot_cols,
            transform,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Returns some `e` with `H·e = s`; the zero syndrome maps to the zero vector.
    pub fn solve(&self, s: &BitVec) -> Result<BitVec> {
        let m = self.transform.rows();
        if s.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                got: s.len(),
            });
        }
        let reduced = self.transform.mul_vec(s);
        for r in self.rank..m {
            if reduced.get(r) {
                let row = self.transform.row_vec(r);
                let detector = row
                    .iter_ones()
                    .filter(|&j| s.get(j))
                    .last()
                    .or_else(|| row.iter_ones().last())
                    .unwrap_or(r);
                return Err(Error::InconsistentSyndrome { detector });
            }
        }
        let mut e = BitVec::zeros(self.n_cols);
        for (k, &c) in self.pivot_cols.iter().enumerate() {
            if reduced.get(k) {
                e.set(c, true);
            }
        }
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitvec_basic_ops() {
        let mut v = BitVec::zeros(130);
        v.set(0, true);
        v.set(64, true);
        v.set(129, true);
        assert_eq!(v.iter_ones().collect::<Vec<_>>(), vec![0, 64, 129]);
        assert_eq!(v.count_ones(), 3);
        v.flip(64);
        assert!(!v.get(64));
        let w = BitVec::from_ones(130, [0, 5]);
        assert!(v.dot(&w));
        v.xor_assign(&w);
        assert_eq!(v.iter_ones().collect::<Vec<_>>(), vec![5, 129]);
    }

    #[test]
    fn solver_inverts_syndromes() {
        // Chain 0-1-2 with a boundary edge on 0.
        let mut h = BitMatrix::zeros(3, 3);
        h.set(0, 0, true);
        h.set(0, 1, true);
        h.set(1, 1, true);
        h.set(1, 2, true);
        h.set(2, 2, true);
        let solver = Gf2Solver::new(&h);
        assert_eq!(solver.rank(), 3);
        for bits in 0..8u32 {
            let s = BitVec::from_bools(&[(bits & 1) != 0, (bits & 2) != 0, (bits & 4) != 0]);
            let e = solver.solve(&s).unwrap();
            assert_eq!(h.mul_vec(&e), s);
        }
        assert!(solver.solve(&BitVec::zeros(3)).unwrap().is_zero());
    }

    #[test]
    fn solver_reports_unreachable_detector() {
        // Detector 2 is touched by nothing.
        let mut h = BitMatrix::zeros(3, 2);
        h.set(0, 0, true);
        h.set(1, 1, true);
        let solver = Gf2Solver::new(&h);
        let err = solver.solve(&BitVec::from_ones(3, [2])).unwrap_err();
        assert!(matches!(err, Error::InconsistentSyndrome { detector: 2 }));
    }
}
