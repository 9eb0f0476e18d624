use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gf2::{BitMatrix, BitVec};

/// On-disk shot encodings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShotFormat {
    /// One line per shot of `'0'`/`'1'` characters.
    Text01,
    /// `ceil(m/8)` bytes per shot, bit `j % 8` of byte `j / 8`, LSB first.
    B8,
}

impl FromStr for ShotFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "01" => Ok(ShotFormat::Text01),
            "b8" => Ok(ShotFormat::B8),
            other => Err(Error::InvalidParameter(format!("unknown shot format '{other}'"))),
        }
    }
}

/// `N × m` detection events with optional logical labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShotBatch {
    syndromes: BitMatrix,
    logical_flips: Option<BitVec>,
}

impl ShotBatch {
    pub fn new(syndromes: BitMatrix, logical_flips: Option<BitVec>) -> Result<Self> {
        if let Some(l) = &logical_flips {
            if l.len() != syndromes.rows() {
                return Err(Error::LengthMismatch {
                    expected: syndromes.rows(),
                    got: l.len(),
                });
            }
        }
        Ok(Self {
            syndromes,
            logical_flips,
        })
    }

    pub fn from_syndromes(width: usize, rows: &[BitVec]) -> Result<Self> {
        let mut mat = BitMatrix::zeros(rows.len(), width);
        for (k, s) in rows.iter().enumerate() {
            if s.len() != width {
                return Err(Error::LengthMismatch {
                    expected: width,
                    got: s.len(),
                });
            }
            for j in s.iter_ones() {
                mat.set(k, j, true);
            }
        }
        Self::new(mat, None)
    }

    #[inline]
    pub fn n_shots(&self) -> usize {
        self.syndromes.rows()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.syndromes.cols()
    }

    pub fn syndromes(&self) -> &BitMatrix {
        &self.syndromes
    }

    pub fn syndrome(&self, k: usize) -> BitVec {
        self.syndromes.row_vec(k)
    }

    pub fn logical_flips(&self) -> Option<&BitVec> {
        self.logical_flips.as_ref()
    }

    pub fn set_logical_flips(&mut self, labels: BitVec) -> Result<()> {
        if labels.len() != self.n_shots() {
            return Err(Error::LengthMismatch {
                expected: self.n_shots(),
                got: labels.len(),
            });
        }
        self.logical_flips = Some(labels);
        Ok(())
    }

    /// Shots `range` as a new batch.
    pub fn slice(&self, range: std::ops::Range<usize>) -> ShotBatch {
        let mut mat = BitMatrix::zeros(range.len(), self.width());
        let mut labels = self.logical_flips.as_ref().map(|_| BitVec::zeros(range.len()));
        for (k, src) in range.enumerate() {
            for j in self.syndrome(src).iter_ones() {
                mat.set(k, j, true);
            }
            if let (Some(l), Some(all)) = (labels.as_mut(), &self.logical_flips) {
                l.set(k, all.get(src));
            }
        }
        ShotBatch {
            syndromes: mat,
            logical_flips: labels,
        }
    }
}

/// Encodes the rows of a bit matrix.
pub fn encode_bits(bits: &BitMatrix, format: ShotFormat) -> Vec<u8> {
    let m = bits.cols();
    match format {
        ShotFormat::Text01 => {
            let mut out = Vec::with_capacity(bits.rows() * (m + 1));
            for r in 0..bits.rows() {
                out.extend((0..m).map(|j| if bits.get(r, j) { b'1' } else { b'0' }));
                out.push(b'\n');
            }
            out
        }
        ShotFormat::B8 => {
            let stride = m.div_ceil(8);
            let mut out = vec![0u8; bits.rows() * stride];
            for r in 0..bits.rows() {
                for (w, &word) in bits.row(r).iter().enumerate() {
                    for b in 0..8 {
                        let idx = w * 8 + b;
                        if idx < stride {
                            out[r * stride + idx] = (word >> (8 * b)) as u8;
                        }
                    }
                }
            }
            out
        }
    }
}

/// Decodes shot rows of width `m`.
pub fn decode_bits(data: &[u8], m: usize, format: ShotFormat) -> Result<BitMatrix> {
    match format {
        ShotFormat::Text01 => {
            let text = std::str::from_utf8(data)
                .map_err(|_| Error::ShotFormat("shot file is not valid text".into()))?;
            let lines: Vec<&str> = text.lines().collect();
            if !data.is_empty() && !text.ends_with('\n') {
                return Err(Error::ShotFormat("truncated final line".into()));
            }
            let mut mat = BitMatrix::zeros(lines.len(), m);
            for (r, line) in lines.iter().enumerate() {
                let line = line.strip_suffix('\r').unwrap_or(line);
                if line.len() != m {
                    return Err(Error::ShotFormat(format!(
                        "shot {r}: width {} but the model has {m} detectors",
                        line.len()
                    )));
                }
                for (j, c) in line.bytes().enumerate() {
                    match c {
                        b'0' => {}
                        b'1' => mat.set(r, j, true),
                        _ => {
                            return Err(Error::ShotFormat(format!(
                                "shot {r}: unexpected character '{}'",
                                c as char
                            )))
                        }
                    }
                }
            }
            Ok(mat)
        }
        ShotFormat::B8 => {
            let stride = m.div_ceil(8);
            if stride == 0 {
                if data.is_empty() {
                    return Ok(BitMatrix::zeros(0, 0));
                }
                return Err(Error::ShotFormat("data present for zero-width shots".into()));
            }
            if data.len() % stride != 0 {
                return Err(Error::ShotFormat(format!(
                    "truncated: {} bytes is not a multiple of {stride}",
                    data.len()
                )));
            }
            let n = data.len() / stride;
            let mut mat = BitMatrix::zeros(n, m);
            for r in 0..n {
                let row = &data[r * stride..(r + 1) * stride];
                for (b, &byte) in row.iter().enumerate() {
                    for bit in 0..8 {
                        if (byte >> bit) & 1 == 1 {
                            let j = b * 8 + bit;
                            if j >= m {
                                return Err(Error::ShotFormat(format!(
                                    "shot {r}: padding bit {j} set beyond width {m}"
                                )));
                            }
                            mat.set(r, j, true);
                        }
                    }
                }
            }
            Ok(mat)
        }
    }
}

/// Reads syndromes of width `m` and, if given, a one-bit-per-shot label file.
pub fn read_shots(
    path: &Path,
    format: ShotFormat,
    m: usize,
    labels: Option<&Path>,
) -> Result<ShotBatch> {
    let syndromes = decode_bits(&fs::read(path)?, m, format)?;
    let logical = match labels {
        Some(p) => {
            let l = decode_bits(&fs::read(p)?, 1, format)?;
            let mut v = BitVec::zeros(l.rows());
            for r in 0..l.rows() {
                v.set(r, l.get(r, 0));
            }
            Some(v)
        }
        None => None,
    };
    ShotBatch::new(syndromes, logical)
}

/// Writes syndromes and, when both a path and labels exist, the labels.
pub fn write_shots(
    batch: &ShotBatch,
    path: &Path,
    format: ShotFormat,
    labels: Option<&Path>,
) -> Result<()> {
    fs::File::create(path)?.write_all(&encode_bits(batch.syndromes(), format))?;
    if let (Some(p), Some(l)) = (labels, batch.logical_flips()) {
        write_bits(l, p, format)?;
    }
    Ok(())
}

/// Writes a bit per shot (e.g. decoder predictions).
pub fn write_bits(bits: &BitVec, path: &Path, format: ShotFormat) -> Result<()> {
    let mut mat = BitMatrix::zeros(bits.len(), 1);
    for k in bits.iter_ones() {
        mat.set(k, 0, true);
    }
    fs::File::create(path)?.write_all(&encode_bits(&mat, format))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn text_single_shot() {
        let mat = decode_bits(b"0101\n", 4, ShotFormat::Text01).unwrap();
        assert_eq!(mat.rows(), 1);
        assert_eq!(mat.row_vec(0).iter_ones().collect::<Vec<_>>(), vec![1, 3]);
    }

    #[test]
    fn b8_width_rule() {
        let mut mat = BitMatrix::zeros(1, 12);
        mat.set(0, 0, true);
        mat.set(0, 9, true);
        let bytes = encode_bits(&mat, ShotFormat::B8);
        assert_eq!(bytes, vec![0b0000_0001, 0b0000_0010]);
        assert_eq!(decode_bits(&bytes, 12, ShotFormat::B8).unwrap(), mat);
    }

    #[test]
    fn malformed_input() {
        assert!(decode_bits(b"010\n", 4, ShotFormat::Text01).is_err());
        assert!(decode_bits(b"0101", 4, ShotFormat::Text01).is_err());
        assert!(decode_bits(b"01a1\n", 4, ShotFormat::Text01).is_err());
        assert!(decode_bits(&[0, 0, 0], 12, ShotFormat::B8).is_err());
        assert!(decode_bits(&[0, 0x10], 12, ShotFormat::B8).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(m in 1usize..140, rows in proptest::collection::vec(any::<u64>(), 0..12), b8 in any::<bool>()) {
            let format = if b8 { ShotFormat::B8 } else { ShotFormat::Text01 };
            let mut mat = BitMatrix::zeros(rows.len(), m);
            for (r, &seed) in rows.iter().enumerate() {
                for j in 0..m {
                    if (seed.rotate_left(j as u32 % 64) ^ (j as u64 * 0x9e37)) & 1 == 1 {
                        mat.set(r, j, true);
                    }
                }
            }
            let back = decode_bits(&encode_bits(&mat, format), m, format).unwrap();
            prop_assert_eq!(back, mat);
        }
    }
}
