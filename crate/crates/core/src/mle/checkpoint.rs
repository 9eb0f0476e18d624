//! Binary training checkpoints.
//!
//! Layout (little endian): magic `DMLECKPT`, `u32` version, `u64` n,
//! `u64` epochs done, `u8` optimizer (0 sgd, 1 adam), `u64` optimizer step,
//! `n` f64 each of phi and theta, the Adam moments (`2n` f64, Adam only),
//! then `u64` record count and per record `u64` epoch, `f64` nll, `u8` flag
//! and `f64` relative error, `f64` seconds.

use std::path::Path;

use super::optim::{OptimizerKind, OptimizerState};
use super::EpochRecord;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DMLECKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub epochs_done: usize,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub optimizer: OptimizerState,
    pub records: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.phi.len();
        let mut out = Vec::with_capacity(64 + 32 * n + 33 * self.records.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(self.epochs_done as u64).to_le_bytes());
        out.push(match self.optimizer.kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => 1,
        });
        out.extend_from_slice(&self.optimizer.step.to_le_bytes());
        let floats = self
            .phi
            .iter()
            .chain(&self.theta)
            .chain(&self.optimizer.m)
            .chain(&self.optimizer.v);
        for x in floats {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.epoch as u64).to_le_bytes());
            out.extend_from_slice(&r.nll.to_le_bytes());
            out.push(r.rel_err.is_some() as u8);
            out.extend_from_slice(&r.rel_err.unwrap_or(0.0).to_le_bytes());
            out.extend_from_slice(&r.seconds.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut rd = Reader { data, pos: 0 };
        if rd.take(8)? != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(rd.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let n = rd.u64()? as usize;
        let epochs_done = rd.u64()? as usize;
        let kind = match rd.take(1)?[0] {
            0 => OptimizerKind::Sgd,
            1 => OptimizerKind::Adam,
            k => return Err(bad(&format!("unknown optimizer tag {k}"))),
        };
        let step = rd.u64()?;
        if n > data.len() / 8 {
            return Err(bad("truncated checkpoint"));
        }
        let phi = rd.floats(n)?;
        let theta = rd.floats(n)?;
        let moments = if kind == OptimizerKind::Adam { n } else { 0 };
        let m = rd.floats(moments)?;
        let v = rd.floats(moments)?;
        let n_records = rd.u64()? as usize;
        if n_records > data.len() / 33 {
            return Err(bad("truncated checkpoint"));
        }
        let mut records = Vec::with_capacity(n_records);
        for _ in 0..n_records {
            let epoch = rd.u64()? as usize;
            let nll = rd.f64()?;
            let has = rd.take(1)?[0] != 0;
            let rel = rd.f64()?;
            let seconds = rd.f64()?;
            records.push(EpochRecord {
                epoch,
                nll,
                rel_err: has.then_some(rel),
                seconds,
            });
        }
        if rd.pos != data.len() {
            return Err(bad("trailing bytes in checkpoint"));
        }
        Ok(Self {
            epochs_done,
            phi,
            theta,
            optimizer: OptimizerState { kind, step, m, v },
            records,
        })
    }

    /// Writes atomically through a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn bad(msg: &str) -> Error {
    Error::InvalidParameter(format!("checkpoint: {msg}"))
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| bad("truncated checkpoint"))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            epochs_done: 3,
            phi: vec![-1.5, 0.25],
            theta: vec![0.18, 0.56],
            optimizer: OptimizerState {
                kind: OptimizerKind::Adam,
                step: 9,
                m: vec![0.1, -0.2],
                v: vec![0.01, 0.04],
            },
            records: vec![
                EpochRecord {
                    epoch: 0,
                    nll: 2.5,
                    rel_err: Some(0.3),
                    seconds: 0.0,
                },
                EpochRecord {
                    epoch: 1,
                    nll: 2.25,
                    rel_err: None,
                    seconds: 1.5,
                },
            ],
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
        let mut sgd = sample();
        sgd.optimizer = OptimizerState::new(OptimizerKind::Sgd, 2);
        assert_eq!(Checkpoint::from_bytes(&sgd.to_bytes()).unwrap(), sgd);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong).is_err());
        let mut version = bytes;
        version[8] = 2;
        assert!(Checkpoint::from_bytes(&version).is_err());
    }
}
