use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;

use super::{DetectorErrorModel, ShotBatch};
use crate::gf2::{BitMatrix, BitVec};

/// Shots per independently seeded chunk. Results do not depend on the
/// number of worker threads.
const CHUNK: usize = 4096;

/// Draws `n_shots` independent shots, each mechanism firing with its prior.
/// Logical labels are always attached.
pub fn sample_shots(model: &DetectorErrorModel, n_shots: usize, seed: u64) -> ShotBatch {
    let m = model.n_detectors();
    let masks: Vec<BitVec> = model
        .mechanisms()
        .iter()
        .map(|mech| BitVec::from_ones(m, mech.detectors.iter().copied()))
        .collect();
    let n_chunks = n_shots.div_ceil(CHUNK);
    let chunks: Vec<(Vec<Vec<u64>>, Vec<bool>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let rows = CHUNK.min(n_shots - c * CHUNK);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let words = crate::gf2::words_for(m);
            let mut synd = vec![vec![0u64; words]; rows];
            let mut logical = vec![false; rows];
            for (mech, mask) in model.mechanisms().iter().zip(&masks) {
                let mut k = 0usize;
                let geo = Geometric::new(mech.prob).expect("probability in (0,1)");
                loop {
                    let skip = geo.sample(&mut rng);
                    k = match usize::try_from(skip).ok().and_then(|s| k.checked_add(s)) {
                        Some(v) => v,
                        None => break,
                    };
                    if k >= rows {
                        break;
                    }
                    for (a, b) in synd[k].iter_mut().zip(mask.words()) {
                        *a ^= b;
                    }
                    logical[k] ^= mech.flips_logical;
                    k += 1;
                }
            }
            (synd, logical)
        })
        .collect();

    let mut mat = BitMatrix::zeros(n_shots, m);
    let mut labels = BitVec::zeros(n_shots);
    let mut r = 0;
    for (synd, logical) in chunks {
        for (row, l) in synd.into_iter().zip(logical) {
            for (wi, &w) in row.iter().enumerate() {
                let mut w = w;
                while w != 0 {
                    let tz = w.trailing_zeros() as usize;
                    mat.set(r, wi * 64 + tz, true);
                    w &= w - 1;
                }
            }
            labels.set(r, l);
            r += 1;
        }
    }
    ShotBatch::new(mat, Some(labels)).expect("label length matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dem::ErrorMechanism;

    #[test]
    fn deterministic_by_seed() {
        let model = DetectorErrorModel::new(
            3,
            vec![
                ErrorMechanism::new(0.1, [0, 1], false),
                ErrorMechanism::new(0.3, [2], true),
            ],
        )
        .unwrap();
        let a = sample_shots(&model, 10_000, 7);
        let b = sample_shots(&model, 10_000, 7);
        let c = sample_shots(&model, 10_000, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn floor_prior_gives_quiet_shots() {
        let model =
            DetectorErrorModel::new(2, vec![ErrorMechanism::new(1e-12, [0, 1], false)]).unwrap();
        let batch = sample_shots(&model, 10_000, 1);
        assert!((0..batch.n_shots()).all(|k| batch.syndrome(k).is_zero()));
    }

    #[test]
    fn single_mechanism_rate() {
        let model = DetectorErrorModel::new(1, vec![ErrorMechanism::new(0.3, [0], false)]).unwrap();
        let n = 1_000_000;
        let batch = sample_shots(&model, n, 3);
        let fired = (0..n).filter(|&k| batch.syndromes().get(k, 0)).count() as f64;
        let sigma = (n as f64 * 0.3 * 0.7).sqrt();
        assert!((fired - 0.3 * n as f64).abs() < 3.0 * sigma, "fired {fired}");
    }
}
