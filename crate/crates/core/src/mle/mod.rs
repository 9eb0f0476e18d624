//! Maximum-likelihood estimation of mechanism priors by gradient descent on
//! the negative log-likelihood of observed syndromes.

mod broadcast;
mod checkpoint;
mod optim;

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use broadcast::{broadcast_params, mechanism_keys, BroadcastReport, MechanismKey, RoundClass};
pub use checkpoint::Checkpoint;
pub use optim::{OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::backend::{Backend, LikelihoodEngine, TnSettings};
use crate::dem::{clamp_prob, DetectorErrorModel, ShotBatch, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::gf2::{BitMatrix, BitVec};

pub fn sigmoid(phi: f64) -> f64 {
    1.0 / (1.0 + (-phi).exp())
}

pub fn logit(theta: f64) -> f64 {
    (theta / (1.0 - theta)).ln()
}

/// Trainable priors in logit form. `theta` is cached and only recomputed
/// for entries whose `phi` changed, so untouched priors keep their exact bits.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorParams {
    phi: Vec<f64>,
    theta: Vec<f64>,
    pub backend: Backend,
}

impl PriorParams {
    pub fn from_theta(theta: &[f64], backend: Backend) -> Self {
        let theta: Vec<f64> = theta.iter().map(|&t| clamp_prob(t)).collect();
        Self {
            phi: theta.iter().map(|&t| logit(t)).collect(),
            theta,
            backend,
        }
    }

    pub fn from_phi(phi: Vec<f64>, backend: Backend) -> Self {
        let phi: Vec<f64> = phi.into_iter().map(clamp_phi).collect();
        Self {
            theta: phi.iter().map(|&p| sigmoid(p)).collect(),
            phi,
            backend,
        }
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    fn set_phi(&mut self, new: &[f64]) {
        for (i, &p) in new.iter().enumerate() {
            let p = clamp_phi(p);
            if p.to_bits() != self.phi[i].to_bits() {
                self.phi[i] = p;
                self.theta[i] = sigmoid(p);
            }
        }
    }
}

fn clamp_phi(p: f64) -> f64 {
    let hi = logit(1.0 - PROB_FLOOR);
    p.clamp(-hi, hi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Use only the first `n_shots` shots; all when absent.
    pub n_shots: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Stop when the loss changed by less than `tolerance` (relative) over
    /// the last `window` epochs.
    pub window: usize,
    pub tolerance: f64,
    pub tn: TnSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_shots: None,
            epochs: 500,
            batch_size: 10_000,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            window: 20,
            tolerance: 1e-4,
            tn: TnSettings::default(),
        }
    }
}

impl TrainConfig {
    fn validate(&self, available: usize) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning rate must be finite and non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be positive".into()));
        }
        if let Some(n) = self.n_shots {
            if n > available {
                return Err(Error::TooLarge {
                    what: "n_shots",
                    value: n,
                    limit: available,
                });
            }
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidParameter("tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub nll: f64,
    /// Mean relative error against reference priors, when given.
    pub rel_err: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
    pub converged: bool,
}

impl TrainTrace {
    /// CSV with columns `epoch,nll,rel_err` and `seconds` when `timing`.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from(if timing { "epoch,nll,rel_err,seconds\n" } else { "epoch,nll,rel_err\n" });
        for r in &self.records {
            let rel = r.rel_err.map(|x| format!("{x:.17e}")).unwrap_or_default();
            out.push_str(&format!("{},{:.17e},{}", r.epoch, r.nll, rel));
            if timing {
                out.push_str(&format!(",{:.6}", r.seconds));
            }
            out.push('\n');
        }
        out
    }
}

/// Extra controls for [`train_with`].
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Reference priors for the `rel_err` column.
    pub reference: Option<Vec<f64>>,
    /// Written after every epoch when set.
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
    /// Stop after this many epochs in this call (the run can be resumed).
    pub max_epochs_this_call: Option<usize>,
    /// Record wall-clock seconds per epoch (otherwise 0, which keeps traces
    /// and checkpoints reproducible).
    pub timing: bool,
}

/// Mean of `-log p` over the batch.
pub fn nll(log_probs: &[f64]) -> Result<f64> {
    if log_probs.is_empty() {
        return Err(Error::InvalidParameter("NLL of an empty batch".into()));
    }
    Ok(-log_probs.iter().sum::<f64>() / log_probs.len() as f64)
}

/// `mean_i |theta_i - reference_i| / reference_i`.
pub fn mean_relative_error(theta: &[f64], reference: &[f64]) -> f64 {
    let sum: f64 = theta.iter().zip(reference).map(|(t, r)| (t - r).abs() / r).sum();
    sum / theta.len().max(1) as f64
}

/// Multiplies each prior by a log-uniform factor in `[1/scale, scale]`.
pub fn perturb_priors(theta: &[f64], scale: f64, seed: u64) -> Result<Vec<f64>> {
    if !(scale >= 1.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("perturbation scale {scale} must be >= 1")));
    }
    if scale == 1.0 {
        return Ok(theta.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = scale.ln();
    Ok(theta
        .iter()
        .map(|&t| clamp_prob(t * rng.random_range(-l..=l).exp()))
        .collect())
}

/// Merges identical syndromes among `shots`, summing their weights. Order
/// of first occurrence is kept.
pub fn dedupe(batch: &ShotBatch, shots: &[usize], weights: Option<&[f64]>) -> (ShotBatch, Vec<f64>) {
    let s = batch.syndromes();
    let mut first: HashMap<&[u64], usize> = HashMap::with_capacity(shots.len());
    let mut rows: Vec<usize> = Vec::new();
    let mut w: Vec<f64> = Vec::new();
    for &k in shots {
        let wk = weights.map_or(1.0, |ws| ws[k]);
        match first.get(s.row(k)) {
            Some(&u) => w[u] += wk,
            None => {
                first.insert(s.row(k), rows.len());
                rows.push(k);
                w.push(wk);
            }
        }
    }
    let mut mat = BitMatrix::zeros(rows.len(), batch.width());
    for (u, &k) in rows.iter().enumerate() {
        for j in batch.syndrome(k).iter_ones() {
            mat.set(u, j, true);
        }
    }
    (ShotBatch::new(mat, None).expect("no labels"), w)
}

/// Minibatch training on observed shots.
pub fn train(
    model: &DetectorErrorModel,
    batch: &ShotBatch,
    init: PriorParams,
    cfg: &TrainConfig,
) -> Result<(PriorParams, TrainTrace)> {
    train_with(model, batch, None, init, cfg, TrainOptions::default())
}

/// Training with optional per-shot weights (the loss is the weighted mean
/// of `-log p`), reference priors, checkpointing and resumption.
pub fn train_with(
    model: &DetectorErrorModel,
    batch: &ShotBatch,
    weights: Option<&[f64]>,
    init: PriorParams,
    cfg: &TrainConfig,
    opts: TrainOptions,
) -> Result<(PriorParams, TrainTrace)> {
    let engine = LikelihoodEngine::new(model, init.backend, &cfg.tn)?;
    train_engine(&engine, batch, weights, init, cfg, opts)
}

fn train_engine(
    engine: &LikelihoodEngine,
    batch: &ShotBatch,
    weights: Option<&[f64]>,
    init: PriorParams,
    cfg: &TrainConfig,
    opts: TrainOptions,
) -> Result<(PriorParams, TrainTrace)> {
    cfg.validate(batch.n_shots())?;
    if batch.n_shots() == 0 {
        return Err(Error::InvalidParameter("no shots to train on".into()));
    }
    if let Some(w) = weights {
        if w.len() != batch.n_shots() {
            return Err(Error::LengthMismatch {
                expected: batch.n_shots(),
                got: w.len(),
            });
        }
    }
    if let Some(r) = &opts.reference {
        if r.len() != init.len() {
            return Err(Error::LengthMismatch {
                expected: init.len(),
                got: r.len(),
            });
        }
    }
    let n_used = cfg.n_shots.unwrap_or(batch.n_shots());
    let mut params = init;
    let mut opt = OptimizerState::new(cfg.optimizer, params.len());
    let mut trace = TrainTrace::default();
    if let Some(ck) = opts.resume {
        if ck.phi.len() != params.len() || ck.theta.len() != params.len() {
            return Err(Error::LengthMismatch {
                expected: params.len(),
                got: ck.phi.len(),
            });
        }
        if ck.optimizer.kind != cfg.optimizer {
            return Err(Error::InvalidParameter("checkpoint optimizer differs from config".into()));
        }
        params.phi = ck.phi;
        params.theta = ck.theta;
        opt = ck.optimizer;
        trace.records = ck.records;
    }
    let start_epoch = trace.records.len();
    let stop_at = opts
        .max_epochs_this_call
        .map_or(cfg.epochs, |k| cfg.epochs.min(start_epoch + k));
    if converged(&trace.records, cfg) {
        trace.converged = true;
        return Ok((params, trace));
    }
    let mut order: Vec<usize> = (0..n_used).collect();
    for epoch in start_epoch..stop_at {
        let t0 = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        if cfg.batch_size < n_used {
            order.sort_unstable();
            order.shuffle(&mut rng);
        }
        let mut loss = 0.0;
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (sub, w) = dedupe(batch, chunk, weights);
            let fail = |e| Error::Training {
                epoch,
                source: Box::new(e),
            };
            let (lps, g) = engine.log_probs_and_grad(params.theta(), &sub, &w).map_err(fail)?;
            let wsum: f64 = w.iter().sum();
            let l: f64 = -lps.iter().zip(&w).map(|(lp, wk)| wk * lp).sum::<f64>();
            if !l.is_finite() || g.iter().any(|x| !x.is_finite()) {
                return Err(fail(Error::Numerical(
                    "non-finite loss or gradient (a syndrome has zero probability under the model?)".into(),
                )));
            }
            loss += l;
            total += wsum;
            if wsum > 0.0 {
                let grad_phi: Vec<f64> = g
                    .iter()
                    .zip(params.theta())
                    .map(|(gi, &t)| -gi * t * (1.0 - t) / wsum)
                    .collect();
                let mut phi = params.phi.clone();
                opt.step(&mut phi, &grad_phi, cfg.learning_rate);
                params.set_phi(&phi);
            }
        }
        let rel_err = opts.reference.as_ref().map(|r| mean_relative_error(params.theta(), r));
        let record = EpochRecord {
            epoch,
            nll: loss / total,
            rel_err,
            seconds: if opts.timing { t0.elapsed().as_secs_f64() } else { 0.0 },
        };
        log::info!(
            "epoch {epoch}: nll {:.8}{}",
            record.nll,
            rel_err.map(|e| format!(", rel err {e:.5}")).unwrap_or_default()
        );
        trace.records.push(record);
        if let Some(path) = &opts.checkpoint {
            Checkpoint {
                epochs_done: trace.records.len(),
                phi: params.phi.clone(),
                theta: params.theta.clone(),
                optimizer: opt.clone(),
                records: trace.records.clone(),
            }
            .save(path)?;
        }
        if converged(&trace.records, cfg) {
            trace.converged = true;
            break;
        }
    }
    Ok((params, trace))
}

fn converged(records: &[EpochRecord], cfg: &TrainConfig) -> bool {
    let n = records.len();
    if cfg.window == 0 || n <= cfg.window {
        return false;
    }
    let old = records[n - 1 - cfg.window].nll;
    let new = records[n - 1].nll;
    (old - new).abs() <= cfg.tolerance * old.abs().max(f64::MIN_POSITIVE)
}

/// Every syndrome with nonzero probability under `model`, weighted by its
/// probability under `theta_true`.
pub fn exact_dataset(
    model: &DetectorErrorModel,
    theta_true: &[f64],
    engine: &LikelihoodEngine,
) -> Result<(ShotBatch, Vec<f64>)> {
    let m = model.n_detectors();
    if m > 20 {
        return Err(Error::TooLarge {
            what: "detectors for exact NLL",
            value: m,
            limit: 20,
        });
    }
    let solver = model.pure_error_solver();
    let rows: Vec<BitVec> = (0..1usize << m)
        .map(|x| BitVec::from_ones(m, (0..m).filter(|j| (x >> j) & 1 == 1)))
        .filter(|s| solver.solve(s).is_ok())
        .collect();
    let batch = ShotBatch::from_syndromes(m, &rows)?;
    let w = engine.log_probs(theta_true, &batch)?.into_iter().map(f64::exp).collect();
    Ok((batch, w))
}

/// Full-batch training on the exact expected NLL under `theta_true`.
pub fn exact_nll_train(
    model: &DetectorErrorModel,
    theta_true: &[f64],
    init: PriorParams,
    cfg: &TrainConfig,
    mut opts: TrainOptions,
) -> Result<(PriorParams, TrainTrace)> {
    let engine = LikelihoodEngine::new(model, init.backend, &cfg.tn)?;
    let (batch, w) = exact_dataset(model, theta_true, &engine)?;
    let cfg = TrainConfig {
        n_shots: None,
        batch_size: batch.n_shots(),
        ..cfg.clone()
    };
    opts.reference.get_or_insert_with(|| theta_true.to_vec());
    train_engine(&engine, &batch, Some(&w), init, &cfg, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::{generate, CodeFamily};
    use crate::dem::sample_shots;
    use crate::oracle;

    fn rep(d: usize, r: usize, p: f64) -> DetectorErrorModel {
        generate(CodeFamily::Repetition, d, r, p).unwrap()
    }

    #[test]
    fn nll_examples() {
        assert_eq!(nll(&[0.0]).unwrap(), 0.0);
        assert!((nll(&[-1.0, -1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(nll(&[]).is_err());
        assert_eq!(nll(&[f64::NEG_INFINITY, 0.0]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn logit_parameterization_round_trips() {
        for t in [1e-9, 1e-4, 0.3, 0.5, 0.9] {
            assert!((sigmoid(logit(t)) - t).abs() < 1e-15 * t.max(1e-3) * 1e3);
        }
        let p = PriorParams::from_phi(vec![-1e6, 0.0, 1e6], Backend::Planar);
        assert!(p.theta().iter().all(|&t| t > 0.0 && t < 1.0));
    }

    #[test]
    fn perturbation_contract() {
        let th = vec![0.01, 0.2, 0.7, 1e-9];
        assert_eq!(perturb_priors(&th, 1.0, 3).unwrap(), th);
        assert!(perturb_priors(&th, 0.5, 3).is_err());
        for seed in 0..20 {
            let p = perturb_priors(&th, 1e6, seed).unwrap();
            assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
        }
        assert_eq!(perturb_priors(&th, 2.0, 8).unwrap(), perturb_priors(&th, 2.0, 8).unwrap());
    }

    #[test]
    fn scale_two_perturbation_error_matches_expectation() {
        // For log-uniform u on [1/s, s], E|u - 1| = (s + 1/s - 2) / (2 ln s).
        let k = 200_000;
        let expected = (2.0 + 0.5 - 2.0) / (2.0 * 2f64.ln());
        let th = vec![0.01; k];
        let p = perturb_priors(&th, 2.0, 1).unwrap();
        let got = mean_relative_error(&p, &th);
        assert!((got - expected).abs() < 3e-3, "{got} vs {expected}");
        assert!((expected - 0.35).abs() < 0.02);
    }

    #[test]
    fn dedupe_merges_weights() {
        let model = rep(3, 1, 0.2);
        let batch = sample_shots(&model, 500, 2);
        let all: Vec<usize> = (0..500).collect();
        let (u, w) = dedupe(&batch, &all, None);
        assert!(u.n_shots() <= 1 << model.n_detectors());
        assert_eq!(w.iter().sum::<f64>(), 500.0);
        for k in 0..u.n_shots() {
            let count = (0..500).filter(|&j| batch.syndrome(j) == u.syndrome(k)).count();
            assert_eq!(w[k], count as f64);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_priors_and_loss() {
        let model = rep(3, 2, 0.02);
        let batch = sample_shots(&model, 400, 1);
        let init = PriorParams::from_theta(&model.priors(), Backend::Planar);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 100,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let (out, trace) = train(&model, &batch, init.clone(), &cfg).unwrap();
        assert_eq!(out, init);
        assert_eq!(trace.records.len(), 4);
        assert!(trace.records.windows(2).all(|w| (w[0].nll - w[1].nll).abs() < 1e-12 * w[0].nll));
    }

    #[test]
    fn exact_loss_at_truth_is_entropy_and_stationary() {
        let model = rep(3, 1, 0.05);
        let th = model.priors();
        for backend in [Backend::Planar, Backend::TensorNetwork] {
            let engine = LikelihoodEngine::new(&model, backend, &TnSettings::default()).unwrap();
            let (batch, w) = exact_dataset(&model, &th, &engine).unwrap();
            let (lps, g) = engine.log_probs_and_grad(&th, &batch, &w).unwrap();
            let loss: f64 = -lps.iter().zip(&w).map(|(l, w)| w * l).sum::<f64>();
            let joint = oracle::joint_distribution(&model, &th).unwrap();
            let entropy: f64 = joint
                .iter()
                .map(|p| p[0] + p[1])
                .filter(|&p| p > 0.0)
                .map(|p| -p * p.ln())
                .sum();
            assert!((loss - entropy).abs() < 1e-10, "{backend}");
            assert!(g.iter().all(|x| x.abs() < 1e-9), "{backend}: {g:?}");
        }
    }

    #[test]
    fn exact_training_descends_with_small_steps() {
        let model = rep(3, 1, 0.05);
        let th = model.priors();
        let init = PriorParams::from_theta(&perturb_priors(&th, 2.0, 4).unwrap(), Backend::Planar);
        let cfg = TrainConfig {
            epochs: 30,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Sgd,
            window: 0,
            ..TrainConfig::default()
        };
        let (_, trace) = exact_nll_train(&model, &th, init, &cfg, TrainOptions::default()).unwrap();
        for w in trace.records.windows(2) {
            assert!(w[1].nll <= w[0].nll + 1e-15);
        }
    }

    #[test]
    fn resumed_training_reproduces_uninterrupted_trace() {
        let dir = std::env::temp_dir().join(format!("dmle-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.ckpt");
        let model = rep(3, 2, 0.03);
        let batch = sample_shots(&model, 600, 9);
        let init = PriorParams::from_theta(&perturb_priors(&model.priors(), 2.0, 1).unwrap(), Backend::Planar);
        let cfg = TrainConfig {
            epochs: 6,
            batch_size: 128,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let (full, full_trace) = train(&model, &batch, init.clone(), &cfg).unwrap();
        let first = TrainOptions {
            checkpoint: Some(path.clone()),
            max_epochs_this_call: Some(2),
            ..TrainOptions::default()
        };
        train_with(&model, &batch, None, init.clone(), &cfg, first).unwrap();
        let resume = TrainOptions {
            resume: Some(Checkpoint::load(&path).unwrap()),
            ..TrainOptions::default()
        };
        let (res, res_trace) = train_with(&model, &batch, None, init, &cfg, resume).unwrap();
        assert_eq!(res, full);
        let strip = |t: &TrainTrace| t.records.iter().map(|r| (r.epoch, r.nll)).collect::<Vec<_>>();
        assert_eq!(strip(&res_trace), strip(&full_trace));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn convergence_window_stops_early() {
        let model = rep(3, 1, 0.05);
        let batch = sample_shots(&model, 200, 3);
        let cfg = TrainConfig {
            epochs: 100,
            learning_rate: 0.0,
            window: 3,
            ..TrainConfig::default()
        };
        let init = PriorParams::from_theta(&model.priors(), Backend::Planar);
        let (_, trace) = train(&model, &batch, init, &cfg).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.records.len(), 4);
    }

    #[test]
    fn csv_columns() {
        let t = TrainTrace {
            records: vec![EpochRecord {
                epoch: 0,
                nll: 1.5,
                rel_err: None,
                seconds: 2.0,
            }],
            converged: false,
        };
        assert!(t.to_csv(false).starts_with("epoch,nll,rel_err\n0,"));
        assert!(t.to_csv(true).lines().nth(1).unwrap().ends_with(",2.000000"));
    }
}
