//! Backend selection and a uniform batched likelihood interface.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contract::{load_or_optimize, optimize_path, Contractor, ExecOptions, SaConfig};
use crate::dem::{DetectorErrorModel, ShotBatch};
use crate::error::{Error, Result};
use crate::planar::PlanarSolver;
use crate::tnbuild::{build_likelihood_network, TensorNetwork};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Backend {
    #[serde(rename = "planar")]
    Planar,
    #[serde(rename = "tn", alias = "tensor-network")]
    TensorNetwork,
}

impl FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "planar" => Ok(Backend::Planar),
            "tn" | "tensor-network" => Ok(Backend::TensorNetwork),
            other => Err(Error::InvalidParameter(format!("unknown backend '{other}'"))),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Planar => "planar",
            Backend::TensorNetwork => "tn",
        })
    }
}

/// Contraction settings for the tensor-network backend.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TnSettings {
    pub path: SaConfig,
    pub exec: ExecOptions,
    /// Directory for cached contraction trees.
    pub cache_dir: Option<std::path::PathBuf>,
}

/// Finds (or loads) a tree for `network` and wraps it for execution.
pub fn tn_contractor(network: TensorNetwork, settings: &TnSettings) -> Result<Contractor> {
    let (tree, cost) = match &settings.cache_dir {
        Some(dir) => load_or_optimize(&network, &settings.path, dir)?,
        None => optimize_path(&network, &settings.path)?,
    };
    log::debug!(
        "contraction tree: flops {:.3e}, max tensor {:.3e}",
        cost.total_flops,
        cost.max_tensor_elems
    );
    Contractor::new(network, tree, settings.exec)
}

enum Engine {
    Planar(PlanarSolver),
    Tn(Contractor),
}

/// Batched `log p_theta(s)` and its gradient for one model structure.
pub struct LikelihoodEngine {
    engine: Engine,
    n_mechanisms: usize,
}

/// Shots per sequential partial sum; fixes the reduction order.
const REDUCE_CHUNK: usize = 64;

impl LikelihoodEngine {
    pub fn new(model: &DetectorErrorModel, backend: Backend, tn: &TnSettings) -> Result<Self> {
        let engine = match backend {
            Backend::Planar => Engine::Planar(PlanarSolver::new(model)?),
            Backend::TensorNetwork => {
                let net = build_likelihood_network(model, &model.priors())?;
                Engine::Tn(tn_contractor(net, tn)?)
            }
        };
        Ok(Self {
            engine,
            n_mechanisms: model.n_mechanisms(),
        })
    }

    pub fn backend(&self) -> Backend {
        match self.engine {
            Engine::Planar(_) => Backend::Planar,
            Engine::Tn(_) => Backend::TensorNetwork,
        }
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_mechanisms {
            return Err(Error::LengthMismatch {
                expected: self.n_mechanisms,
                got: theta.len(),
            });
        }
        Ok(())
    }

    pub fn log_probs(&self, theta: &[f64], batch: &ShotBatch) -> Result<Vec<f64>> {
        self.check(theta)?;
        match &self.engine {
            Engine::Planar(p) => p.batch_log_probs(theta, batch),
            Engine::Tn(c) => Ok(c.contract(theta, batch)?.iter().map(tn_log_prob).collect()),
        }
    }

    /// Per-shot `log p` and `d/d theta sum_k weights[k] log p_k`.
    pub fn log_probs_and_grad(
        &self,
        theta: &[f64],
        batch: &ShotBatch,
        weights: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(theta)?;
        if weights.len() != batch.n_shots() {
            return Err(Error::LengthMismatch {
                expected: batch.n_shots(),
                got: weights.len(),
            });
        }
        match &self.engine {
            Engine::Tn(c) => {
                let (v, g) = c.value_and_grad(theta, batch, weights)?;
                Ok((v.iter().map(tn_log_prob).collect(), g))
            }
            Engine::Planar(p) => {
                let n = batch.n_shots();
                let parts: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..n.div_ceil(REDUCE_CHUNK))
                    .into_par_iter()
                    .map(|c| {
                        let mut lps = Vec::with_capacity(REDUCE_CHUNK);
                        let mut grad = vec![0.0; self.n_mechanisms];
                        for k in c * REDUCE_CHUNK..((c + 1) * REDUCE_CHUNK).min(n) {
                            let (lp, g) = p.log_prob_and_grad(theta, &batch.syndrome(k))?;
                            for (acc, gi) in grad.iter_mut().zip(&g) {
                                *acc += weights[k] * gi;
                            }
                            lps.push(lp);
                        }
                        Ok((lps, grad))
                    })
                    .collect();
                let mut lps = Vec::with_capacity(n);
                let mut grad = vec![0.0; self.n_mechanisms];
                for part in parts {
                    let (l, g) = part?;
                    lps.extend(l);
                    for (acc, gi) in grad.iter_mut().zip(&g) {
                        *acc += gi;
                    }
                }
                Ok((lps, grad))
            }
        }
    }
}

fn tn_log_prob(v: &crate::contract::ShotValue) -> f64 {
    if v.sign > 0.0 {
        v.log_abs
    } else {
        f64::NEG_INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::{generate, CodeFamily};
    use crate::dem::sample_shots;

    #[test]
    fn backends_agree_on_values_and_gradients() {
        let model = generate(CodeFamily::Repetition, 3, 2, 0.03).unwrap();
        let batch = sample_shots(&model, 300, 4);
        let th = model.priors();
        let w: Vec<f64> = (0..300).map(|k| (k % 5) as f64).collect();
        let p = LikelihoodEngine::new(&model, Backend::Planar, &TnSettings::default()).unwrap();
        let t = LikelihoodEngine::new(&model, Backend::TensorNetwork, &TnSettings::default()).unwrap();
        let (la, ga) = p.log_probs_and_grad(&th, &batch, &w).unwrap();
        let (lb, gb) = t.log_probs_and_grad(&th, &batch, &w).unwrap();
        for (a, b) in la.iter().zip(&lb) {
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        }
        for (a, b) in ga.iter().zip(&gb) {
            assert!((a - b).abs() < 1e-8 * a.abs().max(1.0));
        }
        assert_eq!(la, p.log_probs(&th, &batch).unwrap());
    }

    #[test]
    fn backend_names_round_trip() {
        for b in [Backend::Planar, Backend::TensorNetwork] {
            assert_eq!(b.to_string().parse::<Backend>().unwrap(), b);
        }
        assert!("mps".parse::<Backend>().is_err());
    }
}
