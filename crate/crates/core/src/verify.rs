//! Seeded cross-checks of both backends against the brute-force oracles.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backend::{Backend, LikelihoodEngine, TnSettings};
use crate::codes::{generate, truncate, CodeFamily};
use crate::decode::{decode, DecodeResult};
use crate::dem::{DetectorErrorModel, ShotBatch};
use crate::error::{Error, Result};
use crate::gf2::BitVec;
use crate::oracle;
use crate::planar::{random_planar_graph, EdgeWeight, KacWard, PlanarSolver};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Planar,
    Likelihood,
    Normalization,
    Gradient,
    Decode,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Planar,
        Suite::Likelihood,
        Suite::Normalization,
        Suite::Gradient,
        Suite::Decode,
    ];
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.to_string() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown suite '{s}'")))
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Planar => "planar",
            Suite::Likelihood => "likelihood",
            Suite::Normalization => "normalization",
            Suite::Gradient => "gradient",
            Suite::Decode => "decode",
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: usize,
    pub failed: usize,
    /// Largest error seen, in the suite's own metric.
    pub max_error: f64,
    pub tolerance: f64,
    pub failures: Vec<String>,
}

impl SuiteReport {
    fn new(suite: Suite, tolerance: f64) -> Self {
        Self {
            suite,
            passed: 0,
            failed: 0,
            max_error: 0.0,
            tolerance,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, label: String, error: f64) {
        self.max_error = self.max_error.max(if error.is_nan() { f64::INFINITY } else { error });
        if error <= self.tolerance {
            self.passed += 1;
        } else {
            self.failed += 1;
            self.failures.push(format!("{label}: error {error:e}"));
        }
    }

    fn fail(&mut self, label: String, err: Error) {
        self.failed += 1;
        self.max_error = f64::INFINITY;
        self.failures.push(format!("{label}: {err}"));
    }

    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

/// Sizes of the suites.
#[derive(Clone, Copy, Debug)]
pub struct SuiteSizes {
    pub planar_graphs: usize,
    pub syndromes: usize,
    pub gradient_instances: usize,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        Self {
            planar_graphs: 200,
            syndromes: 1000,
            gradient_instances: 50,
        }
    }
}

/// Generated models small enough for enumeration (at most 24 mechanisms).
pub fn test_models() -> Vec<(String, DetectorErrorModel)> {
    let mut out = Vec::new();
    let mut push = |code: CodeFamily, d: usize, r: usize, cap: usize| {
        let m = generate(code, d, r, 0.01).expect("valid parameters");
        let cap = cap.min(oracle::MAX_MECHANISMS);
        if m.n_mechanisms() > cap {
            let t = truncate(&m, cap).expect("truncation");
            out.push((format!("{code} d={d} r={r} first {cap}"), t));
        } else {
            out.push((format!("{code} d={d} r={r}"), m));
        }
    };
    for d in [3, 5] {
        for r in 1..=3 {
            push(CodeFamily::Repetition, d, r, oracle::MAX_MECHANISMS);
        }
    }
    for (r, cap) in [(1, 24), (2, 16), (2, 24)] {
        push(CodeFamily::Surface, 3, r, cap);
    }
    out
}

fn random_theta(n: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn backends(model: &DetectorErrorModel) -> Vec<Backend> {
    let mut b = Vec::with_capacity(2);
    if PlanarSolver::new(model).is_ok() {
        b.push(Backend::Planar);
    }
    b.push(Backend::TensorNetwork);
    b
}

fn syndrome_batch(m: usize, indices: &[usize]) -> Result<ShotBatch> {
    let rows: Vec<BitVec> = indices
        .iter()
        .map(|&x| BitVec::from_ones(m, (0..m).filter(|j| (x >> j) & 1 == 1)))
        .collect();
    ShotBatch::from_syndromes(m, &rows)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Kac–Ward against spin enumeration on random planar graphs.
pub fn planar_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new(Suite::Planar, 1e-10);
    for k in 0..cases {
        let mut rng = rng_for(seed, k as u64);
        let n = rng.random_range(2..=14);
        let g = random_planar_graph(n, 0.75, 2.0, &mut rng);
        let label = format!("graph {k} (V={n}, E={})", g.edges.len());
        let run = || -> Result<f64> {
            let kw = KacWard::combinatorial(g.embedding()?)?;
            let w: Vec<EdgeWeight> = g.couplings.iter().map(|&j| EdgeWeight::Coupling(j)).collect();
            let got = kw.log_partition(&w, false)?.log_z;
            let edges: Vec<(usize, usize, f64)> =
                g.edges.iter().zip(&g.couplings).map(|(&(u, v), &j)| (u, v, j)).collect();
            let want = oracle::brute_partition(n, &edges, None)?;
            Ok((got - want).abs() / want.abs())
        };
        match run() {
            Ok(e) => rep.record(label, e),
            Err(e) => rep.fail(label, e),
        }
    }
    rep
}

/// Both backends against enumerated `p(s)` on random reachable syndromes.
pub fn likelihood_suite(syndromes: usize, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new(Suite::Likelihood, 1e-10);
    for (k, (name, model)) in test_models().into_iter().enumerate() {
        let mut rng = rng_for(seed, k as u64);
        let th = random_theta(model.n_mechanisms(), 0.01, 0.2, &mut rng);
        let mut run = |rep: &mut SuiteReport| -> Result<()> {
            let joint = oracle::joint_distribution(&model, &th)?;
            let reachable: Vec<usize> = (0..joint.len()).filter(|&x| joint[x][0] + joint[x][1] > 0.0).collect();
            let picks: Vec<usize> = (0..syndromes)
                .map(|_| reachable[rng.random_range(0..reachable.len())])
                .collect();
            let batch = syndrome_batch(model.n_detectors(), &picks)?;
            for b in backends(&model) {
                let lps = LikelihoodEngine::new(&model, b, &TnSettings::default())?.log_probs(&th, &batch)?;
                let worst = picks
                    .iter()
                    .zip(&lps)
                    .map(|(&x, lp)| {
                        let p = joint[x][0] + joint[x][1];
                        (lp.exp() - p).abs() / p
                    })
                    .fold(0.0, f64::max);
                rep.record(format!("{name} [{b}]"), worst);
            }
            Ok(())
        };
        if let Err(e) = run(&mut rep) {
            rep.fail(name, e);
        }
    }
    rep
}

/// `sum_s p(s) = 1` over all syndromes of every test model with `m <= 12`.
pub fn normalization_suite(seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new(Suite::Normalization, 1e-8);
    for (k, (name, model)) in test_models().into_iter().enumerate() {
        let m = model.n_detectors();
        if m > 12 {
            continue;
        }
        let mut rng = rng_for(seed, k as u64);
        let th = random_theta(model.n_mechanisms(), 0.01, 0.3, &mut rng);
        let run = |rep: &mut SuiteReport| -> Result<()> {
            let solver = model.pure_error_solver();
            let all: Vec<usize> = (0..1usize << m).collect();
            let batch = syndrome_batch(m, &all)?;
            let reachable: Vec<usize> = all
                .iter()
                .copied()
                .filter(|&x| solver.solve(&batch.syndrome(x)).is_ok())
                .collect();
            let batch = syndrome_batch(m, &reachable)?;
            for b in backends(&model) {
                let lps = LikelihoodEngine::new(&model, b, &TnSettings::default())?.log_probs(&th, &batch)?;
                let total: f64 = lps.iter().map(|lp| lp.exp()).sum();
                rep.record(format!("{name} [{b}]"), (total - 1.0).abs());
            }
            Ok(())
        };
        if let Err(e) = run(&mut rep) {
            rep.fail(name, e);
        }
    }
    rep
}

/// Analytic gradients of `sum_k log p(s_k)` against central differences of
/// the enumerated likelihood.
pub fn gradient_suite(instances: usize, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new(Suite::Gradient, 1e-5);
    let models: Vec<(String, DetectorErrorModel)> = test_models()
        .into_iter()
        .map(|(name, m)| {
            let t = truncate(&m, m.n_mechanisms().min(16)).expect("truncation");
            (format!("{name} (first {})", t.n_mechanisms()), t)
        })
        .collect();
    let engines: Vec<Vec<(Backend, LikelihoodEngine)>> = models
        .iter()
        .map(|(_, m)| {
            backends(m)
                .into_iter()
                .filter_map(|b| LikelihoodEngine::new(m, b, &TnSettings::default()).ok().map(|e| (b, e)))
                .collect()
        })
        .collect();
    for k in 0..instances {
        let (name, model) = &models[k % models.len()];
        let mut rng = rng_for(seed, k as u64);
        let th = random_theta(model.n_mechanisms(), 0.02, 0.3, &mut rng);
        let mut run = |rep: &mut SuiteReport| -> Result<()> {
            let joint = oracle::joint_distribution(model, &th)?;
            let reachable: Vec<usize> = (0..joint.len()).filter(|&x| joint[x][0] + joint[x][1] > 0.0).collect();
            let picks: Vec<usize> = (0..5).map(|_| reachable[rng.random_range(0..reachable.len())]).collect();
            let batch = syndrome_batch(model.n_detectors(), &picks)?;
            let f = |t: &[f64]| -> f64 {
                let j = oracle::joint_distribution(model, t).expect("sizes checked");
                picks.iter().map(|&x| (j[x][0] + j[x][1]).ln()).sum()
            };
            let fd = oracle::fd_grad(f, &th, 1e-6)?;
            for (b, engine) in &engines[k % models.len()] {
                let (_, g) = engine.log_probs_and_grad(&th, &batch, &[1.0; 5])?;
                let worst = g
                    .iter()
                    .zip(&fd)
                    .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
                    .fold(0.0, f64::max);
                rep.record(format!("instance {k}: {name} [{b}]"), worst);
            }
            Ok(())
        };
        if let Err(e) = run(&mut rep) {
            rep.fail(format!("instance {k}: {name}"), e);
        }
    }
    rep
}

/// Both decoders against brute-force coset sums on every syndrome of every
/// test model with `m <= 12`. The error is the probability shortfall of the
/// chosen class relative to `p(s)`.
pub fn decode_suite(seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new(Suite::Decode, 1e-9);
    for (k, (name, model)) in test_models().into_iter().enumerate() {
        let m = model.n_detectors();
        if m > 12 {
            continue;
        }
        let mut rng = rng_for(seed, k as u64);
        let th = random_theta(model.n_mechanisms(), 0.01, 0.3, &mut rng);
        let run = |rep: &mut SuiteReport| -> Result<()> {
            let joint = oracle::joint_distribution(&model, &th)?;
            let all: Vec<usize> = (0..1usize << m).collect();
            let batch = syndrome_batch(m, &all)?;
            for b in backends(&model) {
                let res: DecodeResult = decode(&model, &th, &batch, b, &TnSettings::default())?;
                let mut worst: f64 = 0.0;
                for (x, [p0, p1]) in joint.iter().enumerate() {
                    let total = p0 + p1;
                    if total == 0.0 {
                        continue;
                    }
                    let chosen = if res.predicted.get(x) { p1 } else { p0 };
                    worst = worst.max((p0.max(*p1) - chosen) / total);
                }
                rep.record(format!("{name} [{b}]"), worst);
            }
            Ok(())
        };
        if let Err(e) = run(&mut rep) {
            rep.fail(name, e);
        }
    }
    rep
}

pub fn run_suite(suite: Suite, sizes: SuiteSizes, seed: u64) -> SuiteReport {
    match suite {
        Suite::Planar => planar_suite(sizes.planar_graphs, seed),
        Suite::Likelihood => likelihood_suite(sizes.syndromes, seed),
        Suite::Normalization => normalization_suite(seed),
        Suite::Gradient => gradient_suite(sizes.gradient_instances, seed),
        Suite::Decode => decode_suite(seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_models_fit_the_oracle() {
        let models = test_models();
        assert!(models.iter().all(|(_, m)| m.n_mechanisms() <= oracle::MAX_MECHANISMS));
        assert!(models.iter().any(|(_, m)| m.n_detectors() <= 12));
    }

    #[test]
    fn small_suites_pass() {
        let sizes = SuiteSizes {
            planar_graphs: 10,
            syndromes: 20,
            gradient_instances: 3,
        };
        for s in [Suite::Planar, Suite::Gradient] {
            let r = run_suite(s, sizes, 1);
            assert!(r.ok(), "{r:?}");
        }
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.to_string().parse::<Suite>().unwrap(), s);
        }
    }
}
