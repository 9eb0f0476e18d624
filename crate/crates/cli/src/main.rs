//! `dmle`: generate models, sample shots, estimate priors, decode, evaluate,
//! find contraction paths and run oracle cross-checks.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use dmle_core::backend::Backend;
use dmle_core::codes::{generate, CodeFamily};
use dmle_core::contract::{load_or_optimize, optimize_path, SaConfig};
use dmle_core::decode::{decode, LerReport};
use dmle_core::dem::{parse_dem, read_shots, sample_shots, serialize_dem, write_bits, write_shots, DetectorErrorModel, ShotFormat};
use dmle_core::mle::{
    exact_nll_train, mean_relative_error, perturb_priors, train_with, Checkpoint, OptimizerKind, PriorParams,
    TrainConfig, TrainOptions,
};
use dmle_core::tnbuild::{build_decoder_network, build_likelihood_network};
use dmle_core::verify::{run_suite, Suite, SuiteSizes};

#[derive(Parser)]
#[command(name = "dmle", version, about = "Exact likelihood estimation and decoding for detector error models")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Shot file format: 01 or b8.
    #[arg(long, global = true, default_value = "01")]
    format: String,
    /// Likelihood backend: planar or tn.
    #[arg(long, global = true, default_value = "tn")]
    backend: String,
    /// JSON or flat key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a memory-experiment model.
    Gen {
        #[arg(long)]
        code: String,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        r: usize,
        /// Physical error rate.
        #[arg(long, default_value_t = 0.001)]
        p: f64,
    },
    /// Sample syndromes and logical labels from a model.
    Sample {
        #[arg(long)]
        dem: PathBuf,
        #[arg(long)]
        shots: usize,
        /// Label file (default: `<out>.labels`).
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Train priors on shots (or on the exact distribution of a reference model).
    Estimate {
        /// Model whose priors initialize training.
        #[arg(long)]
        dem: PathBuf,
        #[arg(long)]
        shots: Option<PathBuf>,
        /// Model with reference priors, for the error column and `--exact`.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Minimize the exact expected NLL under the reference priors.
        #[arg(long)]
        exact: bool,
        /// Perturb the initial priors by log-uniform factors in [1/s, s].
        #[arg(long)]
        perturb: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        optimizer: Option<String>,
        /// Per-epoch CSV trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Include wall-clock seconds in the trace.
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue from `--checkpoint`.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs (resumable).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Predict logical flips for shots.
    Decode {
        #[arg(long)]
        dem: PathBuf,
        #[arg(long)]
        shots: PathBuf,
    },
    /// Logical error rate on labelled shots.
    Eval {
        #[arg(long)]
        dem: PathBuf,
        #[arg(long)]
        shots: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Optimize a contraction tree and report its cost.
    Pathfind {
        #[arg(long)]
        dem: PathBuf,
        /// Use the decoder network instead of the likelihood network.
        #[arg(long)]
        decoder: bool,
        #[arg(long)]
        proposals: Option<usize>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Cross-check the backends against brute-force oracles.
    Verify {
        /// planar, likelihood, normalization, gradient, decode or all.
        #[arg(long, default_value = "all")]
        suite: String,
        /// Random graphs or instances per suite.
        #[arg(long)]
        cases: Option<usize>,
        /// Syndromes per model in the likelihood suite.
        #[arg(long)]
        syndromes: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("serializable"));
            if v.get("ok") == Some(&Value::Bool(false)) {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            println!("{}", json!({"ok": false, "error": format!("{e:#}")}));
            ExitCode::FAILURE
        }
    }
}

fn read_model(path: &Path) -> Result<DetectorErrorModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_dem(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_model(model: &DetectorErrorModel, path: &Path) -> Result<()> {
    std::fs::write(path, serialize_dem(model)).with_context(|| format!("writing {}", path.display()))
}

fn require_out(common: &Common) -> Result<&Path> {
    common.out.as_deref().context("--out is required")
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn run(cli: Cli) -> Result<Value> {
    let c = &cli.common;
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let format: ShotFormat = c.format.parse()?;
    let backend: Backend = c.backend.parse()?;
    let seed = c.seed.unwrap_or(0);
    match &cli.command {
        Command::Gen { code, d, r, p } => {
            let family: CodeFamily = code.parse()?;
            let model = generate(family, *d, *r, *p)?;
            let out = require_out(c)?;
            write_model(&model, out)?;
            Ok(json!({
                "command": "gen",
                "code": family.to_string(),
                "d": d,
                "r": r,
                "p": p,
                "detectors": model.n_detectors(),
                "mechanisms": model.n_mechanisms(),
                "graphlike": model.is_graphlike(),
                "out": path_str(out),
            }))
        }
        Command::Sample { dem, shots, labels } => {
            let model = read_model(dem)?;
            let out = require_out(c)?;
            let labels = labels.clone().unwrap_or_else(|| {
                let mut s = out.as_os_str().to_owned();
                s.push(".labels");
                PathBuf::from(s)
            });
            let batch = sample_shots(&model, *shots, seed);
            write_shots(&batch, out, format, Some(&labels))?;
            let fired: usize = (0..batch.n_shots()).map(|k| batch.syndrome(k).count_ones()).sum();
            let flips = batch.logical_flips().map_or(0, |l| l.count_ones());
            Ok(json!({
                "command": "sample",
                "shots": shots,
                "detectors": model.n_detectors(),
                "detection_fraction": fired as f64 / (shots * model.n_detectors()).max(1) as f64,
                "logical_flip_fraction": flips as f64 / (*shots).max(1) as f64,
                "seed": seed,
                "out": path_str(out),
                "labels": path_str(&labels),
            }))
        }
        Command::Estimate {
            dem,
            shots,
            reference,
            exact,
            perturb,
            epochs,
            lr,
            batch_size,
            optimizer,
            trace,
            timing,
            checkpoint,
            resume,
            stop_after,
        } => {
            let model = read_model(dem)?;
            let mut cfg: TrainConfig = config::load(c.config.as_deref())?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = *e;
            }
            if let Some(x) = lr {
                cfg.learning_rate = *x;
            }
            if let Some(b) = batch_size {
                cfg.batch_size = *b;
            }
            if let Some(o) = optimizer {
                cfg.optimizer = match o.as_str() {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::Adam,
                    other => bail!("unknown optimizer '{other}'"),
                };
            }
            let reference_theta = match reference {
                Some(p) => {
                    let r = read_model(p)?;
                    if r.n_mechanisms() != model.n_mechanisms() {
                        bail!("reference model has {} mechanisms, expected {}", r.n_mechanisms(), model.n_mechanisms());
                    }
                    Some(r.priors())
                }
                None => None,
            };
            let mut init = model.priors();
            if let Some(s) = perturb {
                init = perturb_priors(&init, *s, cfg.seed)?;
            }
            let resume_state = if *resume {
                let p = checkpoint.as_deref().context("--resume needs --checkpoint")?;
                Some(Checkpoint::load(p)?)
            } else {
                None
            };
            let opts = TrainOptions {
                reference: reference_theta.clone(),
                checkpoint: checkpoint.clone(),
                resume: resume_state,
                max_epochs_this_call: *stop_after,
                timing: *timing,
            };
            let params = PriorParams::from_theta(&init, backend);
            let initial_rel = reference_theta.as_ref().map(|r| mean_relative_error(&init, r));
            let (out_params, tr) = if *exact {
                let truth = reference_theta.as_ref().context("--exact needs --reference")?;
                exact_nll_train(&model, truth, params, &cfg, opts)?
            } else {
                let path = shots.as_deref().context("--shots is required unless --exact")?;
                let batch = read_shots(path, format, model.n_detectors(), None)?;
                train_with(&model, &batch, None, params, &cfg, opts)?
            };
            let out = require_out(c)?;
            write_model(&model.with_priors(out_params.theta())?, out)?;
            if let Some(t) = trace {
                std::fs::write(t, tr.to_csv(*timing)).with_context(|| format!("writing {}", t.display()))?;
            }
            Ok(json!({
                "command": "estimate",
                "backend": backend.to_string(),
                "exact": exact,
                "epochs_run": tr.records.len(),
                "converged": tr.converged,
                "initial_nll": tr.records.first().map(|r| r.nll),
                "final_nll": tr.records.last().map(|r| r.nll),
                "initial_rel_err": initial_rel,
                "final_rel_err": reference_theta.as_ref().map(|r| mean_relative_error(out_params.theta(), r)),
                "out": path_str(out),
            }))
        }
        Command::Decode { dem, shots } => {
            let model = read_model(dem)?;
            let batch = read_shots(shots, format, model.n_detectors(), None)?;
            let cfg: TrainConfig = config::load(c.config.as_deref())?;
            let res = decode(&model, &model.priors(), &batch, backend, &cfg.tn)?;
            let out = require_out(c)?;
            write_bits(&res.predicted, out, format)?;
            Ok(json!({
                "command": "decode",
                "backend": backend.to_string(),
                "shots": batch.n_shots(),
                "predicted_flips": res.predicted.count_ones(),
                "ties": res.ties.len(),
                "out": path_str(out),
            }))
        }
        Command::Eval { dem, shots, labels } => {
            let model = read_model(dem)?;
            let batch = read_shots(shots, format, model.n_detectors(), Some(labels))?;
            let cfg: TrainConfig = config::load(c.config.as_deref())?;
            let res = decode(&model, &model.priors(), &batch, backend, &cfg.tn)?;
            let report = LerReport::new(
                &res.predicted,
                batch.logical_flips().context("labels missing")?,
                model.metadata_usize("r"),
                res.ties.len(),
            )?;
            let mut v = serde_json::to_value(&report)?;
            v["command"] = json!("eval");
            v["backend"] = json!(backend.to_string());
            Ok(v)
        }
        Command::Pathfind {
            dem,
            decoder,
            proposals,
            chains,
            cache_dir,
        } => {
            let model = read_model(dem)?;
            let mut sa: SaConfig = config::load(c.config.as_deref())?;
            if let Some(s) = c.seed {
                sa.seed = s;
            }
            if let Some(p) = proposals {
                sa.proposals_per_temperature = *p;
            }
            if let Some(k) = chains {
                sa.chains = *k;
            }
            let th = model.priors();
            let net = if *decoder {
                build_decoder_network(&model, &th)?
            } else {
                build_likelihood_network(&model, &th)?
            };
            let (tree, cost) = match cache_dir {
                Some(dir) => load_or_optimize(&net, &sa, dir)?,
                None => optimize_path(&net, &sa)?,
            };
            let mut v = json!({
                "command": "pathfind",
                "network": if *decoder { "decoder" } else { "likelihood" },
                "nodes": net.n_nodes(),
                "indices": net.indices.len(),
                "mechanisms": model.n_mechanisms(),
                "detectors": model.n_detectors(),
                "seed": sa.seed,
                "total_flops": cost.total_flops,
                "max_tensor_elems": cost.max_tensor_elems,
                "total_access_bytes": cost.total_access_bytes,
                "loss": cost.loss,
                "log2_flops": cost.total_flops.max(1.0).log2(),
                "log2_max_tensor": cost.max_tensor_elems.max(1.0).log2(),
            });
            if let Some(out) = &c.out {
                std::fs::write(out, serde_json::to_string(&tree)?)?;
                v["out"] = json!(path_str(out));
            }
            Ok(v)
        }
        Command::Verify {
            suite,
            cases,
            syndromes,
        } => {
            let suites: Vec<Suite> = if suite == "all" {
                Suite::ALL.to_vec()
            } else {
                vec![suite.parse()?]
            };
            let mut sizes = SuiteSizes::default();
            if let Some(k) = cases {
                sizes.planar_graphs = *k;
                sizes.gradient_instances = *k;
            }
            if let Some(s) = syndromes {
                sizes.syndromes = *s;
            }
            let reports: Vec<_> = suites.into_iter().map(|s| run_suite(s, sizes, seed)).collect();
            let passed: usize = reports.iter().map(|r| r.passed).sum();
            let failed: usize = reports.iter().map(|r| r.failed).sum();
            Ok(json!({
                "command": "verify",
                "ok": failed == 0,
                "seed": seed,
                "passed": passed,
                "failed": failed,
                "suites": reports,
            }))
        }
    }
}
