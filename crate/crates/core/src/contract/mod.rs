//! Contraction trees, path search, and batched differentiable contraction.

mod exec;
mod path;
mod tensor;
mod tree;

pub use exec::{backward, contract, Contractor, ExecOptions, ShotValue};
pub use path::{elimination_tree, greedy_tree, sweep_tree, load_or_optimize, optimize_path, tree_cache_key, SaConfig};
pub use tensor::{contract_pair, Contracted, Tensor};
pub use tree::{estimate_cost, ContractionTree, CostReport, CostWeights, TreeAnalysis};
