//! Ground-truth generators, error metrics, classification, model files and
//! benchmark grids.

pub mod classify;
pub mod experiment;
pub mod generators;
pub mod io;
pub mod metrics;

pub use classify::{accuracy, classify_map, cross_validate_rank, fit_method, Method, RankSelection};
pub use experiment::{run_experiment, CellResult, ExperimentResult, ExperimentSpec, GeneratorKind, SummaryRow};
pub use generators::{gen_cim_model, gen_pmf_model, gen_separable_model};
pub use io::{config_hash, ModelFile, Provenance};
pub use metrics::{align, hungarian, mae, mae_models, mse_aligned};
