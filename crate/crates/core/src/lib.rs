// Negated comparisons such as `!(x > 0.0)` deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod eval;
pub mod factorization;
pub mod linalg;
pub mod marginals;
pub mod model;
pub mod radon;
pub mod scalar;
pub mod simplex;
pub mod solver;

pub use data::{load_csv, read_csv, Dataset, Schema};
pub use error::{Error, Result};
pub use eval::{
    accuracy, classify_map, cross_validate_rank, gen_cim_model, gen_pmf_model, mae, mse_aligned, run_experiment,
    ExperimentSpec, Method, ModelFile,
};
pub use factorization::{assemble, extract_factors, make_split, spa, SplitPlan};
pub use marginals::{estimate_projected, ProjectedStack};
pub use model::CpdModel;
pub use radon::{Binning, DirectionSet, OperatorBank, RadonOperator};
pub use scalar::Scalar;
pub use solver::{fit_ctf_3way, fit_em, fit_spa_2way, juror, juror_data, Fit, FitReport, SolverConfig, Variant};

pub type CpdModel64 = CpdModel<f64>;
pub type CpdModel32 = CpdModel<f32>;
pub type RadonOperator64 = RadonOperator<f64>;
pub type RadonOperator32 = RadonOperator<f32>;
pub type ProjectedStack64 = ProjectedStack<f64>;
pub type ProjectedStack32 = ProjectedStack<f32>;
