//! Estimators of a CPD model from data or projected marginals.

pub mod baselines;
pub mod config;
pub mod em;
pub mod juror;
pub mod objective;
pub mod pgd;

pub use baselines::{ctf_gradient, ctf_objective, fit_ctf_3way, fit_spa_2way, spa_from_marginals, TripleStack};
pub use config::{DescentObjective, DescentOptions, FitReport, RhoChoice, SolverConfig, StageTrace, Variant};
pub use em::{fit_em, random_start, EmOptions};
pub use juror::{juror, juror_data, prepare, Fit};
pub use objective::{grad_j, grad_j1, objective_j, objective_j1, Gradient};
pub use pgd::{projected_descent, DescentOutcome};
