use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radon::Binning;

/// Which refinement stages follow the initial SPA estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Penalised alternation followed by projected gradient descent.
    A,
    /// Projected gradient descent only.
    B,
    /// Penalised alternation only.
    C,
}

impl Variant {
    pub fn runs_alternation(self) -> bool {
        matches!(self, Variant::A | Variant::C)
    }

    pub fn runs_descent(self) -> bool {
        matches!(self, Variant::A | Variant::B)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::A => "A",
            Variant::B => "B",
            Variant::C => "C",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Variant::A),
            "B" => Ok(Variant::B),
            "C" => Ok(Variant::C),
            _ => Err(Error::domain(format!("unknown variant {s:?}; expected A, B or C"))),
        }
    }
}

/// Penalty weight: fixed, or chosen on held-out samples from a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhoChoice {
    Fixed(f64),
    CrossValidate(Vec<f64>),
}

impl RhoChoice {
    pub fn default_grid() -> Self {
        RhoChoice::CrossValidate(vec![0.1, 1.0, 10.0])
    }
}

/// Objective minimised by the projected-gradient stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescentObjective {
    /// Data fit of the projected pairwise marginals.
    #[default]
    J,
    /// Penalised coupling to the last auxiliary marginals.
    J1,
}

impl FromStr for DescentObjective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "j" => Ok(DescentObjective::J),
            "j1" => Ok(DescentObjective::J1),
            _ => Err(Error::domain(format!("unknown descent objective {s:?}; expected J or J1"))),
        }
    }
}

/// Settings of the projected-gradient loop with Armijo backtracking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentOptions {
    pub step0: f64,
    pub max_iter: usize,
    /// Stop when the relative objective decrease falls below this.
    pub rel_tol: f64,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self { step0: 0.1, max_iter: 200, rel_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rank: usize,
    pub num_projections: usize,
    pub rho: RhoChoice,
    pub epsilon: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub step0: f64,
    pub seed: u64,
    pub binning: Binning,
    pub descent_objective: DescentObjective,
    /// Held-out fraction used when `rho` is cross-validated.
    pub holdout_fraction: f64,
}

impl SolverConfig {
    pub fn new(rank: usize, num_projections: usize) -> Self {
        Self {
            rank,
            num_projections,
            rho: RhoChoice::Fixed(1.0),
            epsilon: 1e-6,
            max_outer: 50,
            max_inner: 200,
            step0: 0.1,
            seed: 0,
            binning: Binning::Dithered,
            descent_objective: DescentObjective::J,
            holdout_fraction: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::domain("rank must be at least 1"));
        }
        if self.num_projections == 0 {
            return Err(Error::domain("at least one projection direction is required"));
        }
        let rho_ok = |r: f64| r.is_finite() && r >= 0.0;
        match &self.rho {
            RhoChoice::Fixed(r) if !rho_ok(*r) => return Err(Error::domain("rho must be finite and nonnegative")),
            RhoChoice::CrossValidate(g) if g.is_empty() || !g.iter().all(|&r| rho_ok(r)) => {
                return Err(Error::domain("rho grid must be nonempty, finite and nonnegative"))
            }
            _ => {}
        }
        if !(self.epsilon > 0.0) || !(self.step0 > 0.0) {
            return Err(Error::domain("epsilon and step0 must be positive"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::domain("holdout fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn descent(&self) -> DescentOptions {
        DescentOptions { step0: self.step0, max_iter: self.max_inner, rel_tol: self.epsilon }
    }
}

/// Objective values and timing of one stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: String,
    pub objective: Vec<f64>,
    pub seconds: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Diagnostics of one fit, serialisable to JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub method: String,
    pub variant: Option<Variant>,
    pub stages: Vec<StageTrace>,
    pub final_j: Option<f64>,
    pub final_j1: Option<f64>,
    pub rho: Option<f64>,
    /// Held-out objective for each cross-validated `rho`, in grid order.
    pub rho_scores: Vec<(f64, f64)>,
    pub converged: bool,
    pub dropped_pairs: Vec<(usize, usize)>,
    pub warnings: Vec<String>,
    pub config: Option<SolverConfig>,
}

impl FitReport {
    pub fn new(method: impl Into<String>) -> Self {
        Self { method: method.into(), ..Default::default() }
    }

    pub fn stage(&self, name: &str) -> Option<&StageTrace> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
