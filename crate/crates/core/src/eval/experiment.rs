//! Synthetic benchmark grids: sample from a seeded ground truth, fit every
//! requested method and score the estimates.
//!
//! Cells run in parallel. Rows are sorted before they are written and no
//! timing enters the tables, so equal specs give byte-identical files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CpdModel;
use crate::radon::Binning;
use crate::solver::{RhoChoice, SolverConfig};

use super::classify::{fit_method, Method};
use super::generators::{gen_cim_model, gen_pmf_model};
use super::metrics::{mae_models, mse_aligned};

/// Largest joint tensor materialised for the MAE column.
pub const DEFAULT_MAE_CAP: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Pmf,
    Cim,
}

impl GeneratorKind {
    pub fn generate(self, rank: usize, card: usize, num_vars: usize, seed: u64) -> Result<CpdModel<f64>> {
        match self {
            GeneratorKind::Pmf => gen_pmf_model(rank, card, num_vars, seed),
            GeneratorKind::Cim => gen_cim_model(rank, card, num_vars, seed),
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeneratorKind::Pmf => "pmf",
            GeneratorKind::Cim => "cim",
        })
    }
}

fn default_mae_cap() -> usize {
    DEFAULT_MAE_CAP
}

fn default_rho() -> RhoChoice {
    RhoChoice::Fixed(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub generator: GeneratorKind,
    pub rank: usize,
    pub cardinality: usize,
    pub num_vars: usize,
    pub sample_sizes: Vec<usize>,
    pub kappa: f64,
    /// Directions per pair; each value gives its own column of cells for the
    /// projection methods and is ignored by the baselines.
    pub projections: Vec<usize>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Directory receiving `cells.csv` and `summary.csv`.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_rho")]
    pub rho: RhoChoice,
    #[serde(default)]
    pub max_outer: Option<usize>,
    #[serde(default)]
    pub max_inner: Option<usize>,
    #[serde(default)]
    pub binning: Binning,
    #[serde(default = "default_mae_cap")]
    pub mae_cap: usize,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = self.rank > 0 && self.cardinality > 0 && self.num_vars >= 3;
        if !positive {
            return Err(Error::domain("rank and cardinality must be positive and at least three variables are needed"));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(Error::domain("sample sizes must be a nonempty list of positive counts"));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(Error::domain("kappa must lie in (0, 1]"));
        }
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::domain("methods and seeds must be nonempty"));
        }
        let needs_m = self.methods.iter().any(|m| m.variant().is_some());
        if needs_m && (self.projections.is_empty() || self.projections.contains(&0)) {
            return Err(Error::domain("projection methods need a nonempty list of positive direction counts"));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    fn solver_config(&self, projections: usize, seed: u64) -> SolverConfig {
        let mut cfg = SolverConfig::new(self.rank, projections.max(1));
        cfg.seed = seed;
        cfg.rho = self.rho.clone();
        cfg.binning = self.binning;
        if let Some(v) = self.max_outer {
            cfg.max_outer = v;
        }
        if let Some(v) = self.max_inner {
            cfg.max_inner = v;
        }
        cfg
    }

    /// Every cell of the grid, in output order.
    fn cells(&self) -> Vec<CellKey> {
        let mut methods = self.methods.clone();
        methods.sort();
        methods.dedup();
        let mut out = Vec::new();
        for &method in &methods {
            let ms: Vec<Option<usize>> = match method.variant() {
                Some(_) => self.projections.iter().map(|&m| Some(m)).collect(),
                None => vec![None],
            };
            for &ns in &self.sample_sizes {
                for &m in &ms {
                    for &seed in &self.seeds {
                        out.push(CellKey { method, num_samples: ns, projections: m, seed });
                    }
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct CellKey {
    method: Method,
    num_samples: usize,
    projections: Option<usize>,
    seed: u64,
}

/// Score of one fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub method: Method,
    pub num_samples: usize,
    pub projections: Option<usize>,
    pub seed: u64,
    /// NaN when the fit failed.
    pub mse: f64,
    pub mae: Option<f64>,
    pub error: Option<String>,
}

/// Seed average of one (method, sample size, directions) cell over successful fits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    pub num_samples: usize,
    pub projections: Option<usize>,
    pub mean_mse: f64,
    pub mean_mae: Option<f64>,
    pub runs: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub cells: Vec<CellResult>,
    pub summary: Vec<SummaryRow>,
}

fn run_cell(spec: &ExperimentSpec, truth: &CpdModel<f64>, key: CellKey) -> CellResult {
    let outcome = (|| -> Result<(f64, Option<f64>)> {
        let data = truth.sample(key.num_samples, spec.kappa, sample_seed(key.seed, key.num_samples))?;
        let cfg = spec.solver_config(key.projections.unwrap_or(1), key.seed);
        let fit = fit_method::<f64>(key.method, &data, &cfg)?;
        let mse = mse_aligned(truth, &fit.model)?;
        let mae = if truth.tensor_len() <= spec.mae_cap as u128 { Some(mae_models(truth, &fit.model, spec.mae_cap)?) } else { None };
        Ok((mse, mae))
    })();
    let (mse, mae, error) = match outcome {
        Ok((mse, mae)) => (mse, mae, None),
        Err(e) => {
            log::warn!("{} Ns={} M={:?} seed={} failed: {e}", key.method, key.num_samples, key.projections, key.seed);
            (f64::NAN, None, Some(e.to_string()))
        }
    };
    CellResult { method: key.method, num_samples: key.num_samples, projections: key.projections, seed: key.seed, mse, mae, error }
}

/// Seed for the sample drawn from the ground truth; shared by every method.
fn sample_seed(seed: u64, num_samples: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ num_samples as u64
}

fn summarise(cells: &[CellResult]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Method, usize, Option<usize>), Vec<&CellResult>> = BTreeMap::new();
    for c in cells {
        groups.entry((c.method, c.num_samples, c.projections)).or_default().push(c);
    }
    groups
        .into_iter()
        .map(|((method, num_samples, projections), rows)| {
            let ok: Vec<&&CellResult> = rows.iter().filter(|c| c.error.is_none()).collect();
            let mean_mse = if ok.is_empty() { f64::NAN } else { ok.iter().map(|c| c.mse).sum::<f64>() / ok.len() as f64 };
            let maes: Vec<f64> = ok.iter().filter_map(|c| c.mae).collect();
            let mean_mae = (!maes.is_empty() && maes.len() == ok.len()).then(|| maes.iter().sum::<f64>() / maes.len() as f64);
            SummaryRow { method, num_samples, projections, mean_mse, mean_mae, runs: ok.len(), failures: rows.len() - ok.len() }
        })
        .collect()
}

/// Runs the grid. Failed fits are recorded with their error and excluded from the means.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let mut seeds = spec.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let truths: BTreeMap<u64, CpdModel<f64>> = seeds
        .iter()
        .map(|&s| Ok((s, spec.generator.generate(spec.rank, spec.cardinality, spec.num_vars, s)?)))
        .collect::<Result<_>>()?;
    let cells: Vec<CellResult> = spec.cells().into_par_iter().map(|key| run_cell(spec, &truths[&key.seed], key)).collect();
    let summary = summarise(&cells);
    let result = ExperimentResult { cells, summary };
    if let Some(dir) = &spec.output {
        result.save(dir)?;
    }
    Ok(result)
}

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ExperimentResult {
    /// One row per fit.
    pub fn write_cells_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "num_samples", "projections", "seed", "mse", "mae", "error"])?;
        for c in &self.cells {
            out.write_record([
                c.method.to_string(),
                c.num_samples.to_string(),
                opt(c.projections),
                c.seed.to_string(),
                c.mse.to_string(),
                opt(c.mae),
                c.error.clone().unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Seed means, one row per (method, sample size, directions).
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "num_samples", "projections", "mean_mse", "mean_mae", "runs", "failures"])?;
        for s in &self.summary {
            out.write_record([
                s.method.to_string(),
                s.num_samples.to_string(),
                opt(s.projections),
                s.mean_mse.to_string(),
                opt(s.mean_mae),
                s.runs.to_string(),
                s.failures.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn cells_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_cells_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    pub fn summary_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_summary_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    /// Writes `cells.csv` and `summary.csv` into `dir`, creating it if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("cells.csv"), self.cells_csv()?)?;
        fs::write(dir.join("summary.csv"), self.summary_csv()?)?;
        Ok(())
    }

    /// Mean MSE of a summary cell.
    pub fn mean_mse(&self, method: Method, num_samples: usize, projections: Option<usize>) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.num_samples == num_samples && s.projections == projections)
            .map(|s| s.mean_mse)
    }

    /// Per-seed MSE of one cell, in seed order.
    pub fn seed_mse(&self, method: Method, num_samples: usize, projections: Option<usize>) -> Vec<(u64, f64)> {
        self.cells
            .iter()
            .filter(|c| c.method == method && c.num_samples == num_samples && c.projections == projections)
            .map(|c| (c.seed, c.mse))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(methods: Vec<Method>) -> ExperimentSpec {
        ExperimentSpec {
            generator: GeneratorKind::Pmf,
            rank: 2,
            cardinality: 3,
            num_vars: 3,
            sample_sizes: vec![200],
            kappa: 1.0,
            projections: vec![12],
            methods,
            seeds: vec![0],
            output: None,
            rho: RhoChoice::Fixed(1.0),
            max_outer: Some(5),
            max_inner: Some(20),
            binning: Binning::default(),
            mae_cap: DEFAULT_MAE_CAP,
        }
    }

    #[test]
    fn single_cell_gives_one_summary_row() {
        let r = run_experiment(&small(vec![Method::JurorA])).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.summary.len(), 1);
        assert!(r.summary[0].mean_mse.is_finite());
        assert!(r.summary[0].mean_mae.is_some());
    }

    #[test]
    fn grid_shape_and_ordering() {
        let mut spec = small(vec![Method::Em, Method::JurorB, Method::Spa]);
        spec.sample_sizes = vec![300, 100];
        spec.projections = vec![6, 12];
        spec.seeds = vec![1, 0];
        spec.max_outer = Some(2);
        let r = run_experiment(&spec).unwrap();
        // juror-b spans two direction counts; the baselines have one column each.
        assert_eq!(r.summary.len(), 2 * 2 + 2 + 2);
        assert_eq!(r.cells.len(), r.summary.len() * 2);
        let keys: Vec<_> = r.cells.iter().map(|c| (c.method, c.num_samples, c.projections, c.seed)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(r.summary[0].method, Method::JurorB);
    }

    #[test]
    fn csv_is_reproducible() {
        let spec = small(vec![Method::JurorC, Method::Spa]);
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a.cells_csv().unwrap(), b.cells_csv().unwrap());
        assert_eq!(a.summary_csv().unwrap(), b.summary_csv().unwrap());
        assert!(a.summary_csv().unwrap().starts_with("method,num_samples,projections,mean_mse"));
    }

    #[test]
    fn failures_are_recorded_not_raised() {
        // Rank above the identifiability bound makes every projection fit fail.
        let mut spec = small(vec![Method::JurorA]);
        spec.rank = 7;
        let r = run_experiment(&spec).unwrap();
        assert!(r.cells[0].mse.is_nan());
        assert!(r.cells[0].error.is_some());
        assert_eq!(r.summary[0].failures, 1);
        assert!(r.summary[0].mean_mse.is_nan());
    }

    #[test]
    fn spec_json_and_validation() {
        let json = r#"{"generator":"cim","rank":2,"cardinality":3,"num_vars":3,"sample_sizes":[50],
            "kappa":0.9,"projections":[10],"methods":["juror-a","em"],"seeds":[3]}"#;
        let spec = ExperimentSpec::from_json(json).unwrap();
        assert_eq!(spec.generator, GeneratorKind::Cim);
        assert_eq!(spec.rho, RhoChoice::Fixed(1.0));
        let mut bad = spec.clone();
        bad.kappa = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = spec.clone();
        bad.projections.clear();
        assert!(bad.validate().is_err());
        bad.methods = vec![Method::Em];
        assert!(bad.validate().is_ok());
        assert!(ExperimentSpec::from_json(r#"{"generator":"pmf"}"#).is_err());
    }

    #[test]
    fn save_writes_both_tables() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = small(vec![Method::Spa]);
        spec.output = Some(dir.path().join("out"));
        let r = run_experiment(&spec).unwrap();
        let s = fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
        assert_eq!(s, r.summary_csv().unwrap());
        assert!(dir.path().join("out/cells.csv").exists());
    }
}
