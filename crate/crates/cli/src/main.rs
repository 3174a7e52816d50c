use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use radon_pmf::data::{encode_strings, Schema};
use radon_pmf::eval::{config_hash, mae_models, mse_aligned, GeneratorKind, Provenance, RankSelection};
use radon_pmf::solver::{DescentObjective, RhoChoice};
use radon_pmf::{
    accuracy, classify_map, cross_validate_rank, load_csv, run_experiment, CpdModel, Dataset, Error, ExperimentSpec,
    Method, ModelFile, Scalar, SolverConfig,
};

#[derive(Parser)]
#[command(name = "radon-pmf", version, about = "Low-rank joint PMF estimation from random pairwise projections")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Mse,
    Mae,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic ground-truth model and samples from it.
    Gen {
        #[arg(long, value_enum, default_value = "pmf")]
        generator: Generator,
        #[arg(long)]
        rank: usize,
        #[arg(long)]
        cardinality: usize,
        #[arg(long)]
        num_vars: usize,
        #[arg(long)]
        samples: usize,
        /// Probability that each entry is observed.
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        model_out: PathBuf,
        #[arg(long)]
        data_out: PathBuf,
    },
    /// Fit a model to an integer-coded CSV.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Column moved to the last position before fitting.
        #[arg(long)]
        label_col: Option<String>,
        #[arg(long, default_value = "juror-a")]
        method: Method,
        #[arg(long)]
        rank: usize,
        #[arg(long, default_value_t = 200)]
        projections: usize,
        /// Penalty weight, or `cv` to pick it from a small grid on held-out samples.
        #[arg(long, default_value = "1")]
        rho: String,
        /// Hide each observed entry independently with probability 1 - kappa before fitting.
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        max_outer: usize,
        #[arg(long, default_value_t = 200)]
        max_inner: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value = "J")]
        g3_objective: DescentObjective,
        #[arg(long, value_enum, default_value = "f64")]
        precision: Precision,
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON fit report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score an estimated model against the ground truth.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value = "mse")]
        metric: Metric,
        /// Largest dense tensor materialised for MAE.
        #[arg(long, default_value_t = 1 << 24)]
        cap: usize,
    },
    /// MAP-classify samples whose label is the model's last variable.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        label_col: String,
        /// Write one predicted label code per sample.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Choose the rank by validation accuracy.
    CvRank {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        label_col: String,
        /// Comma-separated candidate ranks.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<usize>,
        #[arg(long, default_value = "juror-a")]
        method: Method,
        #[arg(long, default_value_t = 200)]
        projections: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a benchmark grid described by a JSON spec.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the spec's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Integer-code a CSV of string categories.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        schema_out: PathBuf,
        #[arg(long)]
        label_col: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    Pmf,
    Cim,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for bad arguments, 2 for unreadable or inconsistent data, 3 for numerical failure.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Numerical(_) | Error::Degenerate { .. }) => 3,
        Some(Error::Domain(_) | Error::Identifiability { .. } | Error::Size { .. }) => 1,
        Some(_) => 2,
        None if e.chain().any(|c| c.is::<io::Error>()) => 2,
        None => 1,
    }
}

fn load_schema(path: Option<&Path>, label: Option<&str>) -> Result<Schema> {
    let mut schema = match path {
        Some(p) => Schema::load(p).with_context(|| format!("reading schema {}", p.display()))?,
        None => Schema::default(),
    };
    if let Some(l) = label {
        schema.label = Some(l.to_owned());
    }
    Ok(schema)
}

fn load_data(path: &Path, schema: &Schema) -> Result<Dataset> {
    load_csv(path, schema).with_context(|| format!("reading {}", path.display()))
}

fn load_model(path: &Path) -> Result<CpdModel<f64>> {
    let file = ModelFile::load(path).with_context(|| format!("reading model {}", path.display()))?;
    Ok(file.to_model()?)
}

fn parse_rho(s: &str) -> Result<RhoChoice> {
    if s.eq_ignore_ascii_case("cv") {
        return Ok(RhoChoice::default_grid());
    }
    let v: f64 = s.parse().map_err(|_| Error::Domain(format!("--rho expects a number or `cv`, got {s:?}")))?;
    Ok(RhoChoice::Fixed(v))
}

/// Forces every variable's cardinality to the model's so that codes unseen in `data` still line up.
fn align_cards(schema: &mut Schema, data_names: &[String], model: &CpdModel<f64>) {
    for (name, &c) in data_names.iter().zip(model.cardinalities().iter()) {
        schema.cardinalities.insert(name.clone(), c);
    }
}

fn header_names(path: &Path) -> Result<Vec<String>> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(rd.headers()?.iter().map(|h| h.trim().to_owned()).collect())
}

/// Loads a labelled dataset laid out to match `model`: label last, cardinalities taken from the model.
fn load_for_model(path: &Path, schema: Option<&Path>, label: &str, model: &CpdModel<f64>) -> Result<Dataset> {
    let mut schema = load_schema(schema, Some(label))?;
    let mut names = header_names(path)?;
    let pos = names.iter().position(|n| n == label).ok_or_else(|| Error::Schema(format!("label column '{label}' not found")))?;
    let l = names.remove(pos);
    names.push(l);
    if names.len() != model.num_vars() {
        bail!(Error::Schema(format!("data has {} columns but the model has {} variables", names.len(), model.num_vars())));
    }
    align_cards(&mut schema, &names, model);
    load_data(path, &schema)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen { generator, rank, cardinality, num_vars, samples, kappa, seed, model_out, data_out } => {
            let kind = match generator {
                Generator::Pmf => GeneratorKind::Pmf,
                Generator::Cim => GeneratorKind::Cim,
            };
            let model = kind.generate(rank, cardinality, num_vars, seed)?;
            let data = model.sample(samples, kappa, seed)?;
            let prov = Provenance { method: format!("gen-{kind}"), config_hash: config_hash(&(kind, rank, cardinality, num_vars))?, seed: Some(seed) };
            ModelFile::from_model(&model, prov).save(&model_out)?;
            data.save_csv(&data_out)?;
            log::info!("wrote {} and {}", model_out.display(), data_out.display());
        }
        Command::Estimate {
            data,
            schema,
            label_col,
            method,
            rank,
            projections,
            rho,
            kappa,
            seed,
            max_outer,
            max_inner,
            tol,
            g3_objective,
            precision,
            out,
            report,
        } => {
            let schema = load_schema(schema.as_deref(), label_col.as_deref())?;
            let mut ds = load_data(&data, &schema)?;
            if kappa < 1.0 {
                ds = ds.mask(kappa, seed)?;
            }
            let mut cfg = SolverConfig::new(rank, projections);
            cfg.rho = parse_rho(&rho)?;
            cfg.seed = seed;
            cfg.max_outer = max_outer;
            cfg.max_inner = max_inner;
            cfg.epsilon = tol;
            cfg.descent_objective = g3_objective;
            cfg.validate()?;
            let prov = Provenance { method: method.to_string(), config_hash: config_hash(&cfg)?, seed: Some(seed) };
            let (file, fit_report) = match precision {
                Precision::F64 => fit_to_file::<f64>(method, &ds, &cfg, prov)?,
                Precision::F32 => fit_to_file::<f32>(method, &ds, &cfg, prov)?,
            };
            file.save(&out)?;
            for w in &fit_report.warnings {
                log::warn!("{w}");
            }
            if let Some(path) = report {
                fs::write(&path, fit_report.to_json()? + "\n")?;
            }
            println!(
                "{} rank {} converged {} final J {}",
                method,
                rank,
                fit_report.converged,
                fit_report.final_j.map(|j| format!("{j:.6e}")).unwrap_or_else(|| "n/a".into())
            );
        }
        Command::Evaluate { model, truth, metric, cap } => {
            let est = load_model(&model)?;
            let truth = load_model(&truth)?;
            let value = match metric {
                Metric::Mse => mse_aligned(&truth, &est)?,
                Metric::Mae => mae_models(&truth, &est, cap)?,
            };
            println!("{value:.10e}");
        }
        Command::Classify { model, data, schema, label_col, predictions } => {
            let m = load_model(&model)?;
            let ds = load_for_model(&data, schema.as_deref(), &label_col, &m)?;
            let acc = accuracy(&m, &ds)?;
            if let Some(path) = predictions {
                let mut w = BufWriter::new(File::create(&path)?);
                writeln!(w, "{label_col}")?;
                let label = ds.num_vars() - 1;
                for row in ds.rows() {
                    writeln!(w, "{}", classify_map(&m, &row[..label])?)?;
                }
                w.flush()?;
            }
            println!("accuracy {acc:.6}");
        }
        Command::CvRank { train, val, schema, label_col, grid, method, projections, seed } => {
            let schema = load_schema(schema.as_deref(), Some(&label_col))?;
            let tr = load_data(&train, &schema)?;
            // Validation codes are interpreted with the training cardinalities.
            let mut val_schema = Schema::of(&tr, Some(label_col.clone()));
            val_schema.categories = schema.categories.clone();
            let va = load_data(&val, &val_schema)?;
            let mut cfg = SolverConfig::new(grid.iter().copied().max().unwrap_or(1), projections);
            cfg.seed = seed;
            let sel: RankSelection = cross_validate_rank::<f64>(&tr, &va, &grid, method, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&sel)?);
        }
        Command::Experiment { spec, output } => {
            let mut spec = ExperimentSpec::load(&spec).with_context(|| format!("reading spec {}", spec.display()))?;
            if output.is_some() {
                spec.output = output;
            }
            let result = run_experiment(&spec)?;
            print!("{}", result.summary_csv()?);
            let failed = result.cells.iter().filter(|c| c.error.is_some()).count();
            if failed > 0 {
                log::warn!("{failed} of {} fits failed; see cells.csv", result.cells.len());
            }
        }
        Command::Encode { input, output, schema_out, label_col } => {
            let file = File::open(&input).with_context(|| format!("reading {}", input.display()))?;
            let (ds, schema) = encode_strings(file, label_col)?;
            ds.save_csv(&output)?;
            schema.save(&schema_out)?;
            log::info!("encoded {} samples of {} variables", ds.num_samples(), ds.num_vars());
        }
    }
    Ok(())
}

fn fit_to_file<T: Scalar>(
    method: Method,
    data: &Dataset,
    cfg: &SolverConfig,
    prov: Provenance,
) -> Result<(ModelFile, radon_pmf::FitReport)> {
    let fit = radon_pmf::eval::fit_method::<T>(method, data, cfg)?;
    Ok((ModelFile::from_model(&fit.model, prov), fit.report))
}
