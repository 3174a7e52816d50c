//! Estimation from projected pairwise marginals in up to three stages.
//!
//! * G1 inverts every projected block without a penalty and factors the
//!   assembled matrix by SPA.
//! * G2 alternates penalised inversions, pulled towards the current model's
//!   marginals, with fresh SPA factorisations.
//! * G3 refines the factors by projected gradient descent.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::factorization::{assemble_lenient, extract_factors, make_split, spa, PairMap, SplitPlan};
use crate::marginals::{all_pairs, estimate_projected, ProjectedStack};
use crate::model::CpdModel;
use crate::radon::{DirectionSet, NormalSolver, OperatorBank};
use crate::scalar::Scalar;

use super::config::{DescentObjective, FitReport, RhoChoice, SolverConfig, StageTrace, Variant};
use super::objective::{grad_j, grad_j1, objective_j, objective_j1};
use super::pgd::projected_descent;

/// A fitted model with its diagnostics.
#[derive(Debug, Clone)]
pub struct Fit<T> {
    pub model: CpdModel<T>,
    pub report: FitReport,
}

/// Operators and projected data built from samples with the configured seed.
pub fn prepare<T: Scalar>(data: &Dataset, cfg: &SolverConfig) -> Result<(OperatorBank<T>, ProjectedStack<T>)> {
    let dirs = DirectionSet::sample(cfg.num_projections, cfg.seed)?;
    let bank = OperatorBank::new(dirs, data.cardinalities(), None, cfg.binning)?;
    let stack = estimate_projected(data, &bank, &all_pairs(data.num_vars()))?;
    Ok((bank, stack))
}

/// Fits from samples. A cross-validated `rho` is chosen by the held-out `J`
/// of fits on the remaining samples; ties go to the earlier grid value.
pub fn juror_data<T: Scalar>(data: &Dataset, cfg: &SolverConfig, variant: Variant) -> Result<Fit<T>> {
    cfg.validate()?;
    if data.num_samples() == 0 {
        return Err(Error::domain("dataset has no samples"));
    }
    let (bank, stack) = prepare::<T>(data, cfg)?;
    let rho = match &cfg.rho {
        RhoChoice::Fixed(r) => return fit_with_rho(&stack, &bank, cfg, variant, *r),
        RhoChoice::CrossValidate(grid) => grid.clone(),
    };
    let parts = data.split(&[1.0 - cfg.holdout_fraction, cfg.holdout_fraction], cfg.seed)?;
    let train = estimate_projected(&parts[0], &bank, &all_pairs(data.num_vars()))?;
    let held = estimate_projected(&parts[1], &bank, &all_pairs(data.num_vars()))?;
    let mut scores = Vec::with_capacity(rho.len());
    let mut warnings = Vec::new();
    for &r in &rho {
        let score = fit_with_rho(&train, &bank, cfg, variant, r)
            .and_then(|fit| objective_j(&fit.model, &held, &bank))
            .map(|v| v.as_f64());
        match score {
            Ok(s) => scores.push((r, s)),
            Err(e) => {
                warnings.push(format!("rho {r} failed during cross-validation: {e}"));
                scores.push((r, f64::INFINITY));
            }
        }
    }
    let best = scores
        .iter()
        .fold(None, |acc: Option<(f64, f64)>, &(r, s)| match acc {
            Some((_, bs)) if bs <= s => acc,
            _ => Some((r, s)),
        })
        .map(|(r, _)| r)
        .expect("nonempty grid");
    let mut fit = fit_with_rho(&stack, &bank, cfg, variant, best)?;
    fit.report.rho_scores = scores;
    for w in warnings {
        fit.report.warn(w);
    }
    Ok(fit)
}

/// Fits from a projected stack with a fixed `rho`.
pub fn juror<T: Scalar>(
    stack: &ProjectedStack<T>,
    bank: &OperatorBank<T>,
    cfg: &SolverConfig,
    variant: Variant,
) -> Result<Fit<T>> {
    cfg.validate()?;
    match cfg.rho {
        RhoChoice::Fixed(r) => fit_with_rho(stack, bank, cfg, variant, r),
        RhoChoice::CrossValidate(_) => Err(Error::domain("cross-validating rho needs samples, not a projected stack")),
    }
}

type SolverCache<'a, T> = BTreeMap<(usize, usize), NormalSolver<'a, T>>;

fn solver_cache<T: Scalar>(bank: &OperatorBank<T>, rho: T) -> Result<SolverCache<'_, T>> {
    bank.operators().map(|(&shape, op)| Ok((shape, op.normal_solver(rho)?))).collect()
}

/// Inverts every retained block; with a model, inversions are pulled towards its marginals.
fn invert_all<T: Scalar>(
    stack: &ProjectedStack<T>,
    bank: &OperatorBank<T>,
    solvers: &SolverCache<'_, T>,
    prior: Option<&CpdModel<T>>,
) -> Result<PairMap<T>> {
    let cards = bank.cardinalities();
    let blocks: Vec<_> = stack.retained().collect();
    let solved = blocks
        .par_iter()
        .map(|b| {
            let (j, k) = b.pair;
            let solver = &solvers[&(cards[j], cards[k])];
            let p = prior.map(|m| m.pairwise_marginal(j, k)).transpose()?;
            Ok((b.pair, solver.solve(b.y.view(), p.as_ref().map(|p| p.view()))?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(solved.into_iter().collect())
}

fn factor_marginals<T: Scalar>(
    z: &PairMap<T>,
    plan: &SplitPlan,
    rank: usize,
    report: Option<&mut FitReport>,
) -> Result<CpdModel<T>> {
    let assembled = assemble_lenient(z, plan)?;
    let extracted = extract_factors(&spa(&assembled, rank)?, plan)?;
    if let Some(report) = report {
        if !assembled.is_complete() {
            let missing: Vec<_> = plan.required_pairs().into_iter().filter(|p| !z.contains_key(p)).collect();
            report.warn(format!("pairs {missing:?} have no jointly observed samples; their blocks are zero"));
        }
        for (n, c) in extracted.degenerate {
            if n == usize::MAX {
                report.warn("recovered weights had no mass and were reset to uniform");
            } else {
                report.warn(format!("column {c} of variable {n} had no mass and was reset to uniform"));
            }
        }
    }
    Ok(extracted.model)
}

fn fit_with_rho<T: Scalar>(
    stack: &ProjectedStack<T>,
    bank: &OperatorBank<T>,
    cfg: &SolverConfig,
    variant: Variant,
    rho: f64,
) -> Result<Fit<T>> {
    if stack.num_vars() != bank.cardinalities().len() {
        return Err(Error::domain("projected stack and operators disagree on the number of variables"));
    }
    let plan = make_split(bank.cardinalities(), cfg.rank)?;
    let rho_t = T::lit(rho);
    let mut report = FitReport::new("juror");
    report.variant = Some(variant);
    report.rho = Some(rho);
    report.config = Some(cfg.clone());
    report.dropped_pairs = stack.dropped_pairs();
    if stack.retained().next().is_none() {
        return Err(Error::domain("no variable pair has jointly observed samples"));
    }

    let clock = Instant::now();
    let mut z = invert_all(stack, bank, &solver_cache(bank, T::zero())?, None)?;
    let mut model = factor_marginals(&z, &plan, cfg.rank, Some(&mut report))?;
    report.stages.push(StageTrace {
        stage: "G1".into(),
        objective: vec![objective_j(&model, stack, bank)?.as_f64()],
        seconds: clock.elapsed().as_secs_f64(),
        iterations: 1,
        converged: true,
    });

    if variant.runs_alternation() && cfg.max_outer > 0 {
        let clock = Instant::now();
        let solvers = solver_cache(bank, rho_t)?;
        let mut prev = objective_j1(&model, &z, stack, bank, rho_t)?;
        let mut best = (prev, model.clone(), z.clone());
        let mut trace = vec![prev.as_f64()];
        let mut converged = false;
        let mut iterations = 0;
        while iterations < cfg.max_outer {
            iterations += 1;
            let z_next = invert_all(stack, bank, &solvers, Some(&model))?;
            let next = match factor_marginals(&z_next, &plan, cfg.rank, None) {
                Ok(m) => m,
                Err(e) => {
                    report.warn(format!("alternation stopped at iteration {iterations}: {e}"));
                    break;
                }
            };
            let j1 = objective_j1(&next, &z_next, stack, bank, rho_t)?;
            trace.push(j1.as_f64());
            if j1 < best.0 {
                best = (j1, next.clone(), z_next.clone());
            }
            let rel = (prev - j1).abs() / prev.abs().max(T::min_positive_value());
            model = next;
            prev = j1;
            if rel < T::lit(cfg.epsilon) {
                converged = true;
                break;
            }
        }
        (_, model, z) = best;
        report.stages.push(StageTrace {
            stage: "G2".into(),
            objective: trace,
            seconds: clock.elapsed().as_secs_f64(),
            iterations,
            converged,
        });
    }

    if variant.runs_descent() && cfg.max_inner > 0 {
        let clock = Instant::now();
        let opts = cfg.descent();
        let out = match cfg.descent_objective {
            DescentObjective::J => projected_descent(
                model,
                &opts,
                |m| objective_j(m, stack, bank),
                |m| grad_j(m, stack, bank),
            )?,
            DescentObjective::J1 => projected_descent(
                model,
                &opts,
                |m| objective_j1(m, &z, stack, bank, rho_t),
                |m| grad_j1(m, &z, stack, bank, rho_t),
            )?,
        };
        model = out.model;
        report.stages.push(StageTrace {
            stage: "G3".into(),
            objective: out.trace,
            seconds: clock.elapsed().as_secs_f64(),
            iterations: out.iterations,
            converged: out.converged,
        });
    }

    report.final_j = Some(objective_j(&model, stack, bank)?.as_f64());
    report.final_j1 = Some(objective_j1(&model, &z, stack, bank, rho_t)?.as_f64());
    report.converged = report.stages.iter().all(|s| s.converged);
    Ok(Fit { model, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn separable(cards: &[usize], rank: usize, seed: u64) -> CpdModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors = cards
            .iter()
            .map(|&i| {
                let mut a = Array2::<f64>::zeros((i, rank));
                for f in 0..rank {
                    a[[f, f]] = 0.5 + rng.random::<f64>();
                    for r in rank..i {
                        a[[r, f]] = rng.random::<f64>();
                    }
                }
                a
            })
            .collect();
        let w = Array1::from_shape_fn(rank, |_| 0.5 + rng.random::<f64>());
        CpdModel::from_unnormalized(w, factors).unwrap().0
    }

    fn exact_setup(seed: u64) -> (CpdModel<f64>, ProjectedStack<f64>, OperatorBank<f64>) {
        let m = separable(&[5, 5, 5, 5], 3, seed);
        let bank = OperatorBank::new(DirectionSet::sample(60, seed).unwrap(), &[5; 4], None, Default::default()).unwrap();
        let stack = ProjectedStack::from_model(&m, &bank, &all_pairs(4)).unwrap();
        (m, stack, bank)
    }

    /// Orders latent columns by weight, which are distinct in these fixtures.
    fn sorted(x: &CpdModel<f64>) -> CpdModel<f64> {
        let mut idx: Vec<usize> = (0..x.rank()).collect();
        idx.sort_by(|&p, &q| x.weights()[p].partial_cmp(&x.weights()[q]).unwrap());
        x.permute_latent(&idx).unwrap()
    }

    fn max_diff(a: &CpdModel<f64>, b: &CpdModel<f64>) -> f64 {
        let mut d = (a.weights() - b.weights()).mapv(f64::abs).fold(0.0, |x: f64, &y| x.max(y));
        for (x, y) in a.factors().iter().zip(b.factors()) {
            d = d.max((x - y).mapv(f64::abs).fold(0.0, |p: f64, &q| p.max(q)));
        }
        d
    }

    #[test]
    fn g1_is_exact_on_population_data() {
        let (m, stack, bank) = exact_setup(1);
        let cfg = SolverConfig { max_outer: 0, max_inner: 0, ..SolverConfig::new(3, 60) };
        let fit = juror(&stack, &bank, &cfg, Variant::A).unwrap();
        assert!(fit.report.final_j.unwrap() < 1e-20);
        assert_eq!(fit.report.stages.len(), 1);
        assert!(max_diff(&sorted(&m), &sorted(&fit.model)) < 1e-8);
    }

    #[test]
    fn stage_composition_identities() {
        let (_, mut stack, bank) = exact_setup(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for b in stack.blocks_mut() {
            b.y.mapv_inplace(|v| (v + 0.01 * rng.random::<f64>()).max(0.0));
        }
        let base = SolverConfig { max_outer: 5, max_inner: 20, ..SolverConfig::new(3, 60) };
        let a_no_outer = juror(&stack, &bank, &SolverConfig { max_outer: 0, ..base.clone() }, Variant::A).unwrap();
        let b = juror(&stack, &bank, &base, Variant::B).unwrap();
        assert_eq!(a_no_outer.model, b.model);
        let a_no_inner = juror(&stack, &bank, &SolverConfig { max_inner: 0, ..base.clone() }, Variant::A).unwrap();
        let c = juror(&stack, &bank, &base, Variant::C).unwrap();
        assert_eq!(a_no_inner.model, c.model);
        let a = juror(&stack, &bank, &base, Variant::A).unwrap();
        let g3 = a.report.stage("G3").unwrap();
        for w in g3.objective.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(a.report.final_j.unwrap() <= a_no_inner.report.final_j.unwrap() + 1e-15);
    }

    #[test]
    fn variable_permutation_permutes_output() {
        let (m, _, _) = exact_setup(3);
        let order = [2, 0, 3, 1];
        let mp = m.permute_vars(&order).unwrap();
        let fit_one = |model: &CpdModel<f64>| {
            let bank = OperatorBank::new(DirectionSet::sample(60, 7).unwrap(), &[5; 4], None, Default::default()).unwrap();
            let stack = ProjectedStack::from_model(model, &bank, &all_pairs(4)).unwrap();
            juror(&stack, &bank, &SolverConfig::new(3, 60), Variant::A).unwrap().model
        };
        let a = fit_one(&m).permute_vars(&order).unwrap();
        let b = fit_one(&mp);
        assert!(max_diff(&sorted(&a), &sorted(&b)) < 1e-6);
    }

    #[test]
    fn cross_validation_needs_samples() {
        let (_, stack, bank) = exact_setup(4);
        let cfg = SolverConfig { rho: RhoChoice::default_grid(), ..SolverConfig::new(3, 60) };
        assert!(juror(&stack, &bank, &cfg, Variant::A).is_err());
    }

    #[test]
    fn data_fit_with_rho_grid_reports_scores() {
        let m = separable(&[4, 4, 4, 4], 2, 5);
        let data = m.sample(3000, 1.0, 5).unwrap();
        let cfg = SolverConfig { rho: RhoChoice::default_grid(), max_outer: 3, max_inner: 20, ..SolverConfig::new(2, 40) };
        let fit = juror_data::<f64>(&data, &cfg, Variant::A).unwrap();
        assert_eq!(fit.report.rho_scores.len(), 3);
        let chosen = fit.report.rho.unwrap();
        let best = fit.report.rho_scores.iter().cloned().fold((0.0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        assert_eq!(chosen, best.0);
    }

    #[test]
    fn rank_above_bound_is_rejected() {
        let (_, stack, bank) = exact_setup(6);
        match juror(&stack, &bank, &SolverConfig::new(11, 60), Variant::A) {
            Err(Error::Identifiability { rank: 11, bound: 10 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
