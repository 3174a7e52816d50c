//! Estimators working directly on histogrammed low-order marginals.

use std::time::Instant;

use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::factorization::{assemble_lenient, extract_factors, make_split, spa, PairMap};
use crate::marginals::{all_triples, estimate_pairwise, estimate_threeway};
use crate::model::CpdModel;
use crate::scalar::Scalar;

use super::config::{DescentOptions, FitReport, StageTrace};
use super::juror::Fit;
use super::objective::Gradient;
use super::pgd::projected_descent;

/// SPA on given pairwise marginals; absent cross-pair blocks are zero-filled with a warning.
pub fn spa_from_marginals<T: Scalar>(marginals: &PairMap<T>, cardinalities: &[usize], rank: usize) -> Result<Fit<T>> {
    let clock = Instant::now();
    let plan = make_split(cardinalities, rank)?;
    let assembled = assemble_lenient(marginals, &plan)?;
    let mut report = FitReport::new("spa");
    if !assembled.is_complete() {
        let missing: Vec<_> = plan.required_pairs().into_iter().filter(|p| !marginals.contains_key(p)).collect();
        report.warn(format!("pairs {missing:?} have no jointly observed samples; their blocks are zero"));
    }
    let fp = spa(&assembled, rank)?;
    let extracted = extract_factors(&fp, &plan)?;
    for (n, c) in &extracted.degenerate {
        report.warn(format!("variable {n} column {c} had no mass and was reset to uniform"));
    }
    report.stages.push(StageTrace {
        stage: "SPA".into(),
        objective: vec![fp.residual.as_f64()],
        seconds: clock.elapsed().as_secs_f64(),
        iterations: 1,
        converged: true,
    });
    report.converged = true;
    Ok(Fit { model: extracted.model, report })
}

/// Histograms the cross-pair marginals and factors them by SPA.
pub fn fit_spa_2way<T: Scalar>(data: &Dataset, rank: usize) -> Result<Fit<T>> {
    let plan = make_split(data.cardinalities(), rank)?;
    let mut marginals = PairMap::new();
    for (j, k) in plan.required_pairs() {
        let est = estimate_pairwise::<T>(data, j, k)?;
        if est.support > 0 {
            marginals.insert((j, k), est.z);
        }
    }
    spa_from_marginals(&marginals, data.cardinalities(), rank)
}

/// Empirical three-way marginals with nonzero support, in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleStack<T> {
    pub blocks: Vec<((usize, usize, usize), Array3<T>)>,
}

impl<T: Scalar> TripleStack<T> {
    pub fn from_data(data: &Dataset) -> Result<Self> {
        let blocks = all_triples(data.num_vars())
            .into_par_iter()
            .map(|(j, k, l)| Ok(((j, k, l), estimate_threeway::<T>(data, j, k, l)?)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|(_, e)| e.support > 0)
            .map(|(t, e)| (t, e.z))
            .collect();
        Ok(Self { blocks })
    }

    pub fn from_model(model: &CpdModel<T>) -> Result<Self> {
        let blocks = all_triples(model.num_vars())
            .into_iter()
            .map(|(j, k, l)| Ok(((j, k, l), model.threeway_marginal(j, k, l)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks })
    }
}

/// Column-wise Kronecker product: column `f` is `a(:,f) ⊗ b(:,f)` with `b` varying fastest.
fn khatri_rao<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> Array2<T> {
    let (ia, f) = a.dim();
    let ib = b.nrows();
    Array2::from_shape_fn((ia * ib, f), |(r, c)| a[[r / ib, c]] * b[[r % ib, c]])
}

/// `Σ ‖Z_{j,k,l} − [λ; A_j, A_k, A_l]‖²_F` over the stack.
pub fn ctf_objective<T: Scalar>(model: &CpdModel<T>, triples: &TripleStack<T>) -> Result<T> {
    Ok(ctf_impl(model, triples, false)?.0)
}

/// The coupled three-way loss and its gradient.
pub fn ctf_gradient<T: Scalar>(model: &CpdModel<T>, triples: &TripleStack<T>) -> Result<(T, Gradient<T>)> {
    let (v, g) = ctf_impl(model, triples, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn ctf_impl<T: Scalar>(model: &CpdModel<T>, triples: &TripleStack<T>, with_grad: bool) -> Result<(T, Option<Gradient<T>>)> {
    let w = model.weights();
    let terms = triples
        .blocks
        .par_iter()
        .map(|&((j, k, l), ref z)| {
            if z.dim() != (model.factor(j).nrows(), model.factor(k).nrows(), model.factor(l).nrows()) {
                return Err(Error::domain(format!("three-way marginal ({j}, {k}, {l}) has the wrong shape")));
            }
            let r = model.threeway_marginal(j, k, l)? - z;
            let value: T = r.iter().map(|&x| x * x).sum();
            if !with_grad {
                return Ok(((j, k, l), value, None));
            }
            let (aj, ak, al) = (model.factor(j), model.factor(k), model.factor(l));
            let (ij, ik, il) = r.dim();
            let two = T::lit(2.0);
            // R unfolded as (I_j·I_k) × I_l.
            let rm = r.into_shape_with_order((ij * ik, il)).expect("contiguous residual");
            let rc = rm.dot(al);
            let kr = khatri_rao(aj, ak);
            let mut ga = (Array2::zeros(aj.raw_dim()), Array2::zeros(ak.raw_dim()));
            let mut gl = rm.t().dot(&kr);
            let mut gw = ndarray::Array1::zeros(w.len());
            for f in 0..w.len() {
                let mf = rc.column(f).to_owned().into_shape_with_order((ij, ik)).expect("block");
                let mb = mf.dot(&ak.column(f));
                ga.0.column_mut(f).assign(&(&mb * (two * w[f])));
                ga.1.column_mut(f).assign(&(mf.t().dot(&aj.column(f)) * (two * w[f])));
                gw[f] = two * aj.column(f).dot(&mb);
                gl.column_mut(f).mapv_inplace(|x| x * two * w[f]);
            }
            Ok(((j, k, l), value, Some((ga.0, ga.1, gl, gw))))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = with_grad.then(|| Gradient::zeros_like(model));
    let mut value = T::zero();
    for ((j, k, l), v, g) in terms {
        value += v;
        if let (Some(acc), Some((gj, gk, gl, gw))) = (grad.as_mut(), g) {
            acc.factors[j] += &gj;
            acc.factors[k] += &gk;
            acc.factors[l] += &gl;
            acc.weights += &gw;
        }
    }
    Ok((value, grad))
}

/// Coupled three-way factorisation by projected gradient from the SPA estimate.
pub fn fit_ctf_3way<T: Scalar>(data: &Dataset, rank: usize, opts: &DescentOptions) -> Result<Fit<T>> {
    if data.num_vars() < 3 {
        return Err(Error::domain("three-way factorisation needs at least three variables"));
    }
    let init = fit_spa_2way::<T>(data, rank)?;
    let triples = TripleStack::<T>::from_data(data)?;
    if triples.blocks.is_empty() {
        return Err(Error::domain("no variable triple has jointly observed samples"));
    }
    let clock = Instant::now();
    let out = projected_descent(
        init.model,
        opts,
        |m| ctf_objective(m, &triples),
        |m| ctf_gradient(m, &triples),
    )?;
    let mut report = init.report;
    report.method = "ctf".into();
    report.stages.push(StageTrace {
        stage: "CTF".into(),
        objective: out.trace,
        seconds: clock.elapsed().as_secs_f64(),
        iterations: out.iterations,
        converged: out.converged,
    });
    report.converged = out.converged;
    Ok(Fit { model: out.model, report })
}
