//! Objectives over projected pairwise marginals and their gradients.
//!
//! Per-pair contributions are computed in parallel and reduced in the stack's
//! pair order, so results do not depend on the thread count.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::factorization::PairMap;
use crate::marginals::ProjectedStack;
use crate::model::CpdModel;
use crate::radon::OperatorBank;
use crate::scalar::Scalar;

/// Gradient with respect to `λ` and every factor, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub weights: Array1<T>,
    pub factors: Vec<Array2<T>>,
}

impl<T: Scalar> Gradient<T> {
    pub fn zeros_like(model: &CpdModel<T>) -> Self {
        Self {
            weights: Array1::zeros(model.rank()),
            factors: model.factors().iter().map(|a| Array2::zeros(a.raw_dim())).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.weights
            .iter()
            .chain(self.factors.iter().flat_map(|a| a.iter()))
            .fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    /// Adds the chain-rule contribution of `∂/∂Z_{j,k} = g` through `Z = A_j D(λ) A_kᵀ`.
    pub(crate) fn accumulate_pair(&mut self, model: &CpdModel<T>, j: usize, k: usize, g: &Array2<T>) {
        let w = model.weights();
        let (aj, ak) = (model.factor(j), model.factor(k));
        let gak = g.dot(ak);
        let gtaj = g.t().dot(aj);
        for f in 0..w.len() {
            let lam = w[f];
            self.weights[f] += aj.column(f).dot(&gak.column(f));
            self.factors[j].column_mut(f).scaled_add(lam, &gak.column(f));
            self.factors[k].column_mut(f).scaled_add(lam, &gtaj.column(f));
        }
    }
}

fn check_shapes<T: Scalar>(model: &CpdModel<T>, stack: &ProjectedStack<T>, bank: &OperatorBank<T>) -> Result<()> {
    let cards = model.cardinalities();
    if stack.num_vars() != cards.len() || bank.cardinalities() != cards.as_slice() {
        return Err(Error::domain("model, projected stack and operators disagree on the variables"));
    }
    Ok(())
}

fn sq_norm<T: Scalar>(a: &Array2<T>) -> T {
    a.iter().map(|&x| x * x).sum()
}

/// Pair, squared residual and optional gradient with respect to its marginal.
type PairTerm<T> = ((usize, usize), T, Option<Array2<T>>);

/// Per retained pair: squared residual and `∂/∂Z = 2·𝔯ᵀ(𝔯(Z) − Y)`.
fn data_terms<T: Scalar>(
    model: &CpdModel<T>,
    stack: &ProjectedStack<T>,
    bank: &OperatorBank<T>,
    with_grad: bool,
) -> Result<Vec<PairTerm<T>>> {
    check_shapes(model, stack, bank)?;
    let blocks: Vec<_> = stack.retained().collect();
    blocks
        .par_iter()
        .map(|b| {
            let (j, k) = b.pair;
            let op = bank.for_pair(j, k);
            let z = model.pairwise_marginal(j, k)?;
            let e = op.forward(z.view())? - &b.y;
            let g = if with_grad { Some(op.adjoint(e.view())? * T::lit(2.0)) } else { None };
            Ok(((j, k), sq_norm(&e), g))
        })
        .collect()
}

/// `J = Σ_{retained j<k} ‖Y_{j,k} − 𝔯(A_j D(λ) A_kᵀ)‖²_F`.
pub fn objective_j<T: Scalar>(model: &CpdModel<T>, stack: &ProjectedStack<T>, bank: &OperatorBank<T>) -> Result<T> {
    Ok(data_terms(model, stack, bank, false)?.into_iter().map(|(_, v, _)| v).sum())
}

/// `J` and its gradient with respect to `λ` and every `A_n`.
pub fn grad_j<T: Scalar>(
    model: &CpdModel<T>,
    stack: &ProjectedStack<T>,
    bank: &OperatorBank<T>,
) -> Result<(T, Gradient<T>)> {
    let terms = data_terms(model, stack, bank, true)?;
    let mut grad = Gradient::zeros_like(model);
    let mut value = T::zero();
    for ((j, k), v, g) in terms {
        value += v;
        grad.accumulate_pair(model, j, k, &g.expect("gradient requested"));
    }
    Ok((value, grad))
}

fn aux_for<T>(z_aux: &PairMap<T>, pair: (usize, usize)) -> Result<&Array2<T>> {
    z_aux
        .get(&pair)
        .ok_or_else(|| Error::domain(format!("no auxiliary marginal for pair {pair:?}")))
}

/// `J₁ = Σ ‖Y − 𝔯(Z)‖² + ρ‖Z − A_j D(λ) A_kᵀ‖²` over retained pairs.
pub fn objective_j1<T: Scalar>(
    model: &CpdModel<T>,
    z_aux: &PairMap<T>,
    stack: &ProjectedStack<T>,
    bank: &OperatorBank<T>,
    rho: T,
) -> Result<T> {
    Ok(grad_j1_impl(model, z_aux, stack, bank, rho, false)?.0)
}

/// `J₁` and its gradient in the model parameters with the auxiliary marginals fixed.
pub fn grad_j1<T: Scalar>(
    model: &CpdModel<T>,
    z_aux: &PairMap<T>,
    stack: &ProjectedStack<T>,
    bank: &OperatorBank<T>,
    rho: T,
) -> Result<(T, Gradient<T>)> {
    let (v, g) = grad_j1_impl(model, z_aux, stack, bank, rho, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn grad_j1_impl<T: Scalar>(
    model: &CpdModel<T>,
    z_aux: &PairMap<T>,
    stack: &ProjectedStack<T>,
    bank: &OperatorBank<T>,
    rho: T,
    with_grad: bool,
) -> Result<(T, Option<Gradient<T>>)> {
    check_shapes(model, stack, bank)?;
    let blocks: Vec<_> = stack.retained().collect();
    let terms = blocks
        .par_iter()
        .map(|b| {
            let (j, k) = b.pair;
            let z = aux_for(z_aux, b.pair)?;
            let op = bank.for_pair(j, k);
            let data = sq_norm(&(op.forward(z.view())? - &b.y));
            let diff = model.pairwise_marginal(j, k)? - z;
            let pen = rho * sq_norm(&diff);
            let g = with_grad.then(|| diff * (T::lit(2.0) * rho));
            Ok(((j, k), data + pen, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = with_grad.then(|| Gradient::zeros_like(model));
    let mut value = T::zero();
    for ((j, k), v, g) in terms {
        value += v;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            acc.accumulate_pair(model, j, k, &g);
        }
    }
    Ok((value, grad))
}
