//! Projected gradient descent over `λ` and the factor columns, each kept on
//! its probability simplex, with Armijo backtracking.

use crate::error::{Error, Result};
use crate::model::CpdModel;
use crate::scalar::Scalar;
use crate::simplex::{project_columns, project_in_place};

use super::config::DescentOptions;
use super::objective::Gradient;

/// Sufficient-decrease constant of the Armijo test.
const ARMIJO: f64 = 1e-4;
const GROWTH: f64 = 1.2;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone)]
pub struct DescentOutcome<T> {
    pub model: CpdModel<T>,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn projected_step<T: Scalar>(x: &CpdModel<T>, g: &Gradient<T>, eta: T) -> CpdModel<T> {
    let mut w = x.weights() - &(&g.weights * eta);
    project_in_place(w.view_mut());
    let factors = x
        .factors()
        .iter()
        .zip(&g.factors)
        .map(|(a, ga)| {
            let mut next = a - &(ga * eta);
            project_columns(&mut next);
            next
        })
        .collect();
    CpdModel::from_parts_unchecked(w, factors)
}

/// `⟨g, x − y⟩` summed over every parameter block.
fn directional<T: Scalar>(g: &Gradient<T>, x: &CpdModel<T>, y: &CpdModel<T>) -> T {
    let mut acc = (x.weights() - y.weights()).dot(&g.weights);
    for ((a, b), ga) in x.factors().iter().zip(y.factors()).zip(&g.factors) {
        acc += ((a - b) * ga).sum();
    }
    acc
}

/// Minimises a smooth objective over the product of simplices.
///
/// `value` evaluates the objective; `value_grad` also returns its gradient.
/// Each accepted step satisfies `f(x⁺) ≤ f(x) − 10⁻⁴·⟨∇f, x − x⁺⟩`, so the
/// trace is non-increasing. The step halves on rejection and grows by 1.2
/// after acceptance.
pub fn projected_descent<T, V, G>(
    init: CpdModel<T>,
    opts: &DescentOptions,
    mut value: V,
    mut value_grad: G,
) -> Result<DescentOutcome<T>>
where
    T: Scalar,
    V: FnMut(&CpdModel<T>) -> Result<T>,
    G: FnMut(&CpdModel<T>) -> Result<(T, Gradient<T>)>,
{
    if !(opts.step0 > 0.0) {
        return Err(Error::domain("initial step must be positive"));
    }
    let mut x = init;
    let (mut fx, mut g) = value_grad(&x)?;
    let mut trace = vec![fx.as_f64()];
    let mut eta = T::lit(opts.step0);
    let sigma = T::lit(ARMIJO);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        if !fx.is_finite() {
            return Err(Error::Numerical("objective is not finite".into()));
        }
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = projected_step(&x, &g, eta);
            let decrease = directional(&g, &x, &cand);
            if decrease <= T::zero() {
                // The projected step does not move: x is stationary.
                break;
            }
            let fc = value(&cand)?;
            if fc <= fx - sigma * decrease {
                accepted = Some((cand, fc));
                break;
            }
            eta *= T::lit(0.5);
        }
        let Some((cand, fc)) = accepted else {
            converged = true;
            break;
        };
        iterations += 1;
        let rel = (fx - fc) / fx.abs().max(T::min_positive_value());
        x = cand;
        trace.push(fc.as_f64());
        eta *= T::lit(GROWTH);
        if rel < T::lit(opts.rel_tol) {
            converged = true;
            break;
        }
        let (f_new, g_new) = value_grad(&x)?;
        fx = f_new;
        g = g_new;
    }
    Ok(DescentOutcome { model: x, trace, iterations, converged })
}
