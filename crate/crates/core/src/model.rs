//! Rank-`F` CPD representation of a joint PMF and exact queries on it.
//!
//! The model is `Σ_f λ(f) A_1(:,f) ⊗ … ⊗ A_N(:,f)`; equivalently a naive-Bayes
//! model with a hidden state `H ~ λ` and `X_n | H=f ~ A_n(:,f)`.

use ndarray::{Array1, Array2, Array3, ArrayD, Axis, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default cap on the number of entries of a dense joint tensor.
pub const DEFAULT_TENSOR_CAP: usize = 10_000_000;

/// Joint PMF in CPD form: weights `λ` (length `F`) and per-variable
/// column-stochastic factors `A_n` (`I_n × F`).
#[derive(Debug, Clone, PartialEq)]
pub struct CpdModel<T> {
    weights: Array1<T>,
    factors: Vec<Array2<T>>,
}

impl<T: Scalar> CpdModel<T> {
    /// Validates and wraps the parts. Negative round-off smaller than the
    /// clamp tolerance is set to zero first.
    pub fn new(mut weights: Array1<T>, mut factors: Vec<Array2<T>>) -> Result<Self> {
        let f = weights.len();
        if f == 0 {
            return Err(Error::domain("rank must be at least 1"));
        }
        if factors.len() < 2 {
            return Err(Error::domain("a joint model needs at least two variables"));
        }
        let tol = T::sum_tolerance();
        clamp_round_off(weights.view_mut());
        check_simplex(weights.iter().copied(), tol).map_err(|e| Error::domain(format!("weights: {e}")))?;
        for (n, a) in factors.iter_mut().enumerate() {
            if a.ncols() != f {
                return Err(Error::domain(format!("factor {n} has {} columns, expected {f}", a.ncols())));
            }
            if a.nrows() == 0 {
                return Err(Error::domain(format!("factor {n} has no rows")));
            }
            clamp_round_off(a.view_mut());
            for (c, col) in a.columns().into_iter().enumerate() {
                check_simplex(col.iter().copied(), tol)
                    .map_err(|e| Error::domain(format!("factor {n} column {c}: {e}")))?;
            }
        }
        Ok(Self { weights, factors })
    }

    /// Builds a valid model from arbitrary nonnegative-ish parts: negatives are
    /// clipped to zero before every column and the weights are rescaled to sum to one. A column (or weight
    /// vector) with no mass becomes uniform; the affected `(variable, column)`
    /// pairs are returned alongside, with `usize::MAX` standing for `λ`.
    pub fn from_unnormalized(
        mut weights: Array1<T>,
        mut factors: Vec<Array2<T>>,
    ) -> Result<(Self, Vec<(usize, usize)>)> {
        let mut degenerate = Vec::new();
        if weights.iter().chain(factors.iter().flat_map(|a| a.iter())).any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite factor entries".into()));
        }
        if !normalize_in_place(weights.view_mut()) {
            degenerate.push((usize::MAX, 0));
        }
        for (n, a) in factors.iter_mut().enumerate() {
            for (c, col) in a.axis_iter_mut(Axis(1)).enumerate() {
                if !normalize_in_place(col) {
                    degenerate.push((n, c));
                }
            }
        }
        Ok((Self::new(weights, factors)?, degenerate))
    }

    /// Wraps parts without validation; callers keep the simplex invariants.
    pub(crate) fn from_parts_unchecked(weights: Array1<T>, factors: Vec<Array2<T>>) -> Self {
        Self { weights, factors }
    }

    /// Model with uniform weights and uniform factor columns.
    pub fn uniform(cardinalities: &[usize], rank: usize) -> Result<Self> {
        let w = Array1::from_elem(rank, T::one() / T::lit(rank as f64));
        let factors = cardinalities
            .iter()
            .map(|&i| Array2::from_elem((i, rank), T::one() / T::lit(i as f64)))
            .collect();
        Self::new(w, factors)
    }

    pub fn num_vars(&self) -> usize {
        self.factors.len()
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.factors.iter().map(|a| a.nrows()).collect()
    }

    pub fn weights(&self) -> &Array1<T> {
        &self.weights
    }

    pub fn factor(&self, n: usize) -> &Array2<T> {
        &self.factors[n]
    }

    pub fn factors(&self) -> &[Array2<T>] {
        &self.factors
    }

    pub fn into_parts(self) -> (Array1<T>, Vec<Array2<T>>) {
        (self.weights, self.factors)
    }

    /// Number of entries in the dense joint tensor.
    pub fn tensor_len(&self) -> u128 {
        self.factors.iter().map(|a| a.nrows() as u128).product()
    }

    fn check_var(&self, n: usize) -> Result<()> {
        if n >= self.num_vars() {
            return Err(Error::domain(format!("variable {n} out of range")));
        }
        Ok(())
    }

    /// `P(X = x)` for a fully observed assignment.
    pub fn eval_joint(&self, x: &[usize]) -> Result<T> {
        if x.len() != self.num_vars() {
            return Err(Error::domain("assignment length does not match the model"));
        }
        let obs: Vec<Option<usize>> = x.iter().copied().map(Some).collect();
        self.eval_marginalized(&obs)
    }

    /// Probability of the observed part of `x`, summing out missing variables.
    pub fn eval_marginalized(&self, x: &[Option<usize>]) -> Result<T> {
        if x.len() != self.num_vars() {
            return Err(Error::domain("assignment length does not match the model"));
        }
        for (n, (xi, a)) in x.iter().zip(&self.factors).enumerate() {
            if let Some(i) = xi {
                if *i >= a.nrows() {
                    return Err(Error::domain(format!("category {i} out of range for variable {n}")));
                }
            }
        }
        let mut total = T::zero();
        for f in 0..self.rank() {
            let mut p = self.weights[f];
            for (xi, a) in x.iter().zip(&self.factors) {
                if let Some(i) = xi {
                    p *= a[[*i, f]];
                }
            }
            total += p;
        }
        Ok(total)
    }

    /// `A_n λ`, the marginal PMF of variable `n`.
    pub fn one_way_marginal(&self, n: usize) -> Result<Array1<T>> {
        self.check_var(n)?;
        Ok(self.factors[n].dot(&self.weights))
    }

    /// `A_j D(λ) A_kᵀ`.
    pub fn pairwise_marginal(&self, j: usize, k: usize) -> Result<Array2<T>> {
        self.check_var(j)?;
        self.check_var(k)?;
        if j == k {
            return Err(Error::domain("pairwise marginal needs two distinct variables"));
        }
        let scaled = &self.factors[j] * &self.weights.view().insert_axis(Axis(0));
        Ok(scaled.dot(&self.factors[k].t()))
    }

    /// `Σ_f λ(f) A_j(:,f) ⊗ A_k(:,f) ⊗ A_l(:,f)`.
    pub fn threeway_marginal(&self, j: usize, k: usize, l: usize) -> Result<Array3<T>> {
        for v in [j, k, l] {
            self.check_var(v)?;
        }
        if j == k || j == l || k == l {
            return Err(Error::domain("three-way marginal needs three distinct variables"));
        }
        let (aj, ak, al) = (&self.factors[j], &self.factors[k], &self.factors[l]);
        let mut out = Array3::zeros((aj.nrows(), ak.nrows(), al.nrows()));
        for f in 0..self.rank() {
            let w = self.weights[f];
            for a in 0..aj.nrows() {
                let wa = w * aj[[a, f]];
                for b in 0..ak.nrows() {
                    let wab = wa * ak[[b, f]];
                    for c in 0..al.nrows() {
                        out[[a, b, c]] += wab * al[[c, f]];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Dense joint tensor, refusing when it exceeds [`DEFAULT_TENSOR_CAP`] entries.
    pub fn full_tensor(&self) -> Result<ArrayD<T>> {
        self.full_tensor_capped(DEFAULT_TENSOR_CAP)
    }

    pub fn full_tensor_capped(&self, cap: usize) -> Result<ArrayD<T>> {
        let entries = self.tensor_len();
        if entries > cap as u128 {
            return Err(Error::Size { entries, cap });
        }
        let shape = self.cardinalities();
        let mut out = vec![T::zero(); entries as usize];
        let mut term: Vec<T> = Vec::with_capacity(entries as usize);
        let mut next: Vec<T> = Vec::with_capacity(entries as usize);
        for f in 0..self.rank() {
            term.clear();
            term.push(self.weights[f]);
            for a in &self.factors {
                next.clear();
                for &v in &term {
                    next.extend(a.column(f).iter().map(|&x| v * x));
                }
                std::mem::swap(&mut term, &mut next);
            }
            for (o, &t) in out.iter_mut().zip(&term) {
                *o += t;
            }
        }
        Ok(ArrayD::from_shape_vec(IxDyn(&shape), out).expect("shape matches entry count"))
    }

    /// Draws `count` samples: `H ~ λ`, then each `X_n ~ A_n(:,H)`; each entry
    /// is then hidden independently with probability `1 − kappa`.
    ///
    /// The mask draw happens for every entry regardless of `kappa`, so equal
    /// seeds give nested masks as `kappa` decreases.
    pub fn sample(&self, count: usize, kappa: f64, seed: u64) -> Result<Dataset> {
        if count == 0 {
            return Err(Error::domain("sample count must be positive"));
        }
        if !(kappa > 0.0 && kappa <= 1.0) {
            return Err(Error::domain("kappa must lie in (0, 1]"));
        }
        let weight_cdf = cdf(self.weights.iter().map(|w| w.as_f64()));
        let factor_cdfs: Vec<Vec<Vec<f64>>> = self
            .factors
            .iter()
            .map(|a| a.columns().into_iter().map(|c| cdf(c.iter().map(|x| x.as_f64()))).collect())
            .collect();
        let n = self.num_vars();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut codes = Vec::with_capacity(count * n);
        for _ in 0..count {
            let h = draw(&weight_cdf, rng.random());
            for cdfs in &factor_cdfs {
                let x = draw(&cdfs[h], rng.random());
                let keep = rng.random::<f64>() < kappa;
                codes.push(if keep { x as u32 } else { u32::MAX });
            }
        }
        let names = (0..n).map(|i| format!("x{i}")).collect();
        Ok(Dataset::from_codes(names, self.cardinalities(), codes))
    }

    /// Reorders latent states: state `g` of the result is state `perm[g]` of `self`.
    pub fn permute_latent(&self, perm: &[usize]) -> Result<Self> {
        let f = self.rank();
        let mut seen = vec![false; f];
        if perm.len() != f || perm.iter().any(|&p| p >= f || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::domain("not a permutation of the latent states"));
        }
        let weights = perm.iter().map(|&p| self.weights[p]).collect();
        let factors = self.factors.iter().map(|a| a.select(Axis(1), perm)).collect();
        Ok(Self { weights, factors })
    }

    /// Reorders variables: variable `v` of the result is variable `order[v]` of `self`.
    pub fn permute_vars(&self, order: &[usize]) -> Result<Self> {
        let n = self.num_vars();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::domain("not a permutation of the variables"));
        }
        let factors = order.iter().map(|&v| self.factors[v].clone()).collect();
        Ok(Self { weights: self.weights.clone(), factors })
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> CpdModel<U> {
        let conv = |x: &T| U::lit(x.as_f64());
        CpdModel { weights: self.weights.map(conv), factors: self.factors.iter().map(|a| a.map(conv)).collect() }
    }
}

fn clamp_round_off<T: Scalar, D: ndarray::Dimension>(mut v: ndarray::ArrayViewMut<'_, T, D>) {
    let tol = T::clamp_tolerance();
    v.mapv_inplace(|x| if x < T::zero() && x > -tol { T::zero() } else { x });
}

fn check_simplex<T: Scalar>(values: impl Iterator<Item = T>, tol: T) -> std::result::Result<(), String> {
    let mut sum = T::zero();
    for x in values {
        if !x.is_finite() || x < T::zero() {
            return Err(format!("entry {x} is negative or non-finite"));
        }
        sum += x;
    }
    if (sum - T::one()).abs() > tol {
        return Err(format!("entries sum to {sum}, not 1"));
    }
    Ok(())
}

/// Clips negatives and rescales to unit sum; falls back to uniform (returning
/// `false`) when nothing positive remains.
pub(crate) fn normalize_in_place<T: Scalar, D: ndarray::Dimension>(mut v: ndarray::ArrayViewMut<'_, T, D>) -> bool {
    v.mapv_inplace(|x| x.max(T::zero()));
    let s: T = v.iter().copied().sum();
    if s > T::zero() && s.is_finite() {
        v.mapv_inplace(|x| x / s);
        true
    } else {
        let u = T::one() / T::lit(v.len() as f64);
        v.fill(u);
        false
    }
}

fn cdf(p: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    p.map(|x| {
        acc += x;
        acc
    })
    .collect()
}

fn draw(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().expect("non-empty");
    cdf.partition_point(|&c| c <= u * total).min(cdf.len() - 1)
}
