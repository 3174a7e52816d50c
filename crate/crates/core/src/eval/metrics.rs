//! Estimation error metrics, with latent states aligned by optimal assignment.

use ndarray::{Array2, ArrayD};

use crate::error::{Error, Result};
use crate::model::CpdModel;
use crate::scalar::Scalar;

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Returns `p` with row `i` assigned to column `p[i]`. Shortest augmenting
/// paths with row and column potentials, `O(n³)`.
pub fn hungarian(cost: &Array2<f64>) -> Result<Vec<usize>> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(Error::domain("assignment needs a square cost matrix"));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::domain("assignment costs must be finite"));
    }
    // 1-based arrays; index 0 is a virtual root column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    Ok(assignment)
}

fn check_compatible<T: Scalar>(truth: &CpdModel<T>, est: &CpdModel<T>) -> Result<()> {
    if truth.rank() != est.rank() || truth.cardinalities() != est.cardinalities() {
        return Err(Error::domain(format!(
            "models differ in shape: rank {} vs {}, cardinalities {:?} vs {:?}",
            truth.rank(),
            est.rank(),
            truth.cardinalities(),
            est.cardinalities()
        )));
    }
    Ok(())
}

/// `cost[f][g]`: contribution to the MSE of matching true state `f` with estimated state `g`.
fn mse_cost<T: Scalar>(truth: &CpdModel<T>, est: &CpdModel<T>) -> Array2<f64> {
    let f = truth.rank();
    let n = truth.num_vars() as f64;
    Array2::from_shape_fn((f, f), |(a, b)| {
        let mut c = (truth.weights()[a] - est.weights()[b]).as_f64().powi(2);
        for (ta, ea) in truth.factors().iter().zip(est.factors()) {
            let d: f64 = ta.column(a).iter().zip(ea.column(b)).map(|(&x, &y)| (x - y).as_f64().powi(2)).sum();
            c += d / n;
        }
        c
    })
}

/// `est` with its latent states reordered to best match `truth`.
pub fn align<T: Scalar>(truth: &CpdModel<T>, est: &CpdModel<T>) -> Result<CpdModel<T>> {
    check_compatible(truth, est)?;
    let p = hungarian(&mse_cost(truth, est))?;
    est.permute_latent(&p)
}

/// `Σ_n ‖Â_n − A_n‖²_F / N + ‖λ̂ − λ‖²` minimised over latent-state permutations.
pub fn mse_aligned<T: Scalar>(truth: &CpdModel<T>, est: &CpdModel<T>) -> Result<f64> {
    check_compatible(truth, est)?;
    let cost = mse_cost(truth, est);
    let p = hungarian(&cost)?;
    Ok(p.iter().enumerate().map(|(f, &g)| cost[[f, g]]).sum())
}

/// `‖Ẑ − Z‖²_F / ‖Z‖²_F`.
pub fn mae<T: Scalar>(truth: &ArrayD<T>, est: &ArrayD<T>) -> Result<f64> {
    if truth.shape() != est.shape() {
        return Err(Error::domain("tensors differ in shape"));
    }
    let norm: f64 = truth.iter().map(|x| x.as_f64().powi(2)).sum();
    if norm == 0.0 {
        return Err(Error::domain("reference tensor has zero norm"));
    }
    let err: f64 = truth.iter().zip(est.iter()).map(|(&a, &b)| (b - a).as_f64().powi(2)).sum();
    Ok(err / norm)
}

/// [`mae`] on the dense joint tensors of two models, subject to the tensor cap.
pub fn mae_models<T: Scalar>(truth: &CpdModel<T>, est: &CpdModel<T>, cap: usize) -> Result<f64> {
    if truth.cardinalities() != est.cardinalities() {
        return Err(Error::domain("models differ in cardinalities"));
    }
    mae(&truth.full_tensor_capped(cap)?, &est.full_tensor_capped(cap)?)
}
