//! Euclidean projection onto the probability simplex.

use ndarray::{Array2, ArrayViewMut1, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Projects `v` onto `{w : w ≥ 0, Σw = 1}` in the Euclidean norm.
///
/// Sort-and-threshold: sort descending, find the largest `k` with
/// `u_k > (Σ_{i≤k} u_i − 1)/k`, then shift by that threshold and clip.
pub fn project_on_simplex<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(Error::domain("cannot project an empty vector onto the simplex"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("simplex projection needs finite entries"));
    }
    let theta = threshold(v);
    Ok(v.iter().map(|&x| (x - theta).max(T::zero())).collect())
}

/// In-place variant for a vector view. The caller guarantees finiteness.
pub(crate) fn project_in_place<T: Scalar>(mut v: ArrayViewMut1<'_, T>) {
    let buf: Vec<T> = v.iter().copied().collect();
    let theta = threshold(&buf);
    v.mapv_inplace(|x| (x - theta).max(T::zero()));
}

/// Projects every column of `m` onto the simplex.
pub(crate) fn project_columns<T: Scalar>(m: &mut Array2<T>) {
    for col in m.axis_iter_mut(Axis(1)) {
        project_in_place(col);
    }
}

fn threshold<T: Scalar>(v: &[T]) -> T {
    let mut u: Vec<T> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    let mut cumsum = T::zero();
    let mut theta = T::zero();
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - T::one()) / T::lit((i + 1) as f64);
        if ui - t > T::zero() {
            theta = t;
        }
    }
    theta
}
