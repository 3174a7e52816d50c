//! Small dense linear-algebra kernels over [`Scalar`].

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    lower: Array2<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factors `a`. Returns `None` when a pivot is not strictly positive.
    pub fn factor(a: ArrayView2<'_, T>) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "Cholesky needs a square matrix");
        let mut l = Array2::<T>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[[j, j]] = djj;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / djj;
            }
        }
        Some(Self { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Solves `L Lᵀ x = b`.
    pub fn solve(&self, b: ArrayView1<'_, T>) -> Array1<T> {
        let n = self.dim();
        let l = &self.lower;
        let mut y = b.to_owned();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[[i, k]] * y[k];
            }
            y[i] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[[k, i]] * y[k];
            }
            y[i] = s / l[[i, i]];
        }
        y
    }
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgOutcome<T> {
    pub x: Array1<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// Conjugate gradient for `A x = b` with `A` symmetric positive semi-definite,
/// given as a matrix-vector product. Stops when `‖r‖ ≤ tol·‖b‖`.
pub fn conjugate_gradient<T, F>(apply: F, b: ArrayView1<'_, T>, tol: T, max_iter: usize) -> CgOutcome<T>
where
    T: Scalar,
    F: Fn(ArrayView1<'_, T>) -> Array1<T>,
{
    let n = b.len();
    let mut x = Array1::<T>::zeros(n);
    let mut r = b.to_owned();
    let b_norm = b.dot(&b).sqrt();
    if b_norm == T::zero() {
        return CgOutcome { x, iterations: 0, converged: true };
    }
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    for it in 0..max_iter {
        if rs.sqrt() <= tol * b_norm {
            return CgOutcome { x, iterations: it, converged: true };
        }
        let ap = apply(p.view());
        let denom = p.dot(&ap);
        if !(denom > T::zero()) {
            return CgOutcome { x, iterations: it, converged: false };
        }
        let alpha = rs / denom;
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        let rs_next = r.dot(&r);
        let beta = rs_next / rs;
        Zip::from(&mut p).and(&r).for_each(|pi, &ri| *pi = ri + beta * *pi);
        rs = rs_next;
    }
    let converged = rs.sqrt() <= tol * b_norm;
    CgOutcome { x, iterations: max_iter, converged }
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn spectral_radius<T: Scalar>(a: ArrayView2<'_, T>, iterations: usize) -> T {
    let n = a.nrows();
    if n == 0 {
        return T::zero();
    }
    let mut v = Array1::from_elem(n, T::one() / T::lit(n as f64).sqrt());
    let mut lambda = T::zero();
    for _ in 0..iterations {
        let w = a.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == T::zero() {
            return T::zero();
        }
        lambda = v.dot(&w);
        v = w / norm;
    }
    // Rayleigh quotient underestimates before convergence; pad slightly.
    lambda.max(T::zero()) * T::lit(1.01)
}

/// Frobenius inner product of two equally shaped matrices.
pub fn frobenius_dot<T: Scalar>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> T {
    Zip::from(a).and(b).fold(T::zero(), |acc, &x, &y| acc + x * y)
}

/// Squared Frobenius norm of `a - b`.
pub fn frobenius_dist2<T: Scalar>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> T {
    Zip::from(a).and(b).fold(T::zero(), |acc, &x, &y| {
        let d = x - y;
        acc + d * d
    })
}
