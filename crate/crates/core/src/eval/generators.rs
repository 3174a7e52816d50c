//! Seeded ground-truth models for synthetic benchmarks.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::CpdModel;
use crate::scalar::Scalar;

fn check(rank: usize, card: usize, num_vars: usize) -> Result<()> {
    if rank == 0 || card == 0 {
        return Err(Error::domain("rank and cardinality must be positive"));
    }
    if num_vars < 2 {
        return Err(Error::domain("a joint model needs at least two variables"));
    }
    Ok(())
}

fn uniform_weights(rng: &mut ChaCha8Rng, rank: usize) -> Array1<f64> {
    let w = Array1::from_shape_fn(rank, |_| rng.random::<f64>());
    let s = w.sum();
    w / s
}

/// Unnormalised `Uniform[0, 1]` matrix.
fn uniform_raw(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>())
}

fn normalized(parts: (Array1<f64>, Vec<Array2<f64>>)) -> Result<CpdModel<f64>> {
    Ok(CpdModel::from_unnormalized(parts.0, parts.1)?.0)
}

/// Factors with i.i.d. `Uniform[0, 1]` entries, columns rescaled to unit sum;
/// `λ` drawn the same way.
pub fn gen_pmf_model<T: Scalar>(rank: usize, card: usize, num_vars: usize, seed: u64) -> Result<CpdModel<T>> {
    check(rank, card, num_vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = (0..num_vars).map(|_| uniform_raw(&mut rng, card, rank)).collect();
    let w = uniform_weights(&mut rng, rank);
    Ok(normalized((w, factors))?.cast())
}

/// Factor columns are sampled sinusoids `c + a·sin(ω u + φ₀)` at `u = 0..I−1`
/// with `a ~ U[0.5, 1]`, `ω ~ U[0.2, 1]`, `φ₀ ~ U[0, 2π]` and `c = a + 0.1`,
/// so every entry is at least 0.1 before normalisation.
pub fn gen_cim_model<T: Scalar>(rank: usize, card: usize, num_vars: usize, seed: u64) -> Result<CpdModel<T>> {
    check(rank, card, num_vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = (0..num_vars)
        .map(|_| {
            let mut a = Array2::zeros((card, rank));
            for f in 0..rank {
                let amp = rng.random_range(0.5..=1.0);
                let omega = rng.random_range(0.2..=1.0);
                let phase = rng.random_range(0.0..2.0 * PI);
                for u in 0..card {
                    a[[u, f]] = amp + 0.1 + amp * (omega * u as f64 + phase).sin();
                }
            }
            a
        })
        .collect();
    let w = uniform_weights(&mut rng, rank);
    Ok(normalized((w, factors))?.cast())
}

/// Like [`gen_pmf_model`] but row `f` of every factor is nonzero only in
/// column `f`, so the pairwise block matrix is separable. Needs `rank ≤ I`.
pub fn gen_separable_model<T: Scalar>(rank: usize, card: usize, num_vars: usize, seed: u64) -> Result<CpdModel<T>> {
    check(rank, card, num_vars)?;
    if rank > card {
        return Err(Error::domain(format!("separable generator needs rank {rank} ≤ cardinality {card}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = (0..num_vars)
        .map(|_| {
            let mut a = uniform_raw(&mut rng, card, rank);
            for f in 0..rank {
                let keep = 0.5 + a[[f, f]];
                a.row_mut(f).fill(0.0);
                a[[f, f]] = keep;
            }
            a
        })
        .collect();
    let w = uniform_weights(&mut rng, rank).mapv(|x| x + 0.5 / rank as f64);
    Ok(normalized((w, factors))?.cast())
}
