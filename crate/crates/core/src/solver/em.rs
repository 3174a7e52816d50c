//! Maximum-likelihood fitting of the latent-class model by EM from a random start.
//!
//! Missing entries drop out of the likelihood. Sufficient statistics are
//! accumulated over fixed-size chunks of samples in parallel and summed in
//! chunk order, so the result is independent of the thread count.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::CpdModel;
use crate::scalar::Scalar;

use super::config::{FitReport, StageTrace};
use super::juror::Fit;

const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop when the relative log-likelihood improvement falls below this.
    pub tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { max_iter: 500, tol: 1e-6 }
    }
}

fn dirichlet_ones(rng: &mut ChaCha8Rng, len: usize) -> Array1<f64> {
    let draws = Array1::from_shape_fn(len, |_| rng.sample::<f64, _>(Exp1));
    let s = draws.sum();
    draws / s
}

/// Seeded random start: weights mix uniform and `Dirichlet(1)` equally;
/// factor columns are `Dirichlet(1)`.
pub fn random_start(cardinalities: &[usize], rank: usize, seed: u64) -> Result<CpdModel<f64>> {
    if rank == 0 {
        return Err(Error::domain("rank must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = dirichlet_ones(&mut rng, rank);
    let weights = noise.mapv(|x| 0.5 / rank as f64 + 0.5 * x);
    let factors = cardinalities
        .iter()
        .map(|&i| {
            let mut a = Array2::zeros((i, rank));
            for f in 0..rank {
                a.column_mut(f).assign(&dirichlet_ones(&mut rng, i));
            }
            a
        })
        .collect();
    CpdModel::new(weights, factors)
}

struct Stats {
    loglik: f64,
    weights: Array1<f64>,
    factors: Vec<Array2<f64>>,
}

impl Stats {
    fn zeros(cards: &[usize], rank: usize) -> Self {
        Self {
            loglik: 0.0,
            weights: Array1::zeros(rank),
            factors: cards.iter().map(|&i| Array2::zeros((i, rank))).collect(),
        }
    }

    fn add(&mut self, other: &Stats) {
        self.loglik += other.loglik;
        self.weights += &other.weights;
        for (a, b) in self.factors.iter_mut().zip(&other.factors) {
            *a += b;
        }
    }
}

fn e_step(data: &Dataset, log_w: &Array1<f64>, log_a: &[Array2<f64>]) -> Stats {
    let cards = data.cardinalities();
    let rank = log_w.len();
    let n = data.num_samples();
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let partials: Vec<Stats> = starts
        .par_iter()
        .map(|&start| {
            let mut st = Stats::zeros(cards, rank);
            let mut lp = vec![0.0; rank];
            for t in start..(start + CHUNK).min(n) {
                lp.copy_from_slice(log_w.as_slice().expect("contiguous"));
                for (v, la) in log_a.iter().enumerate() {
                    if let Some(x) = data.get(t, v) {
                        for (f, l) in lp.iter_mut().enumerate() {
                            *l += la[[x, f]];
                        }
                    }
                }
                let mx = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + lp.iter().map(|&l| (l - mx).exp()).sum::<f64>().ln();
                st.loglik += lse;
                for f in 0..rank {
                    let q = (lp[f] - lse).exp();
                    st.weights[f] += q;
                    for (v, acc) in st.factors.iter_mut().enumerate() {
                        if let Some(x) = data.get(t, v) {
                            acc[[x, f]] += q;
                        }
                    }
                }
            }
            st
        })
        .collect();
    let mut total = Stats::zeros(cards, rank);
    for p in &partials {
        total.add(p);
    }
    total
}

/// EM from [`random_start`]. The log-likelihood trace is non-decreasing up
/// to round-off; the returned model is the one whose likelihood was last
/// evaluated.
pub fn fit_em<T: Scalar>(data: &Dataset, rank: usize, seed: u64, opts: EmOptions) -> Result<Fit<T>> {
    if data.num_samples() == 0 {
        return Err(Error::domain("dataset has no samples"));
    }
    let clock = Instant::now();
    let cards = data.cardinalities().to_vec();
    let start = random_start(&cards, rank, seed)?;
    let (mut w, mut a) = start.into_parts();
    let t = data.num_samples() as f64;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let log_w = w.mapv(f64::ln);
        let log_a: Vec<Array2<f64>> = a.iter().map(|x| x.mapv(f64::ln)).collect();
        let st = e_step(data, &log_w, &log_a);
        if !st.loglik.is_finite() {
            return Err(Error::Numerical("log-likelihood is not finite".into()));
        }
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            trace.push(st.loglik);
            if (st.loglik - prev) / prev.abs().max(f64::MIN_POSITIVE) < opts.tol {
                converged = true;
                break;
            }
        } else {
            trace.push(st.loglik);
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;
        w = &st.weights / t;
        for (n, (an, cn)) in a.iter_mut().zip(&st.factors).enumerate() {
            for f in 0..rank {
                let s = cn.column(f).sum();
                if s > 0.0 {
                    an.column_mut(f).assign(&(&cn.column(f) / s));
                } else {
                    log::debug!("variable {n} column {f} received no posterior mass; kept");
                }
            }
        }
    }
    let model = CpdModel::new(w, a)?.cast::<T>();
    let mut report = FitReport::new("em");
    report.stages.push(StageTrace {
        stage: "EM".into(),
        objective: trace,
        seconds: clock.elapsed().as_secs_f64(),
        iterations,
        converged,
    });
    report.converged = converged;
    Ok(Fit { model, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_start_is_valid_and_seeded() {
        let a = random_start(&[3, 4], 3, 1).unwrap();
        let b = random_start(&[3, 4], 3, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, random_start(&[3, 4], 3, 2).unwrap());
        assert!(a.weights().iter().all(|&w| w >= 0.5 / 3.0));
    }

    #[test]
    fn rank_one_gives_empirical_marginals() {
        let d = Dataset::new(
            vec![2, 3],
            &[vec![Some(0), Some(2)], vec![Some(1), None], vec![Some(1), Some(0)], vec![None, Some(2)]],
        )
        .unwrap();
        let fit = fit_em::<f64>(&d, 1, 3, EmOptions::default()).unwrap();
        assert_eq!(fit.model.weights()[0], 1.0);
        assert!((fit.model.factor(0)[[1, 0]] - 2.0 / 3.0).abs() < 1e-15);
        assert!((fit.model.factor(1)[[2, 0]] - 2.0 / 3.0).abs() < 1e-15);
        assert!(fit.report.converged);
        assert!(fit.report.stages[0].iterations <= 2);
    }

    #[test]
    fn loglik_is_monotone() {
        for seed in 0..20 {
            let truth = random_start(&[3, 4, 3, 2], 3, 100 + seed).unwrap();
            let data = truth.sample(300, 0.8, seed).unwrap();
            let fit = fit_em::<f64>(&data, 3, seed, EmOptions { max_iter: 60, tol: 1e-12 }).unwrap();
            for w in fit.report.stages[0].objective.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "seed {seed}: {} then {}", w[0], w[1]);
            }
        }
    }
}
