//! Empirical marginals from samples with missing entries.
//!
//! A sample contributes to a pair (or triple) only when every involved
//! variable is observed. Projected histograms reuse the forward operator's
//! cell-to-bin map, so an empirical stack and `𝔯(Z)` live in the same bin
//! basis by construction.

use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::CpdModel;
use crate::radon::OperatorBank;
use crate::scalar::Scalar;

/// Support value recorded for blocks computed analytically from a model.
pub const ANALYTIC_SUPPORT: usize = usize::MAX;

/// All `C(N, 2)` pairs `(j, k)` with `j < k`, in lexicographic order.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|j| ((j + 1)..n).map(move |k| (j, k))).collect()
}

/// All `C(N, 3)` triples in lexicographic order.
pub fn all_triples(n: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for j in 0..n {
        for k in (j + 1)..n {
            for l in (k + 1)..n {
                out.push((j, k, l));
            }
        }
    }
    out
}

/// Stacked projected PMFs `Y_{j,k}` (`M × B`) for one variable pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedBlock<T> {
    pub pair: (usize, usize),
    pub y: Array2<T>,
    /// Samples with both variables observed; zero means the block is all-zero and unused.
    pub support: usize,
}

impl<T> ProjectedBlock<T> {
    pub fn is_supported(&self) -> bool {
        self.support > 0
    }
}

/// The observed data summary: one projected block per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedStack<T> {
    num_vars: usize,
    blocks: Vec<ProjectedBlock<T>>,
}

impl<T: Scalar> ProjectedStack<T> {
    pub fn new(num_vars: usize, blocks: Vec<ProjectedBlock<T>>) -> Result<Self> {
        for b in &blocks {
            let (j, k) = b.pair;
            if j >= k || k >= num_vars {
                return Err(Error::domain(format!("invalid pair ({j}, {k})")));
            }
        }
        Ok(Self { num_vars, blocks })
    }

    /// Population stack `𝔯(A_j D(λ) A_kᵀ)` for each pair, without sampling noise.
    pub fn from_model(model: &CpdModel<T>, bank: &OperatorBank<T>, pairs: &[(usize, usize)]) -> Result<Self> {
        let blocks = pairs
            .iter()
            .map(|&(j, k)| {
                let z = model.pairwise_marginal(j, k)?;
                let y = bank.for_pair(j, k).forward(z.view())?;
                Ok(ProjectedBlock { pair: (j, k), y, support: ANALYTIC_SUPPORT })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(model.num_vars(), blocks)
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn blocks(&self) -> &[ProjectedBlock<T>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ProjectedBlock<T>] {
        &mut self.blocks
    }

    /// Blocks with nonzero support; the only ones entering objectives.
    pub fn retained(&self) -> impl Iterator<Item = &ProjectedBlock<T>> {
        self.blocks.iter().filter(|b| b.is_supported())
    }

    pub fn get(&self, j: usize, k: usize) -> Option<&ProjectedBlock<T>> {
        let key = (j.min(k), j.max(k));
        self.blocks.iter().find(|b| b.pair == key)
    }

    pub fn dropped_pairs(&self) -> Vec<(usize, usize)> {
        self.blocks.iter().filter(|b| !b.is_supported()).map(|b| b.pair).collect()
    }
}

/// Empirical pairwise PMF and the number of samples it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseEstimate<T> {
    pub z: Array2<T>,
    pub support: usize,
}

/// Empirical three-way PMF and its support.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreewayEstimate<T> {
    pub z: Array3<T>,
    pub support: usize,
}

fn check_vars(data: &Dataset, vars: &[usize]) -> Result<()> {
    for (i, &v) in vars.iter().enumerate() {
        if v >= data.num_vars() {
            return Err(Error::domain(format!("variable {v} out of range")));
        }
        if vars[..i].contains(&v) {
            return Err(Error::domain("marginal variables must be distinct"));
        }
    }
    Ok(())
}

fn pair_counts(data: &Dataset, j: usize, k: usize) -> (Array2<u64>, usize) {
    let cards = data.cardinalities();
    let mut counts = Array2::<u64>::zeros((cards[j], cards[k]));
    let mut support = 0;
    for t in 0..data.num_samples() {
        if let (Some(a), Some(b)) = (data.get(t, j), data.get(t, k)) {
            counts[[a, b]] += 1;
            support += 1;
        }
    }
    (counts, support)
}

/// Normalised co-occurrence counts of `(X_j, X_k)`; all-zero without support.
pub fn estimate_pairwise<T: Scalar>(data: &Dataset, j: usize, k: usize) -> Result<PairwiseEstimate<T>> {
    check_vars(data, &[j, k])?;
    let (counts, support) = pair_counts(data, j, k);
    let denom = T::lit(support.max(1) as f64);
    Ok(PairwiseEstimate { z: counts.mapv(|c| T::lit(c as f64) / denom), support })
}

/// Normalised counts of `(X_j, X_k, X_l)` over samples observing all three.
pub fn estimate_threeway<T: Scalar>(data: &Dataset, j: usize, k: usize, l: usize) -> Result<ThreewayEstimate<T>> {
    check_vars(data, &[j, k, l])?;
    let cards = data.cardinalities();
    let mut counts = Array3::<u64>::zeros((cards[j], cards[k], cards[l]));
    let mut support = 0;
    for t in 0..data.num_samples() {
        if let (Some(a), Some(b), Some(c)) = (data.get(t, j), data.get(t, k), data.get(t, l)) {
            counts[[a, b, c]] += 1;
            support += 1;
        }
    }
    let denom = T::lit(support.max(1) as f64);
    Ok(ThreewayEstimate { z: counts.mapv(|c| T::lit(c as f64) / denom), support })
}

/// Histograms `φ_m·(x_j, x_k)` per pair and direction with the operators' bin
/// edges, normalising each row by the pair's support.
pub fn estimate_projected<T: Scalar>(
    data: &Dataset,
    bank: &OperatorBank<T>,
    pairs: &[(usize, usize)],
) -> Result<ProjectedStack<T>> {
    if bank.cardinalities() != data.cardinalities() {
        return Err(Error::domain("operator bank cardinalities do not match the dataset"));
    }
    let blocks = pairs
        .par_iter()
        .map(|&(j, k)| {
            if j >= k {
                return Err(Error::domain(format!("pairs must be ordered j < k, got ({j}, {k})")));
            }
            check_vars(data, &[j, k])?;
            let op = bank.for_pair(j, k);
            let (counts, support) = pair_counts(data, j, k);
            let y = if support == 0 {
                Array2::zeros((op.num_directions(), op.bins()))
            } else {
                // Integer counts are exact in floating point, so binning the
                // count matrix equals binning each sample's projection.
                let c = counts.mapv(|c| T::lit(c as f64));
                let hist = op.forward(c.view())?;
                let denom = T::lit(support as f64);
                hist.mapv(|v| v / denom)
            };
            Ok(ProjectedBlock { pair: (j, k), y, support })
        })
        .collect::<Result<Vec<_>>>()?;
    ProjectedStack::new(data.num_vars(), blocks)
}
