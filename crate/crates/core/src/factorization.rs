//! Block assembly of pairwise marginals and separable NMF by successive projection.
//!
//! With the variables split into `S1` and `S2`, stacking `Z_{j,k}` for
//! `j ∈ S1, k ∈ S2` gives `Z̃ = W Hᵀ` where `W` stacks the `S1` factors and
//! `H` stacks the `S2` factors scaled by `λ`.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{spectral_radius, Cholesky};
use crate::model::CpdModel;
use crate::scalar::Scalar;

/// Pairwise marginals keyed by `(j, k)`; the matrix is `I_j × I_k`.
pub type PairMap<T> = BTreeMap<(usize, usize), Array2<T>>;

/// Partition of the variables into row (`S1`) and column (`S2`) sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    s1: Vec<usize>,
    s2: Vec<usize>,
    cardinalities: Vec<usize>,
    row_offsets: Vec<usize>,
    col_offsets: Vec<usize>,
}

fn offsets(vars: &[usize], cards: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(vars.len() + 1);
    let mut acc = 0;
    out.push(0);
    for &v in vars {
        acc += cards[v];
        out.push(acc);
    }
    out
}

impl SplitPlan {
    /// Explicit split; `s1` and `s2` must partition `0..N` and both be nonempty.
    pub fn from_sets(s1: Vec<usize>, s2: Vec<usize>, cardinalities: &[usize], rank: usize) -> Result<Self> {
        let n = cardinalities.len();
        if s1.is_empty() || s2.is_empty() {
            return Err(Error::domain("both sides of the split must be nonempty"));
        }
        let mut seen = vec![false; n];
        for &v in s1.iter().chain(&s2) {
            if v >= n || seen[v] {
                return Err(Error::domain(format!("variable {v} is out of range or repeated in the split")));
            }
            seen[v] = true;
        }
        if seen.iter().any(|&x| !x) {
            return Err(Error::domain("split does not cover every variable"));
        }
        if rank == 0 {
            return Err(Error::domain("rank must be at least 1"));
        }
        let plan = Self {
            row_offsets: offsets(&s1, cardinalities),
            col_offsets: offsets(&s2, cardinalities),
            s1,
            s2,
            cardinalities: cardinalities.to_vec(),
        };
        let bound = plan.identifiability_bound();
        if rank > bound {
            return Err(Error::Identifiability { rank, bound });
        }
        Ok(plan)
    }

    pub fn s1(&self) -> &[usize] {
        &self.s1
    }

    pub fn s2(&self) -> &[usize] {
        &self.s2
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn num_vars(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn rows(&self) -> usize {
        *self.row_offsets.last().expect("nonempty offsets")
    }

    pub fn cols(&self) -> usize {
        *self.col_offsets.last().expect("nonempty offsets")
    }

    /// `min(Σ_{S1} I_n, Σ_{S2} I_n)`, the largest rank the split can identify.
    pub fn identifiability_bound(&self) -> usize {
        self.rows().min(self.cols())
    }

    /// Row range of the `p`-th `S1` variable's block.
    pub fn row_block(&self, p: usize) -> std::ops::Range<usize> {
        self.row_offsets[p]..self.row_offsets[p + 1]
    }

    /// Column range of the `q`-th `S2` variable's block.
    pub fn col_block(&self, q: usize) -> std::ops::Range<usize> {
        self.col_offsets[q]..self.col_offsets[q + 1]
    }

    /// Cross pairs `(min, max)` that assembly needs, ordered by `(S1 position, S2 position)`.
    pub fn required_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.s1.len() * self.s2.len());
        for &j in &self.s1 {
            for &k in &self.s2 {
                out.push((j.min(k), j.max(k)));
            }
        }
        out
    }
}

/// First `⌈N/2⌉` variables form `S1`, the rest `S2`.
pub fn make_split(cardinalities: &[usize], rank: usize) -> Result<SplitPlan> {
    let n = cardinalities.len();
    if n < 2 {
        return Err(Error::domain("a split needs at least two variables"));
    }
    let m = n.div_ceil(2);
    SplitPlan::from_sets((0..m).collect(), (m..n).collect(), cardinalities, rank)
}

/// `Z̃` together with its plan and the availability of each block.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledMatrix<T> {
    pub z: Array2<T>,
    pub plan: SplitPlan,
    /// `filled[p][q]` is true when the block for `(S1[p], S2[q])` came from data.
    pub filled: Vec<Vec<bool>>,
}

impl<T: Scalar> AssembledMatrix<T> {
    pub fn is_complete(&self) -> bool {
        self.filled.iter().all(|r| r.iter().all(|&x| x))
    }
}

/// Places every cross-pair marginal into `Z̃`; fails listing any absent pair.
pub fn assemble<T: Scalar>(marginals: &PairMap<T>, plan: &SplitPlan) -> Result<AssembledMatrix<T>> {
    let out = assemble_lenient(marginals, plan)?;
    if !out.is_complete() {
        let mut missing = Vec::new();
        for (p, &j) in plan.s1.iter().enumerate() {
            for (q, &k) in plan.s2.iter().enumerate() {
                if !out.filled[p][q] {
                    missing.push((j.min(k), j.max(k)));
                }
            }
        }
        return Err(Error::Assembly(missing));
    }
    Ok(out)
}

/// Like [`assemble`] but leaves absent blocks at zero and records them in `filled`.
pub fn assemble_lenient<T: Scalar>(marginals: &PairMap<T>, plan: &SplitPlan) -> Result<AssembledMatrix<T>> {
    let cards = &plan.cardinalities;
    let mut z = Array2::zeros((plan.rows(), plan.cols()));
    let mut filled = vec![vec![false; plan.s2.len()]; plan.s1.len()];
    for (p, &j) in plan.s1.iter().enumerate() {
        for (q, &k) in plan.s2.iter().enumerate() {
            let key = (j.min(k), j.max(k));
            let Some(m) = marginals.get(&key) else { continue };
            let block = if j < k { m.view() } else { m.t() };
            if block.dim() != (cards[j], cards[k]) {
                return Err(Error::domain(format!(
                    "marginal for pair {key:?} has shape {:?}, expected {:?}",
                    m.dim(),
                    (cards[key.0], cards[key.1])
                )));
            }
            z.slice_mut(s![plan.row_block(p), plan.col_block(q)]).assign(&block);
            filled[p][q] = true;
        }
    }
    Ok(AssembledMatrix { z, plan: plan.clone(), filled })
}

/// Result of separable NMF: `Z̃ ≈ W Hᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair<T> {
    pub w: Array2<T>,
    pub h: Array2<T>,
    /// Row indices of `Z̃` selected as anchors, in selection order.
    pub anchors: Vec<usize>,
    /// `‖Z̃ − W Hᵀ‖_F`.
    pub residual: T,
}

/// Relative residual norm below which a candidate anchor counts as dependent.
const ANCHOR_TOL: f64 = 1e-10;

/// Projected-gradient NNLS settings for recovering `W`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnlsOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for NnlsOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-10 }
    }
}

/// SPA on an assembled matrix.
pub fn spa<T: Scalar>(z: &AssembledMatrix<T>, rank: usize) -> Result<FactorPair<T>> {
    spa_matrix(z.z.view(), rank, NnlsOptions::default())
}

/// Selects `rank` anchor rows of `z`, sets `H` to those rows (transposed) and
/// fits `W ≥ 0` row by row.
///
/// Rows are ℓ1-normalised before selection so that every row is a convex
/// combination of the anchor profiles. Ties go to the lowest row index.
pub fn spa_matrix<T: Scalar>(z: ArrayView2<'_, T>, rank: usize, nnls: NnlsOptions) -> Result<FactorPair<T>> {
    let (rows, cols) = z.dim();
    if rank == 0 {
        return Err(Error::domain("rank must be at least 1"));
    }
    if rank > rows.min(cols) {
        return Err(Error::Identifiability { rank, bound: rows.min(cols) });
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("assembled matrix has non-finite entries".into()));
    }
    let anchors = select_anchors(z, rank)?;
    let mut h = Array2::zeros((cols, rank));
    for (f, &r) in anchors.iter().enumerate() {
        h.column_mut(f).assign(&z.row(r));
    }
    let w = nnls_rows(z, h.view(), nnls);
    let residual = (&z - &w.dot(&h.t())).mapv(|x| x * x).sum().sqrt();
    Ok(FactorPair { w, h, anchors, residual })
}

fn select_anchors<T: Scalar>(z: ArrayView2<'_, T>, rank: usize) -> Result<Vec<usize>> {
    let mut r = z.to_owned();
    for mut row in r.rows_mut() {
        let l1: T = row.iter().map(|x| x.abs()).sum();
        if l1 > T::zero() {
            row.mapv_inplace(|x| x / l1);
        }
    }
    let mut norms: Vec<T> = r.rows().into_iter().map(|row| row.dot(&row)).collect();
    let scale = norms.iter().copied().fold(T::zero(), T::max);
    if scale <= T::zero() {
        return Err(Error::Degenerate { found: 0, requested: rank });
    }
    let tol = T::lit(ANCHOR_TOL) * scale;
    let mut anchors = Vec::with_capacity(rank);
    for found in 0..rank {
        let mut best = 0;
        for (i, &v) in norms.iter().enumerate() {
            if v > norms[best] {
                best = i;
            }
        }
        if norms[best] <= tol {
            return Err(Error::Degenerate { found, requested: rank });
        }
        anchors.push(best);
        let u = r.row(best).mapv(|x| x / norms[best].sqrt());
        let proj = r.dot(&u);
        for (i, mut row) in r.rows_mut().into_iter().enumerate() {
            row.scaled_add(-proj[i], &u);
            norms[i] = row.dot(&row);
        }
    }
    Ok(anchors)
}

/// Row-wise `min_{w ≥ 0} ‖z_i − H w‖²`, solved independently for each row.
fn nnls_rows<T: Scalar>(z: ArrayView2<'_, T>, h: ArrayView2<'_, T>, opts: NnlsOptions) -> Array2<T> {
    let gram = h.t().dot(&h);
    let chol = factor_jittered(gram.view());
    let lipschitz = spectral_radius(gram.view(), 100);
    let rhs = z.dot(&h);
    let rows: Vec<Array1<T>> = (0..z.nrows())
        .into_par_iter()
        .map(|i| nnls_solve(gram.view(), rhs.row(i), chol.as_ref(), lipschitz, opts))
        .collect();
    let mut w = Array2::zeros((z.nrows(), h.ncols()));
    for (i, r) in rows.into_iter().enumerate() {
        w.row_mut(i).assign(&r);
    }
    w
}

fn factor_jittered<T: Scalar>(gram: ArrayView2<'_, T>) -> Option<Cholesky<T>> {
    let base = gram.diag().iter().copied().fold(T::zero(), T::max).max(T::min_positive_value());
    if let Some(c) = Cholesky::factor(gram) {
        return Some(c);
    }
    let mut jitter = base * T::lit(1e-12);
    for _ in 0..8 {
        let mut g = gram.to_owned();
        g.diag_mut().mapv_inplace(|d| d + jitter);
        if let Some(c) = Cholesky::factor(g.view()) {
            return Some(c);
        }
        jitter *= T::lit(100.0);
    }
    None
}

/// NNLS in normal-equation form `min ½wᵀGw − cᵀw, w ≥ 0`.
///
/// Uses the unconstrained minimiser when it is nonnegative up to round-off,
/// otherwise runs accelerated projected gradient from its clipped version.
pub fn nnls_solve<T: Scalar>(
    gram: ArrayView2<'_, T>,
    c: ArrayView1<'_, T>,
    chol: Option<&Cholesky<T>>,
    lipschitz: T,
    opts: NnlsOptions,
) -> Array1<T> {
    let f = c.len();
    let mut x = match chol {
        Some(ch) => ch.solve(c),
        None => Array1::zeros(f),
    };
    let scale = x.iter().map(|v| v.abs()).fold(T::zero(), T::max);
    let neg_tol = T::clamp_tolerance() * scale.max(T::one());
    if x.iter().all(|v| v.is_finite() && *v >= -neg_tol) {
        return x.mapv(|v| v.max(T::zero()));
    }
    x.mapv_inplace(|v| if v.is_finite() { v.max(T::zero()) } else { T::zero() });
    if lipschitz <= T::zero() {
        return x;
    }
    let step = T::one() / lipschitz;
    let tol = T::lit(opts.tol);
    let mut y = x.clone();
    let mut t = T::one();
    for _ in 0..opts.max_iter {
        let grad = gram.dot(&y) - c;
        let next = (&y - &(grad * step)).mapv(|v| v.max(T::zero()));
        let t_next = (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt()) / T::lit(2.0);
        let momentum = (t - T::one()) / t_next;
        let delta = &next - &x;
        let change = delta.dot(&delta).sqrt();
        let size = next.dot(&next).sqrt().max(T::min_positive_value());
        y = &next + &(delta * momentum);
        x = next;
        t = t_next;
        if change <= tol * size {
            break;
        }
    }
    x
}

/// A model recovered from `(W, H)` plus the columns that had no mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Extracted<T> {
    pub model: CpdModel<T>,
    /// `(variable, column)` pairs replaced by uniform columns; `usize::MAX` marks `λ`.
    pub degenerate: Vec<(usize, usize)>,
}

/// Slices `W` into the `S1` factors and `H` into the `S2` factors.
///
/// Anchor rows carry an arbitrary per-column scale `s_f`, undone by
/// multiplying `H(:,f)` by the mean `S1`-block column sum of `W`. After that
/// each `S2` block's `f`-th column sums to `λ(f)` in the exact case, and `λ`
/// is the mean over `S2` blocks.
pub fn extract_factors<T: Scalar>(pair: &FactorPair<T>, plan: &SplitPlan) -> Result<Extracted<T>> {
    let rank = pair.w.ncols();
    if pair.h.ncols() != rank || pair.w.nrows() != plan.rows() || pair.h.nrows() != plan.cols() {
        return Err(Error::domain(format!(
            "factor shapes W {:?}, H {:?} do not match the split ({} × {})",
            pair.w.dim(),
            pair.h.dim(),
            plan.rows(),
            plan.cols()
        )));
    }
    let w = pair.w.mapv(|x| x.max(T::zero()));
    let mut h = pair.h.mapv(|x| x.max(T::zero()));

    let p1 = T::lit(plan.s1.len() as f64);
    let col_scale = w.sum_axis(Axis(0)).mapv(|x| x / p1);
    for (f, mut col) in h.axis_iter_mut(Axis(1)).enumerate() {
        col.mapv_inplace(|x| x * col_scale[f]);
    }

    let mut factors: Vec<Option<Array2<T>>> = vec![None; plan.num_vars()];
    for (p, &n) in plan.s1.iter().enumerate() {
        factors[n] = Some(w.slice(s![plan.row_block(p), ..]).to_owned());
    }
    let mut lambda = Array1::zeros(rank);
    for (q, &n) in plan.s2.iter().enumerate() {
        let block = h.slice(s![plan.col_block(q), ..]).to_owned();
        lambda += &block.sum_axis(Axis(0));
        factors[n] = Some(block);
    }
    let factors: Vec<Array2<T>> = factors.into_iter().map(|f| f.expect("split covers every variable")).collect();

    let (model, degenerate) = CpdModel::from_unnormalized(lambda, factors)?;
    for &(n, c) in &degenerate {
        if n == usize::MAX {
            log::warn!("extracted weights carry no mass; using uniform weights");
        } else {
            log::warn!("latent column {c} of variable {n} carries no mass; using a uniform column");
        }
    }
    Ok(Extracted { model, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random model where row `f` of every factor is pure for latent state `f`.
    fn separable_model(cards: &[usize], rank: usize, seed: u64) -> CpdModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors = cards
            .iter()
            .map(|&i| {
                assert!(i >= rank);
                let mut a = Array2::<f64>::zeros((i, rank));
                for f in 0..rank {
                    a[[f, f]] = 0.3 + rng.random::<f64>();
                    for r in rank..i {
                        a[[r, f]] = rng.random::<f64>();
                    }
                }
                a
            })
            .collect();
        let w = Array1::from_shape_fn(rank, |_| 0.2 + rng.random::<f64>());
        CpdModel::from_unnormalized(w, factors).unwrap().0
    }

    fn exact_pairs(m: &CpdModel<f64>) -> PairMap<f64> {
        let n = m.num_vars();
        let mut out = PairMap::new();
        for j in 0..n {
            for k in (j + 1)..n {
                out.insert((j, k), m.pairwise_marginal(j, k).unwrap());
            }
        }
        out
    }

    fn aligned_dist(a: &CpdModel<f64>, b: &CpdModel<f64>) -> f64 {
        // Brute force over permutations of small rank.
        fn perms(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in perms(n - 1) {
                for i in 0..n {
                    let mut q = p.clone();
                    q.insert(i, n - 1);
                    out.push(q);
                }
            }
            out
        }
        perms(a.rank())
            .into_iter()
            .map(|p| {
                let b = b.permute_latent(&p).unwrap();
                let mut d = (a.weights() - b.weights()).mapv(|x| x * x).sum();
                for n in 0..a.num_vars() {
                    d += (a.factor(n) - b.factor(n)).mapv(|x| x * x).sum();
                }
                d
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn split_examples() {
        let p = make_split(&[10; 6], 25).unwrap();
        assert_eq!(p.s1(), &[0, 1, 2]);
        assert_eq!(p.s2(), &[3, 4, 5]);
        assert_eq!(p.identifiability_bound(), 30);
        let p = make_split(&[15; 5], 20).unwrap();
        assert_eq!(p.identifiability_bound(), 30);
        let p = make_split(&[4, 7], 3).unwrap();
        assert_eq!((p.s1(), p.s2()), (&[0usize][..], &[1usize][..]));
        match make_split(&[10; 6], 31) {
            Err(Error::Identifiability { rank: 31, bound: 30 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(make_split(&[3], 1).is_err());
        assert!(SplitPlan::from_sets(vec![0], vec![0], &[2, 2], 1).is_err());
        assert!(SplitPlan::from_sets(vec![0], vec![], &[2, 2], 1).is_err());
    }

    #[test]
    fn two_variables_assemble_to_the_marginal() {
        let z = array![[0.1, 0.2, 0.0], [0.3, 0.1, 0.3]];
        let mut map = PairMap::new();
        map.insert((0, 1), z.clone());
        let plan = make_split(&[2, 3], 1).unwrap();
        assert_eq!(assemble(&map, &plan).unwrap().z, z);
    }

    #[test]
    fn blocks_land_with_orientation() {
        let m = separable_model(&[3, 4, 3, 5], 2, 3);
        let map = exact_pairs(&m);
        let plan = SplitPlan::from_sets(vec![2, 0], vec![1, 3], &m.cardinalities(), 2).unwrap();
        let a = assemble(&map, &plan).unwrap();
        assert_eq!(a.z.dim(), (6, 9));
        assert_eq!(a.z.slice(s![0..3, 0..4]), map[&(1, 2)].t());
        assert_eq!(a.z.slice(s![3..6, 4..9]), map[&(0, 3)]);
        assert!(a.z.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn missing_block_is_reported() {
        let m = separable_model(&[3, 3, 3, 3], 2, 1);
        let mut map = exact_pairs(&m);
        map.remove(&(1, 3));
        let plan = make_split(&m.cardinalities(), 2).unwrap();
        match assemble(&map, &plan) {
            Err(Error::Assembly(p)) => assert_eq!(p, vec![(1, 3)]),
            other => panic!("unexpected {other:?}"),
        }
        let lenient = assemble_lenient(&map, &plan).unwrap();
        assert!(!lenient.filled[1][1] && lenient.filled[0][0]);
    }

    #[test]
    fn exact_marginals_factor_as_stacked_factors() {
        let m = separable_model(&[3, 4, 3, 5], 2, 9);
        let plan = make_split(&m.cardinalities(), 2).unwrap();
        let a = assemble(&exact_pairs(&m), &plan).unwrap();
        let w = ndarray::concatenate(Axis(0), &[m.factor(0).view(), m.factor(1).view()]).unwrap();
        let mut h = ndarray::concatenate(Axis(0), &[m.factor(2).view(), m.factor(3).view()]).unwrap();
        for (f, mut c) in h.axis_iter_mut(Axis(1)).enumerate() {
            c *= m.weights()[f];
        }
        let diff = (&a.z - &w.dot(&h.t())).mapv(f64::abs).fold(0.0, |x: f64, &y| x.max(y));
        assert!(diff < 1e-12);
    }

    #[test]
    fn spa_finds_pure_rows() {
        // Rows 0 and 4 are pure; others mix them.
        let h = array![[0.5, 0.1], [0.3, 0.2], [0.2, 0.7]];
        let w = array![[0.7, 0.0], [0.2, 0.3], [0.1, 0.1], [0.4, 0.4], [0.0, 0.9]];
        let z = w.dot(&h.t());
        let fp = spa_matrix(z.view(), 2, NnlsOptions::default()).unwrap();
        let mut anchors = fp.anchors.clone();
        anchors.sort();
        assert_eq!(anchors, vec![0, 4]);
        assert!((&z - &fp.w.dot(&fp.h.t())).mapv(f64::abs).sum() < 1e-8);
        assert!(fp.residual < 1e-8);
    }

    #[test]
    fn rank_one_is_exact() {
        let z = array![[0.1], [0.3], [0.2]].dot(&array![[0.5, 0.25, 0.25]]);
        let fp = spa_matrix(z.view(), 1, NnlsOptions::default()).unwrap();
        assert!(fp.residual < 1e-14);
    }

    #[test]
    fn row_permutation_is_equivariant() {
        // Unique pure rows 2, 5, 9 so that no two rows tie after normalisation.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut w = Array2::from_shape_fn((11, 3), |_| rng.random::<f64>());
        for (f, &r) in [2, 5, 9].iter().enumerate() {
            w.row_mut(r).fill(0.0);
            w[[r, f]] = 1.0 + f as f64;
        }
        let h = Array2::from_shape_fn((8, 3), |_| rng.random::<f64>());
        let z = w.dot(&h.t());
        let perm: Vec<usize> = (0..z.nrows()).rev().collect();
        let zp = z.select(Axis(0), &perm);
        let a = spa_matrix(z.view(), 3, NnlsOptions::default()).unwrap();
        let b = spa_matrix(zp.view(), 3, NnlsOptions::default()).unwrap();
        let mapped: Vec<usize> = b.anchors.iter().map(|&i| perm[i]).collect();
        let mut x = a.anchors.clone();
        let mut y = mapped.clone();
        x.sort();
        y.sort();
        assert_eq!(x, y);
        assert!((&a.w.select(Axis(0), &perm) - &b.w).mapv(f64::abs).sum() < 1e-9);
    }

    #[test]
    fn rank_deficient_matrix_is_degenerate() {
        let z = array![[0.1], [0.3], [0.2]].dot(&array![[0.5, 0.25, 0.25]]);
        match spa_matrix(z.view(), 2, NnlsOptions::default()) {
            Err(Error::Degenerate { found: 1, requested: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(spa_matrix(z.view(), 4, NnlsOptions::default()).is_err());
    }

    #[test]
    fn projection_never_increases_row_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = Array2::from_shape_fn((12, 7), |_| rng.random::<f64>());
        let mut r = z.clone();
        for u_row in 0..3 {
            let before: Vec<f64> = r.rows().into_iter().map(|x| x.dot(&x)).collect();
            let u = r.row(u_row).to_owned();
            let u = &u / u.dot(&u).sqrt();
            let proj = r.dot(&u);
            for (i, mut row) in r.rows_mut().into_iter().enumerate() {
                row.scaled_add(-proj[i], &u);
                assert!(row.dot(&row) <= before[i] + 1e-15);
            }
        }
    }

    /// Enumerates supports, solving the unconstrained problem on each and
    /// keeping the best feasible point.
    fn active_set_oracle(g: &Array2<f64>, c: &Array1<f64>) -> Array1<f64> {
        let f = c.len();
        let mut best = (f64::INFINITY, Array1::zeros(f));
        for mask in 0..(1u32 << f) {
            let idx: Vec<usize> = (0..f).filter(|&i| mask & (1 << i) != 0).collect();
            let mut x = Array1::zeros(f);
            if !idx.is_empty() {
                let gs = g.select(Axis(0), &idx).select(Axis(1), &idx);
                let cs = c.select(Axis(0), &idx);
                let Some(ch) = Cholesky::factor(gs.view()) else { continue };
                let sol = ch.solve(cs.view());
                if sol.iter().any(|&v| v < 0.0) {
                    continue;
                }
                for (p, &i) in idx.iter().enumerate() {
                    x[i] = sol[p];
                }
            }
            let obj = 0.5 * x.dot(&g.dot(&x)) - c.dot(&x);
            if obj < best.0 {
                best = (obj, x);
            }
        }
        best.1
    }

    #[test]
    fn nnls_matches_active_set_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let h = Array2::from_shape_fn((6, 3), |_| rng.random::<f64>());
            let z = Array1::from_shape_fn(6, |_| rng.random::<f64>() - 0.4);
            let g = h.t().dot(&h);
            let c = h.t().dot(&z);
            let ch = Cholesky::factor(g.view());
            let l = spectral_radius(g.view(), 100);
            let x = nnls_solve(g.view(), c.view(), ch.as_ref(), l, NnlsOptions { max_iter: 5000, tol: 1e-14 });
            let oracle = active_set_oracle(&g, &c);
            assert!((&x - &oracle).mapv(f64::abs).sum() < 1e-6, "{x} vs {oracle}");
        }
    }

    #[test]
    fn round_trip_recovers_separable_model() {
        for seed in 0..5 {
            let m = separable_model(&[4, 5, 4, 6, 5], 3, seed);
            let plan = make_split(&m.cardinalities(), 3).unwrap();
            let a = assemble(&exact_pairs(&m), &plan).unwrap();
            let fp = spa(&a, 3).unwrap();
            let ex = extract_factors(&fp, &plan).unwrap();
            assert!(ex.degenerate.is_empty());
            assert!(aligned_dist(&m, &ex.model) < 1e-9);
        }
    }

    #[test]
    fn extraction_is_scale_invariant() {
        let m = separable_model(&[3, 3, 4], 2, 4);
        let plan = make_split(&m.cardinalities(), 2).unwrap();
        let fp = spa(&assemble(&exact_pairs(&m), &plan).unwrap(), 2).unwrap();
        let scaled = FactorPair { w: &fp.w * 3.5, h: &fp.h / 3.5, ..fp.clone() };
        let a = extract_factors(&fp, &plan).unwrap().model;
        let b = extract_factors(&scaled, &plan).unwrap().model;
        assert!(aligned_dist(&a, &b) < 1e-24);
    }

    #[test]
    fn rank_one_extraction() {
        let m = separable_model(&[3, 2], 1, 8);
        let plan = make_split(&m.cardinalities(), 1).unwrap();
        let fp = spa(&assemble(&exact_pairs(&m), &plan).unwrap(), 1).unwrap();
        let out = extract_factors(&fp, &plan).unwrap().model;
        assert_eq!(out.weights(), &array![1.0]);
        assert!(aligned_dist(&m, &out) < 1e-24);
    }

    #[test]
    fn zero_column_becomes_uniform() {
        let plan = make_split(&[2, 2], 2).unwrap();
        let fp = FactorPair {
            w: array![[1.0, 0.0], [1.0, 0.0]],
            h: array![[0.5, 0.0], [-0.5, 0.0]],
            anchors: vec![0, 1],
            residual: 0.0,
        };
        let ex = extract_factors(&fp, &plan).unwrap();
        assert!(ex.degenerate.contains(&(0, 1)));
        assert_eq!(ex.model.factor(0).column(1), array![0.5, 0.5]);
        assert_eq!(ex.model.factor(1).column(0), array![1.0, 0.0]);
    }

    #[test]
    fn noisy_input_still_yields_valid_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z = Array2::from_shape_fn((9, 9), |_| rng.random::<f64>() - 0.2);
        let plan = make_split(&[3, 3, 3, 3, 3, 3], 4).unwrap();
        let fp = spa_matrix(z.view(), 4, NnlsOptions::default()).unwrap();
        let ex = extract_factors(&fp, &plan).unwrap();
        assert_eq!(ex.model.rank(), 4);
    }
}
