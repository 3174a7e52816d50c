//! Exact discrete Radon operator for a pair of categorical variables.
//!
//! For a direction `φ = (φ₁, φ₂)` every grid cell `(a, b)` of an `I_j × I_k`
//! pairwise PMF has a projected offset `t = φ₁·a + φ₂·b`. The cell's whole
//! mass is pushed into the single bin that contains `t`, so for `M`
//! directions and `B` bins the operator is a sparse `M·B × I_j·I_k` 0/1
//! matrix with exactly one nonzero per (direction, cell).
//!
//! Bins are uniform over the achievable offset range. The default
//! [`Binning::Dithered`] layout uses width `range/(B−1)` and a per-direction
//! phase drawn with the directions, which keeps the edge set asymmetric about
//! the grid centre. The symmetric [`Binning::RangePartition`] layout (`B`
//! equal intervals exactly spanning the range) has a one-dimensional null
//! space whenever `B` is even: a bin edge then passes through the centre of
//! the grid and the central 2×2 checkerboard projects to zero in every
//! direction.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, Cholesky};
use crate::model::normalize_in_place;
use crate::scalar::Scalar;

/// Above this many grid cells the normal equations are solved by CG.
pub const DENSE_SOLVE_LIMIT: usize = 4096;

/// `M` unit directions in the plane, plus one bin phase per direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet<T> {
    directions: Vec<[T; 2]>,
    phases: Vec<T>,
    seed: Option<u64>,
}

impl<T: Scalar> DirectionSet<T> {
    /// Draws `m` directions with i.i.d. standard normal entries, normalised to
    /// unit length, and a `U[0,1)` bin phase for each.
    pub fn sample(m: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::domain("need at least one projection direction"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut directions = Vec::with_capacity(m);
        let mut phases = Vec::with_capacity(m);
        while directions.len() < m {
            let x: f64 = rng.sample(StandardNormal);
            let y: f64 = rng.sample(StandardNormal);
            let phase: f64 = rng.random();
            let norm = x.hypot(y);
            if norm == 0.0 {
                continue;
            }
            directions.push(unit(T::lit(x), T::lit(y)));
            phases.push(T::lit(phase));
        }
        Ok(Self { directions, phases, seed: Some(seed) })
    }

    /// Explicit directions (normalised here). Phases default to `1/2`.
    pub fn from_directions(directions: Vec<[T; 2]>, phases: Option<Vec<T>>) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::domain("need at least one projection direction"));
        }
        let phases = phases.unwrap_or_else(|| vec![T::lit(0.5); directions.len()]);
        if phases.len() != directions.len() {
            return Err(Error::domain("one phase per direction required"));
        }
        if phases.iter().any(|&p| !(p >= T::zero() && p < T::one())) {
            return Err(Error::domain("phases must lie in [0, 1)"));
        }
        let mut out = Vec::with_capacity(directions.len());
        for [x, y] in directions {
            if !(x.is_finite() && y.is_finite()) || (x == T::zero() && y == T::zero()) {
                return Err(Error::domain("directions must be finite and nonzero"));
            }
            out.push(unit(x, y));
        }
        Ok(Self { directions: out, phases, seed: None })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn direction(&self, m: usize) -> [T; 2] {
        self.directions[m]
    }

    pub fn directions(&self) -> &[[T; 2]] {
        &self.directions
    }

    pub fn phase(&self, m: usize) -> T {
        self.phases[m]
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
}

fn unit<T: Scalar>(x: T, y: T) -> [T; 2] {
    let n = x.hypot(y);
    [x / n, y / n]
}

/// Layout of the bins along each projected axis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Binning {
    /// Width `range/(B−1)`, edges shifted by the direction's phase.
    #[default]
    Dithered,
    /// `B` equal half-open intervals spanning exactly `[t_min, t_max]`, last one closed.
    RangePartition,
}

/// Sparse linear map from an `I_j × I_k` matrix to `M` stacked `B`-bin histograms.
#[derive(Debug, Clone)]
pub struct RadonOperator<T> {
    rows: usize,
    cols: usize,
    bins: usize,
    binning: Binning,
    edges: Vec<Vec<T>>,
    /// `cell_bin[m * cells + c]`: bin of cell `c = a·cols + b` under direction `m`.
    cell_bin: Vec<u32>,
}

impl<T: Scalar> RadonOperator<T> {
    /// Builds the operator with the default dithered binning.
    pub fn build(dirs: &DirectionSet<T>, rows: usize, cols: usize, bins: usize) -> Result<Self> {
        Self::build_with(dirs, rows, cols, bins, Binning::default())
    }

    pub fn build_with(dirs: &DirectionSet<T>, rows: usize, cols: usize, bins: usize, binning: Binning) -> Result<Self> {
        if rows < 2 || cols < 2 || bins < 2 {
            return Err(Error::domain("grid sides and bin count must be at least 2"));
        }
        let cells = rows * cols;
        let m_count = dirs.len();
        let mut edges = Vec::with_capacity(m_count);
        let mut cell_bin = Vec::with_capacity(m_count * cells);
        let last_a = T::lit((rows - 1) as f64);
        let last_b = T::lit((cols - 1) as f64);
        for m in 0..m_count {
            let [p, q] = dirs.direction(m);
            let corners = [T::zero(), p * last_a, q * last_b, p * last_a + q * last_b];
            let t_min = corners.iter().copied().fold(T::infinity(), T::min);
            let t_max = corners.iter().copied().fold(T::neg_infinity(), T::max);
            let range = t_max - t_min;
            let (width, shift) = match binning {
                Binning::Dithered => (range / T::lit((bins - 1) as f64), dirs.phase(m)),
                Binning::RangePartition => (range / T::lit(bins as f64), T::zero()),
            };
            edges.push((0..=bins).map(|i| t_min + (T::lit(i as f64) - shift) * width).collect());
            for a in 0..rows {
                let ta = p * T::lit(a as f64);
                for b in 0..cols {
                    let t = ta + q * T::lit(b as f64);
                    let pos = ((t - t_min) / width + shift).floor();
                    let k = pos.to_i64().unwrap_or(0).clamp(0, bins as i64 - 1);
                    cell_bin.push(k as u32);
                }
            }
        }
        Ok(Self { rows, cols, bins, binning, edges, cell_bin })
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn binning(&self) -> Binning {
        self.binning
    }

    pub fn num_directions(&self) -> usize {
        self.edges.len()
    }

    /// The `B + 1` increasing bin edges for direction `m`.
    pub fn edges(&self, m: usize) -> &[T] {
        &self.edges[m]
    }

    /// Bin receiving cell `(a, b)` under direction `m`.
    #[inline]
    pub fn bin_of(&self, m: usize, a: usize, b: usize) -> usize {
        self.cell_bin[m * self.cells() + a * self.cols + b] as usize
    }

    fn check_grid(&self, z: &ArrayView2<'_, T>) -> Result<()> {
        if z.dim() != (self.rows, self.cols) {
            return Err(Error::domain(format!(
                "matrix is {:?}, operator grid is {}x{}",
                z.dim(),
                self.rows,
                self.cols
            )));
        }
        Ok(())
    }

    fn check_bins(&self, y: &ArrayView2<'_, T>) -> Result<()> {
        if y.dim() != (self.num_directions(), self.bins) {
            return Err(Error::domain(format!(
                "projection stack is {:?}, operator produces {}x{}",
                y.dim(),
                self.num_directions(),
                self.bins
            )));
        }
        Ok(())
    }

    /// Pushforward histograms: row `m` is the mass of `z` per bin of direction `m`.
    pub fn forward(&self, z: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_grid(&z)?;
        let flat: Vec<T> = z.iter().copied().collect();
        Ok(self.forward_flat(&flat))
    }

    fn forward_flat(&self, z: &[T]) -> Array2<T> {
        let cells = self.cells();
        let mut out = Array2::zeros((self.num_directions(), self.bins));
        for (m, mut row) in out.rows_mut().into_iter().enumerate() {
            let map = &self.cell_bin[m * cells..(m + 1) * cells];
            for (&k, &v) in map.iter().zip(z) {
                row[k as usize] += v;
            }
        }
        out
    }

    /// Exact transpose of [`forward`](Self::forward): `out(a,b) = Σ_m y(m, bin_m(a,b))`.
    pub fn adjoint(&self, y: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_bins(&y)?;
        Ok(Array2::from_shape_vec((self.rows, self.cols), self.adjoint_flat(y)).expect("grid shape"))
    }

    fn adjoint_flat(&self, y: ArrayView2<'_, T>) -> Vec<T> {
        let cells = self.cells();
        let mut out = vec![T::zero(); cells];
        for (m, row) in y.rows().into_iter().enumerate() {
            let map = &self.cell_bin[m * cells..(m + 1) * cells];
            for (o, &k) in out.iter_mut().zip(map) {
                *o += row[k as usize];
            }
        }
        out
    }

    /// Dense `𝔯ᵀ𝔯`: entry `(c, c')` counts the directions that put both cells in one bin.
    pub fn normal_matrix(&self) -> Array2<T> {
        let cells = self.cells();
        let mut counts = vec![0u32; cells * cells];
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); self.bins];
        for m in 0..self.num_directions() {
            members.iter_mut().for_each(Vec::clear);
            for (c, &k) in self.cell_bin[m * cells..(m + 1) * cells].iter().enumerate() {
                members[k as usize].push(c);
            }
            for group in &members {
                for &c1 in group {
                    let row = &mut counts[c1 * cells..(c1 + 1) * cells];
                    for &c2 in group {
                        row[c2] += 1;
                    }
                }
            }
        }
        Array2::from_shape_vec((cells, cells), counts.into_iter().map(|c| T::lit(c as f64)).collect())
            .expect("square")
    }

    /// Prepares a solver for `(𝔯ᵀ𝔯 + ρI) z = 𝔯ᵀy + ρ·prior`.
    pub fn normal_solver(&self, rho: T) -> Result<NormalSolver<'_, T>> {
        if !(rho >= T::zero()) || !rho.is_finite() {
            return Err(Error::domain("rho must be finite and nonnegative"));
        }
        let kind = if self.cells() <= DENSE_SOLVE_LIMIT {
            let mut a = self.normal_matrix();
            for i in 0..self.cells() {
                a[[i, i]] += rho;
            }
            SolveKind::Dense(factor_with_jitter(a)?)
        } else {
            SolveKind::Iterative
        };
        Ok(NormalSolver { op: self, rho, kind })
    }

    /// Regularised least-squares inversion projected back onto the PMFs.
    pub fn ls_invert(&self, y: ArrayView2<'_, T>, rho: T, prior: Option<ArrayView2<'_, T>>) -> Result<Array2<T>> {
        self.normal_solver(rho)?.solve(y, prior)
    }
}

fn factor_with_jitter<T: Scalar>(mut a: Array2<T>) -> Result<Cholesky<T>> {
    if let Some(c) = Cholesky::factor(a.view()) {
        return Ok(c);
    }
    let mut jitter = T::lit(1e-10);
    let mut added = T::zero();
    for _ in 0..12 {
        let step = jitter - added;
        for i in 0..a.nrows() {
            a[[i, i]] += step;
        }
        added = jitter;
        if let Some(c) = Cholesky::factor(a.view()) {
            return Ok(c);
        }
        jitter *= T::lit(10.0);
    }
    Err(Error::Numerical("normal matrix could not be factored".into()))
}

#[derive(Debug)]
enum SolveKind<T> {
    Dense(Cholesky<T>),
    Iterative,
}

/// Reusable solver for one operator and one penalty weight.
#[derive(Debug)]
pub struct NormalSolver<'a, T> {
    op: &'a RadonOperator<T>,
    rho: T,
    kind: SolveKind<T>,
}

impl<T: Scalar> NormalSolver<'_, T> {
    pub fn rho(&self) -> T {
        self.rho
    }

    /// Unprojected solution of the (regularised) normal equations.
    pub fn solve_raw(&self, y: ArrayView2<'_, T>, prior: Option<ArrayView2<'_, T>>) -> Result<Array2<T>> {
        let op = self.op;
        op.check_bins(&y)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("projection stack has non-finite entries"));
        }
        let mut rhs = Array1::from(op.adjoint_flat(y));
        if self.rho > T::zero() {
            let prior = prior.ok_or_else(|| Error::domain("a positive rho needs a prior marginal"))?;
            op.check_grid(&prior)?;
            if prior.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain("prior has non-finite entries"));
            }
            for (r, &p) in rhs.iter_mut().zip(prior.iter()) {
                *r += self.rho * p;
            }
        }
        let x = match &self.kind {
            SolveKind::Dense(chol) => chol.solve(rhs.view()),
            SolveKind::Iterative => {
                let rho = self.rho;
                let apply = |v: ArrayView1<'_, T>| {
                    let flat: Vec<T> = v.to_vec();
                    let fwd = op.forward_flat(&flat);
                    let mut out = Array1::from(op.adjoint_flat(fwd.view()));
                    out.scaled_add(rho, &v);
                    out
                };
                let cg = conjugate_gradient(apply, rhs.view(), T::lit(1e-10), 10 * op.cells());
                if !cg.converged {
                    log::warn!("normal-equation CG stopped after {} iterations", cg.iterations);
                }
                cg.x
            }
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("least-squares solution is not finite".into()));
        }
        Ok(x.into_shape_with_order((op.rows, op.cols)).expect("grid shape"))
    }

    /// [`solve_raw`](Self::solve_raw) clipped at zero and rescaled to unit mass.
    pub fn solve(&self, y: ArrayView2<'_, T>, prior: Option<ArrayView2<'_, T>>) -> Result<Array2<T>> {
        let mut z = self.solve_raw(y, prior)?;
        if !normalize_in_place(z.view_mut()) {
            return Err(Error::Numerical("inverted marginal has no positive mass".into()));
        }
        Ok(z)
    }
}

/// One shared direction set and an operator per distinct pair shape.
#[derive(Debug, Clone)]
pub struct OperatorBank<T> {
    directions: DirectionSet<T>,
    cardinalities: Vec<usize>,
    operators: BTreeMap<(usize, usize), RadonOperator<T>>,
}

impl<T: Scalar> OperatorBank<T> {
    /// Builds operators for every pair shape among `cardinalities`. The bin
    /// count defaults to `max(I_j, I_k)` (the common cardinality when uniform).
    pub fn new(directions: DirectionSet<T>, cardinalities: &[usize], bins: Option<usize>, binning: Binning) -> Result<Self> {
        let mut operators = BTreeMap::new();
        for (j, &ij) in cardinalities.iter().enumerate() {
            for &ik in &cardinalities[j + 1..] {
                if let std::collections::btree_map::Entry::Vacant(e) = operators.entry((ij, ik)) {
                    let b = bins.unwrap_or(ij.max(ik));
                    e.insert(RadonOperator::build_with(&directions, ij, ik, b, binning)?);
                }
            }
        }
        Ok(Self { directions, cardinalities: cardinalities.to_vec(), operators })
    }

    pub fn directions(&self) -> &DirectionSet<T> {
        &self.directions
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    /// Operator for the ordered pair `(j, k)`, `j < k`.
    pub fn for_pair(&self, j: usize, k: usize) -> &RadonOperator<T> {
        &self.operators[&(self.cardinalities[j], self.cardinalities[k])]
    }

    /// Distinct operators keyed by `(I_j, I_k)`.
    pub fn operators(&self) -> impl Iterator<Item = (&(usize, usize), &RadonOperator<T>)> {
        self.operators.iter()
    }
}
