//! Categorical datasets with missing entries: construction, CSV I/O,
//! discretisation of real-valued tables, and seeded splits.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MISSING_CODE: u32 = u32::MAX;

/// `T` samples of `N` categorical variables, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    names: Vec<String>,
    cardinalities: Vec<usize>,
    codes: Vec<u32>,
}

impl Dataset {
    /// Builds a dataset from explicit rows. Every observed code must be below
    /// its variable's cardinality.
    pub fn new(cardinalities: Vec<usize>, rows: &[Vec<Option<usize>>]) -> Result<Self> {
        let n = cardinalities.len();
        if n == 0 {
            return Err(Error::domain("dataset needs at least one variable"));
        }
        if rows.is_empty() {
            return Err(Error::domain("dataset needs at least one sample"));
        }
        let mut codes = Vec::with_capacity(rows.len() * n);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::domain(format!("row {t} has {} entries, expected {n}", row.len())));
            }
            for (v, (&x, &card)) in row.iter().zip(&cardinalities).enumerate() {
                match x {
                    Some(c) if c >= card => {
                        return Err(Error::Schema(format!(
                            "row {t}, variable {v}: code {c} exceeds cardinality {card}"
                        )))
                    }
                    Some(c) => codes.push(c as u32),
                    None => codes.push(MISSING_CODE),
                }
            }
        }
        let names = (0..n).map(|i| format!("x{i}")).collect();
        Ok(Self { names, cardinalities, codes })
    }

    /// Builds a dataset inferring each cardinality as the largest observed code plus one.
    pub fn from_rows_inferred(rows: &[Vec<Option<usize>>]) -> Result<Self> {
        let n = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut cards = vec![1usize; n];
        for row in rows {
            for (c, x) in cards.iter_mut().zip(row) {
                if let Some(v) = x {
                    *c = (*c).max(v + 1);
                }
            }
        }
        Self::new(cards, rows)
    }

    pub(crate) fn from_codes(names: Vec<String>, cardinalities: Vec<usize>, codes: Vec<u32>) -> Self {
        debug_assert_eq!(codes.len() % cardinalities.len(), 0);
        Self { names, cardinalities, codes }
    }

    /// Replaces the variable names.
    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_vars() {
            return Err(Error::domain("name count does not match variable count"));
        }
        self.names = names;
        Ok(self)
    }

    pub fn num_samples(&self) -> usize {
        self.codes.len() / self.cardinalities.len()
    }

    pub fn num_vars(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Code of variable `n` in sample `t`, or `None` when missing.
    #[inline]
    pub fn get(&self, t: usize, n: usize) -> Option<usize> {
        let c = self.codes[t * self.num_vars() + n];
        (c != MISSING_CODE).then_some(c as usize)
    }

    pub fn row(&self, t: usize) -> Vec<Option<usize>> {
        (0..self.num_vars()).map(|n| self.get(t, n)).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<Option<usize>>> + '_ {
        (0..self.num_samples()).map(move |t| self.row(t))
    }

    /// Number of samples in which variable `n` is observed.
    pub fn observed_count(&self, n: usize) -> usize {
        (0..self.num_samples()).filter(|&t| self.get(t, n).is_some()).count()
    }

    /// Fraction of all entries that are observed.
    pub fn observed_fraction(&self) -> f64 {
        let obs = self.codes.iter().filter(|&&c| c != MISSING_CODE).count();
        obs as f64 / self.codes.len() as f64
    }

    /// Dataset restricted to the given sample indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::domain("subset must keep at least one sample"));
        }
        let n = self.num_vars();
        let mut codes = Vec::with_capacity(indices.len() * n);
        for &t in indices {
            if t >= self.num_samples() {
                return Err(Error::domain(format!("sample index {t} out of range")));
            }
            codes.extend_from_slice(&self.codes[t * n..(t + 1) * n]);
        }
        Ok(Self::from_codes(self.names.clone(), self.cardinalities.clone(), codes))
    }

    /// Dataset with columns reordered (or selected) by `order`.
    pub fn select_vars(&self, order: &[usize]) -> Result<Self> {
        let n = self.num_vars();
        if order.is_empty() || order.iter().any(|&v| v >= n) {
            return Err(Error::domain("invalid variable selection"));
        }
        let codes = (0..self.num_samples())
            .flat_map(|t| order.iter().map(move |&v| (t, v)))
            .map(|(t, v)| self.codes[t * n + v])
            .collect();
        Ok(Self::from_codes(
            order.iter().map(|&v| self.names[v].clone()).collect(),
            order.iter().map(|&v| self.cardinalities[v]).collect(),
            codes,
        ))
    }

    /// Moves variable `n` to the last position (used for class labels).
    pub fn move_to_last(&self, n: usize) -> Result<Self> {
        let mut order: Vec<usize> = (0..self.num_vars()).filter(|&v| v != n).collect();
        order.push(n);
        self.select_vars(&order)
    }

    /// Additionally hides each observed entry with probability `1 − kappa`.
    pub fn mask(&self, kappa: f64, seed: u64) -> Result<Self> {
        if !(kappa > 0.0 && kappa <= 1.0) {
            return Err(Error::domain("kappa must lie in (0, 1]"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes = self
            .codes
            .iter()
            .map(|&c| if rng.random::<f64>() < kappa { c } else { MISSING_CODE })
            .collect();
        Ok(Self::from_codes(self.names.clone(), self.cardinalities.clone(), codes))
    }

    /// Seeded shuffle followed by consecutive cuts with the given fractions.
    /// The last part receives every remaining sample.
    pub fn split(&self, fractions: &[f64], seed: u64) -> Result<Vec<Self>> {
        if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::domain("split fractions must be positive"));
        }
        let total: f64 = fractions.iter().sum();
        let t = self.num_samples();
        let mut idx: Vec<usize> = (0..t).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut parts = Vec::with_capacity(fractions.len());
        let mut start = 0;
        for (i, f) in fractions.iter().enumerate() {
            let end = if i + 1 == fractions.len() {
                t
            } else {
                (start + ((f / total) * t as f64).round() as usize).min(t)
            };
            parts.push(self.subset(&idx[start..end])?);
            start = end;
        }
        Ok(parts)
    }

    /// Writes the dataset as CSV with a header row; missing entries are empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.names)?;
        let mut rec = Vec::with_capacity(self.num_vars());
        for t in 0..self.num_samples() {
            rec.clear();
            rec.extend(self.row(t).into_iter().map(|x| x.map(|c| c.to_string()).unwrap_or_default()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(File::create(path)?)
    }
}

/// Optional sidecar describing cardinalities and the label column.
///
/// Variables absent from `cardinalities` have their cardinality inferred.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default)]
    pub cardinalities: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Original category strings per variable; code `c` stands for `categories[name][c]`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub categories: BTreeMap<String, Vec<String>>,
}

impl Schema {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }

    /// Schema describing an existing dataset.
    pub fn of(data: &Dataset, label: Option<String>) -> Self {
        let cardinalities = data.names().iter().cloned().zip(data.cardinalities().iter().copied()).collect();
        Self { cardinalities, label, categories: BTreeMap::new() }
    }
}

/// Loads an integer-coded CSV with a header row.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    read_csv(File::open(path)?, schema)
}

/// Parses an integer-coded CSV with a header row. Empty cells are missing.
/// When the schema names a label column it is moved to the last position.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let names: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    let n = names.len();
    if n == 0 {
        return Err(Error::Parse { row: 1, col: 1, msg: "empty header".into() });
    }
    for key in schema.cardinalities.keys() {
        if !names.contains(key) {
            return Err(Error::Schema(format!("schema names unknown variable '{key}'")));
        }
    }
    let mut codes = Vec::new();
    let mut max_code = vec![0usize; n];
    for (r, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = r + 2;
        if rec.len() != n {
            return Err(Error::Parse { row: line, col: rec.len() + 1, msg: format!("expected {n} fields") });
        }
        for (c, cell) in rec.iter().enumerate() {
            if cell.is_empty() {
                codes.push(MISSING_CODE);
                continue;
            }
            let v: u32 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                col: c + 1,
                msg: format!("'{cell}' is not a non-negative integer code"),
            })?;
            if v == MISSING_CODE {
                return Err(Error::Parse { row: line, col: c + 1, msg: "code too large".into() });
            }
            max_code[c] = max_code[c].max(v as usize + 1);
            codes.push(v);
        }
    }
    if codes.is_empty() {
        return Err(Error::domain("CSV contains no samples"));
    }
    let mut cards = Vec::with_capacity(n);
    for (c, name) in names.iter().enumerate() {
        match schema.cardinalities.get(name) {
            Some(&declared) => {
                if max_code[c] > declared {
                    return Err(Error::Schema(format!(
                        "variable '{name}' has code {} but declared cardinality {declared}",
                        max_code[c] - 1
                    )));
                }
                cards.push(declared);
            }
            None => cards.push(max_code[c].max(1)),
        }
    }
    let data = Dataset::from_codes(names, cards, codes);
    match &schema.label {
        Some(label) => {
            let pos = data
                .names()
                .iter()
                .position(|x| x == label)
                .ok_or_else(|| Error::Schema(format!("label column '{label}' not found")))?;
            data.move_to_last(pos)
        }
        None => Ok(data),
    }
}

/// Integer-codes a CSV of string categories. Within each column the distinct
/// non-empty strings are sorted lexicographically and numbered from zero;
/// empty cells stay missing. The returned schema records the categories.
pub fn encode_strings<R: Read>(reader: R, label: Option<String>) -> Result<(Dataset, Schema)> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let names: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    let n = names.len();
    if n == 0 {
        return Err(Error::Parse { row: 1, col: 1, msg: "empty header".into() });
    }
    let mut cells: Vec<String> = Vec::new();
    for (r, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != n {
            return Err(Error::Parse { row: r + 2, col: rec.len() + 1, msg: format!("expected {n} fields") });
        }
        cells.extend(rec.iter().map(str::to_owned));
    }
    if cells.is_empty() {
        return Err(Error::domain("CSV contains no samples"));
    }
    let mut categories: Vec<Vec<String>> = vec![Vec::new(); n];
    for (i, cell) in cells.iter().enumerate() {
        if !cell.is_empty() {
            categories[i % n].push(cell.clone());
        }
    }
    for c in &mut categories {
        c.sort();
        c.dedup();
    }
    let codes = cells
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            if cell.is_empty() {
                MISSING_CODE
            } else {
                categories[i % n].binary_search(cell).expect("category was collected") as u32
            }
        })
        .collect();
    let cards = categories.iter().map(|c| c.len().max(1)).collect();
    let mut data = Dataset::from_codes(names.clone(), cards, codes);
    if let Some(l) = &label {
        let pos = names.iter().position(|x| x == l).ok_or_else(|| Error::Schema(format!("label column '{l}' not found")))?;
        data = data.move_to_last(pos)?;
    }
    let mut schema = Schema::of(&data, label);
    schema.categories = names.into_iter().zip(categories).collect();
    Ok((data, schema))
}

/// Result of [`discretize`]: the coded dataset plus the indices of constant columns.
#[derive(Debug, Clone)]
pub struct Discretized {
    pub data: Dataset,
    pub constant_columns: Vec<usize>,
}

/// Bins each column of a `T × N` real table into `bins` uniform intervals
/// over its `[min, max]` range, the last interval closed.
pub fn discretize<T: Scalar>(table: ArrayView2<'_, T>, bins: usize) -> Result<Discretized> {
    if bins < 2 {
        return Err(Error::domain("need at least two bins"));
    }
    let (t, n) = table.dim();
    if t == 0 || n == 0 {
        return Err(Error::domain("empty table"));
    }
    if table.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("table contains non-finite values"));
    }
    let mut codes = vec![0u32; t * n];
    let mut constant_columns = Vec::new();
    let b = T::lit(bins as f64);
    for (c, col) in table.columns().into_iter().enumerate() {
        let lo = col.iter().copied().fold(T::infinity(), T::min);
        let hi = col.iter().copied().fold(T::neg_infinity(), T::max);
        if hi == lo {
            log::warn!("column {c} is constant; every value maps to bin 0");
            constant_columns.push(c);
            continue;
        }
        for (r, &x) in col.iter().enumerate() {
            let k = ((x - lo) / (hi - lo) * b).floor().to_usize().unwrap_or(0).min(bins - 1);
            codes[r * n + c] = k as u32;
        }
    }
    let names = (0..n).map(|i| format!("x{i}")).collect();
    Ok(Discretized { data: Dataset::from_codes(names, vec![bins; n], codes), constant_columns })
}
