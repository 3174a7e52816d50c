//! MAP classification with a joint model whose last variable is the label,
//! and selection of the rank by validation accuracy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::CpdModel;
use crate::scalar::Scalar;
use crate::solver::{fit_ctf_3way, fit_em, fit_spa_2way, juror_data, EmOptions, Fit, SolverConfig, Variant};

/// Estimators available to experiments and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    JurorA,
    JurorB,
    JurorC,
    Spa,
    Ctf,
    Em,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::JurorA, Method::JurorB, Method::JurorC, Method::Spa, Method::Ctf, Method::Em];

    pub fn name(self) -> &'static str {
        match self {
            Method::JurorA => "juror-a",
            Method::JurorB => "juror-b",
            Method::JurorC => "juror-c",
            Method::Spa => "spa",
            Method::Ctf => "ctf",
            Method::Em => "em",
        }
    }

    /// Variant for the projection-based estimators; `None` for the baselines.
    pub fn variant(self) -> Option<Variant> {
        match self {
            Method::JurorA => Some(Variant::A),
            Method::JurorB => Some(Variant::B),
            Method::JurorC => Some(Variant::C),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::domain(format!("unknown method {s:?}; expected one of juror-a, juror-b, juror-c, spa, ctf, em")))
    }
}

/// Fits `method` using the settings in `cfg`; baselines ignore the projection fields.
pub fn fit_method<T: Scalar>(method: Method, data: &Dataset, cfg: &SolverConfig) -> Result<Fit<T>> {
    match method {
        Method::JurorA | Method::JurorB | Method::JurorC => {
            juror_data(data, cfg, method.variant().expect("projection method"))
        }
        Method::Spa => fit_spa_2way(data, cfg.rank),
        Method::Ctf => fit_ctf_3way(data, cfg.rank, &cfg.descent()),
        Method::Em => fit_em(data, cfg.rank, cfg.seed, EmOptions { max_iter: 500, tol: cfg.epsilon }),
    }
}

/// Label maximising `p(x, y)` with unobserved features summed out; ties go to the lowest label.
///
/// `features` has one entry per non-label variable.
pub fn classify_map<T: Scalar>(model: &CpdModel<T>, features: &[Option<usize>]) -> Result<usize> {
    let n = model.num_vars();
    if features.len() + 1 != n {
        return Err(Error::domain(format!("expected {} features, got {}", n - 1, features.len())));
    }
    let cards = model.cardinalities();
    let mut coef = model.weights().clone();
    for (v, x) in features.iter().enumerate() {
        if let Some(x) = *x {
            if x >= cards[v] {
                return Err(Error::domain(format!("feature {v} value {x} out of range")));
            }
            coef *= &model.factor(v).row(x);
        }
    }
    let scores = model.factor(n - 1).dot(&coef);
    let mut best = 0;
    for (y, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = y;
        }
    }
    Ok(best)
}

/// Fraction of samples with an observed label that are classified correctly.
pub fn accuracy<T: Scalar>(model: &CpdModel<T>, data: &Dataset) -> Result<f64> {
    if data.cardinalities() != model.cardinalities().as_slice() {
        return Err(Error::domain("dataset and model disagree on cardinalities"));
    }
    let label = data.num_vars() - 1;
    let (mut hit, mut total) = (0usize, 0usize);
    for t in 0..data.num_samples() {
        let Some(y) = data.get(t, label) else { continue };
        let row = data.row(t);
        total += 1;
        if classify_map(model, &row[..label])? == y {
            hit += 1;
        }
    }
    if total == 0 {
        return Err(Error::domain("no sample has an observed label"));
    }
    Ok(hit as f64 / total as f64)
}

/// Validation accuracy for every rank in the grid and the selected rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSelection {
    pub rank: usize,
    pub scores: Vec<(usize, f64)>,
}

/// Fits on `train` for each rank and keeps the most accurate on `val`; ties go to the smaller rank.
pub fn cross_validate_rank<T: Scalar>(
    train: &Dataset,
    val: &Dataset,
    grid: &[usize],
    method: Method,
    cfg: &SolverConfig,
) -> Result<RankSelection> {
    if grid.is_empty() {
        return Err(Error::domain("rank grid is empty"));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut scores = Vec::with_capacity(sorted.len());
    for &rank in &sorted {
        let fit = fit_method::<T>(method, train, &SolverConfig { rank, ..cfg.clone() })?;
        scores.push((rank, accuracy(&fit.model, val)?));
    }
    let mut best = scores[0];
    for &s in &scores[1..] {
        if s.1 > best.1 {
            best = s;
        }
    }
    Ok(RankSelection { rank: best.0, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::generators::gen_pmf_model;
    use ndarray::{array, Array1, Array2};

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("juror-d".parse::<Method>().is_err());
    }

    #[test]
    fn independent_label_uses_its_marginal() {
        let m = CpdModel::new(
            array![1.0],
            vec![array![[0.3], [0.7]], array![[0.5], [0.5]], array![[0.2], [0.5], [0.3]]],
        )
        .unwrap();
        for x in [[Some(0), Some(1)], [Some(1), None], [None, None]] {
            assert_eq!(classify_map(&m, &x).unwrap(), 1);
        }
    }

    #[test]
    fn ties_go_to_lowest_label() {
        let m = CpdModel::new(array![1.0], vec![array![[1.0]], array![[0.5], [0.5]]]).unwrap();
        assert_eq!(classify_map(&m, &[Some(0)]).unwrap(), 0);
        assert!(classify_map(&m, &[Some(1)]).is_err());
        assert!(classify_map(&m, &[]).is_err());
    }

    #[test]
    fn deterministic_model_is_perfectly_accurate() {
        // Latent state f fixes the feature to f and the label to f.
        let eye = Array2::<f64>::eye(3);
        let m = CpdModel::new(Array1::from_elem(3, 1.0 / 3.0), vec![eye.clone(), eye.clone(), eye]).unwrap();
        let d = m.sample(200, 1.0, 4).unwrap();
        assert_eq!(accuracy(&m, &d).unwrap(), 1.0);
    }

    /// Bayes classifier read off the dense joint tensor, missing features summed out.
    fn bayes_from_tensor(m: &CpdModel<f64>, x: &[Option<usize>]) -> usize {
        let t = m.full_tensor().unwrap();
        let cards = m.cardinalities();
        let label = cards.len() - 1;
        let mut scores = vec![0.0; cards[label]];
        for (idx, &p) in t.indexed_iter() {
            if x.iter().enumerate().all(|(v, xv)| xv.is_none_or(|a| a == idx[v])) {
                scores[idx[label]] += p;
            }
        }
        let mut best = 0;
        for y in 1..scores.len() {
            if scores[y] > scores[best] {
                best = y;
            }
        }
        best
    }

    #[test]
    fn agrees_with_tensor_bayes_classifier() {
        for seed in 0..5 {
            let m = gen_pmf_model::<f64>(3, 3, 4, seed).unwrap();
            let d = m.sample(300, 0.7, seed).unwrap();
            for t in 0..d.num_samples() {
                let row = d.row(t);
                assert_eq!(classify_map(&m, &row[..3]).unwrap(), bayes_from_tensor(&m, &row[..3]));
            }
        }
    }

    #[test]
    fn argmax_is_scale_invariant() {
        let m = gen_pmf_model::<f64>(2, 3, 3, 9).unwrap();
        let (w, a) = m.clone().into_parts();
        // Scaling the label factor scales every joint score uniformly.
        let scaled = CpdModel::from_parts_unchecked(w, vec![a[0].clone(), a[1].clone(), &a[2] * 7.5]);
        for x0 in 0..3 {
            for x1 in 0..3 {
                let x = [Some(x0), Some(x1)];
                assert_eq!(classify_map(&m, &x).unwrap(), classify_map(&scaled, &x).unwrap());
            }
        }
    }

    #[test]
    fn rank_selection_rules() {
        let m = gen_pmf_model::<f64>(2, 3, 4, 1).unwrap();
        let d = m.sample(400, 1.0, 1).unwrap();
        let parts = d.split(&[0.7, 0.3], 1).unwrap();
        let cfg = SolverConfig::new(1, 20);
        let one = cross_validate_rank::<f64>(&parts[0], &parts[1], &[2], Method::Spa, &cfg).unwrap();
        assert_eq!(one.rank, 2);
        // A constant label gives identical accuracy for every rank.
        let rows: Vec<Vec<Option<usize>>> = (0..50).map(|t| vec![Some(t % 3), Some((t / 3) % 3), Some(t % 2), Some(0)]).collect();
        let c = Dataset::new(vec![3, 3, 2, 2], &rows).unwrap();
        let sel = cross_validate_rank::<f64>(&c, &c, &[3, 1, 2], Method::Em, &cfg).unwrap();
        assert_eq!(sel.rank, 1);
        assert_eq!(sel.scores.iter().map(|s| s.0).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(cross_validate_rank::<f64>(&c, &c, &[], Method::Em, &cfg).is_err());
    }
}
