//! JSON model files.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::CpdModel;
use crate::scalar::Scalar;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Where a stored model came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    /// Hex SHA-256 of the canonical JSON of the configuration.
    pub config_hash: String,
    pub seed: Option<u64>,
}

/// Serialised model. Factors are stored row-major: `factors[n][i][f] = A_n(i, f)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub cardinalities: Vec<usize>,
    pub weights: Vec<f64>,
    pub factors: Vec<Vec<Vec<f64>>>,
    pub provenance: Provenance,
}

/// Hex SHA-256 of `value`'s JSON encoding.
pub fn config_hash<S: Serialize>(value: &S) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl ModelFile {
    pub fn from_model<T: Scalar>(model: &CpdModel<T>, provenance: Provenance) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            cardinalities: model.cardinalities(),
            weights: model.weights().iter().map(|w| w.as_f64()).collect(),
            factors: model
                .factors()
                .iter()
                .map(|a| a.rows().into_iter().map(|r| r.iter().map(|x| x.as_f64()).collect()).collect())
                .collect(),
            provenance,
        }
    }

    /// Rebuilds and validates the model.
    pub fn to_model<T: Scalar>(&self) -> Result<CpdModel<T>> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Schema(format!("unsupported model format version {}", self.format_version)));
        }
        let rank = self.weights.len();
        if self.factors.len() != self.cardinalities.len() {
            return Err(Error::Schema("number of factors differs from number of cardinalities".into()));
        }
        let mut factors = Vec::with_capacity(self.factors.len());
        for (n, (rows, &card)) in self.factors.iter().zip(&self.cardinalities).enumerate() {
            if rows.len() != card || rows.iter().any(|r| r.len() != rank) {
                return Err(Error::Schema(format!("factor {n} is not {card} × {rank}")));
            }
            let flat: Vec<T> = rows.iter().flatten().map(|&x| T::lit(x)).collect();
            factors.push(Array2::from_shape_vec((card, rank), flat).expect("checked shape"));
        }
        let weights = Array1::from_iter(self.weights.iter().map(|&x| T::lit(x)));
        CpdModel::new(weights, factors)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
