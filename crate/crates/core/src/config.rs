//! JSON model descriptions: a compact schema for the four matrices of a
//! network, with shorthand for common structures.
//!
//! Each matrix is either a dense array of entries (real number or
//! `[re, im]` pair), a tagged generator (`{"type": "onsite", ...}`), or a
//! sparse entry list. Indices are 0-based. Example:
//!
//! ```json
//! {
//!   "n_modes": 4,
//!   "hopping": { "type": "long_range_chain", "v": 1.0, "alpha": 1.5 },
//!   "gamma_plus": { "type": "sparse", "entries": [{ "row": 0, "col": 0, "re": 1.0 }] },
//!   "gamma_minus": { "type": "sparse", "entries": [{ "row": 3, "col": 3, "re": 1.0 }] },
//!   "sigma": { "type": "onsite", "value": 1000.0 }
//! }
//! ```

use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NetworkModel;

/// One matrix entry: plain real or `[re, im]`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

impl Entry {
    fn value(self) -> C64 {
        match self {
            Entry::Real(re) => C64::new(re, 0.0),
            Entry::Complex([re, im]) => C64::new(re, im),
        }
    }

    fn from_value(z: C64) -> Self {
        if z.im == 0.0 {
            Entry::Real(z.re)
        } else {
            Entry::Complex([z.re, z.im])
        }
    }
}

/// Sparse entry; omitted `re`/`im` default to zero. Entries are applied
/// literally, so Hermitian matrices need both `(i, j)` and `(j, i)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SparseEntry {
    pub row: usize,
    pub col: usize,
    #[serde(default)]
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

/// Generator shorthands selected by `"type"`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TaggedSpec {
    /// `M[i][j] = v / |i - j|^alpha` off the diagonal; hopping only.
    LongRangeChain { v: f64, alpha: f64 },
    /// `value` times the identity.
    Onsite { value: f64 },
    /// Explicit entry list on a zero matrix.
    Sparse { entries: Vec<SparseEntry> },
}

/// One matrix of the model description.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Tagged(TaggedSpec),
    Dense(Vec<Vec<Entry>>),
}

impl MatrixSpec {
    /// Materialize as an `n x n` complex matrix. `field` names the matrix
    /// in error messages and gates the chain shorthand.
    fn build(&self, n: usize, field: &str) -> Result<Array2<C64>> {
        match self {
            MatrixSpec::Tagged(TaggedSpec::LongRangeChain { v, alpha }) => {
                if field != "hopping" {
                    return Err(Error::InvalidInput(format!(
                        "{field}: long_range_chain is only meaningful for hopping"
                    )));
                }
                if !(v.is_finite() && *v > 0.0 && alpha.is_finite() && *alpha > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "{field}: long_range_chain needs v > 0 and alpha > 0, got v={v}, alpha={alpha}"
                    )));
                }
                let mut m = Array2::zeros((n, n));
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            let d = (i as f64 - j as f64).abs();
                            m[(i, j)] = C64::new(v / d.powf(*alpha), 0.0);
                        }
                    }
                }
                Ok(m)
            }
            MatrixSpec::Tagged(TaggedSpec::Onsite { value }) => {
                Ok(Array2::eye(n).mapv(|x: f64| C64::new(x * value, 0.0)))
            }
            MatrixSpec::Tagged(TaggedSpec::Sparse { entries }) => {
                let mut m = Array2::zeros((n, n));
                for e in entries {
                    if e.row >= n || e.col >= n {
                        return Err(Error::InvalidInput(format!(
                            "{field}: sparse entry ({}, {}) outside {n} x {n}",
                            e.row, e.col
                        )));
                    }
                    m[(e.row, e.col)] = C64::new(e.re, e.im);
                }
                Ok(m)
            }
            MatrixSpec::Dense(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::InvalidInput(format!(
                        "{field}: dense matrix must be {n} x {n}"
                    )));
                }
                let mut m = Array2::zeros((n, n));
                for (i, row) in rows.iter().enumerate() {
                    for (j, &entry) in row.iter().enumerate() {
                        m[(i, j)] = entry.value();
                    }
                }
                Ok(m)
            }
        }
    }
}

/// Serializable description of a [`NetworkModel`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_modes: usize,
    pub hopping: MatrixSpec,
    pub gamma_plus: MatrixSpec,
    pub gamma_minus: MatrixSpec,
    pub sigma: MatrixSpec,
}

impl ModelConfig {
    /// Build and validate the model this description denotes.
    pub fn to_model(&self) -> Result<NetworkModel> {
        let n = self.n_modes;
        if n == 0 {
            return Err(Error::InvalidInput("n_modes must be positive".to_string()));
        }
        let hopping = self.hopping.build(n, "hopping")?;
        let gamma_plus = self.gamma_plus.build(n, "gamma_plus")?;
        let gamma_minus = self.gamma_minus.build(n, "gamma_minus")?;
        let sigma_c = self.sigma.build(n, "sigma")?;
        if sigma_c.iter().any(|z| z.im != 0.0) {
            return Err(Error::InvalidInput(
                "sigma: dephasing rates must be real".to_string(),
            ));
        }
        let sigma = sigma_c.mapv(|z| z.re);
        NetworkModel::new(hopping, gamma_plus, gamma_minus, sigma)
    }

    /// Dense description of an existing model; inverse of [`to_model`]
    /// up to shorthand (always emits dense matrices).
    ///
    /// [`to_model`]: ModelConfig::to_model
    pub fn from_model(model: &NetworkModel) -> Self {
        let dense = |m: &Array2<C64>| {
            MatrixSpec::Dense(
                m.rows()
                    .into_iter()
                    .map(|row| row.iter().map(|&z| Entry::from_value(z)).collect())
                    .collect(),
            )
        };
        let sigma = MatrixSpec::Dense(
            model
                .sigma
                .rows()
                .into_iter()
                .map(|row| row.iter().map(|&x| Entry::Real(x)).collect())
                .collect(),
        );
        ModelConfig {
            n_modes: model.n_modes(),
            hopping: dense(&model.hopping),
            gamma_plus: dense(&model.gamma_plus),
            gamma_minus: dense(&model.gamma_minus),
            sigma,
        }
    }
}

/// Parse a model from JSON text.
pub fn parse_model(json: &str) -> Result<NetworkModel> {
    let config: ModelConfig = serde_json::from_str(json)?;
    config.to_model()
}

/// Read and validate a model from a JSON file.
pub fn load_model(path: &Path) -> Result<NetworkModel> {
    let text = std::fs::read_to_string(path)?;
    parse_model(&text)
}

/// Write a model as pretty-printed dense JSON.
pub fn save_model(path: &Path, model: &NetworkModel) -> Result<()> {
    let config = ModelConfig::from_model(model);
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &config)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_long_range_chain;

    #[test]
    fn tagged_config_builds_expected_model() {
        let json = r#"{
            "n_modes": 4,
            "hopping": { "type": "long_range_chain", "v": 1.0, "alpha": 1.5 },
            "gamma_plus": { "type": "sparse", "entries": [{ "row": 0, "col": 0, "re": 0.7 }] },
            "gamma_minus": { "type": "sparse", "entries": [{ "row": 3, "col": 3, "re": 0.3 }] },
            "sigma": { "type": "onsite", "value": 10.0 }
        }"#;
        let model = parse_model(json).unwrap();
        let reference = build_long_range_chain(4, 1.0, 1.5, 0.7, 0.3, 10.0).unwrap();
        assert_eq!(model.hopping, reference.hopping);
        assert_eq!(model.gamma_plus, reference.gamma_plus);
        assert_eq!(model.gamma_minus, reference.gamma_minus);
        assert_eq!(model.sigma, reference.sigma);
    }

    #[test]
    fn dense_entries_accept_real_and_complex_forms() {
        let json = r#"{
            "n_modes": 2,
            "hopping": [[0.0, [0.0, -1.0]], [[0.0, 1.0], 0.0]],
            "gamma_plus": [[0.5, 0.0], [0.0, 0.0]],
            "gamma_minus": [[0.0, 0.0], [0.0, 0.5]],
            "sigma": [[0.0, 0.0], [0.0, 0.0]]
        }"#;
        let model = parse_model(json).unwrap();
        assert_eq!(model.hopping[(0, 1)], C64::new(0.0, -1.0));
        assert_eq!(model.hopping[(1, 0)], C64::new(0.0, 1.0));
        assert_eq!(model.gamma_plus[(0, 0)], C64::new(0.5, 0.0));
    }

    #[test]
    fn model_round_trips_through_json_bitwise() {
        let model = build_long_range_chain(5, 0.8, 1.3, 1.2, 0.4, 3.0).unwrap();
        let config = ModelConfig::from_model(&model);
        let json = serde_json::to_string(&config).unwrap();
        let back = parse_model(&json).unwrap();
        assert_eq!(back.hopping, model.hopping);
        assert_eq!(back.gamma_plus, model.gamma_plus);
        assert_eq!(back.gamma_minus, model.gamma_minus);
        assert_eq!(back.sigma, model.sigma);
    }

    #[test]
    fn file_round_trip_preserves_model() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = build_long_range_chain(3, 1.0, 2.0, 1.0, 1.0, 0.5).unwrap();
        save_model(&path, &model).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.hopping, model.hopping);
        assert_eq!(back.sigma, model.sigma);
    }

    #[test]
    fn rejects_imaginary_dephasing() {
        let json = r#"{
            "n_modes": 1,
            "hopping": [[0.0]],
            "gamma_plus": [[1.0]],
            "gamma_minus": [[1.0]],
            "sigma": [[[1.0, 0.5]]]
        }"#;
        match parse_model(json) {
            Err(Error::InvalidInput(msg)) => assert!(msg.contains("real")),
            other => panic!("expected InvalidInput, got {other:?}"),
        }
    }

    #[test]
    fn rejects_shape_and_index_errors() {
        let bad_shape = r#"{
            "n_modes": 2,
            "hopping": [[0.0]],
            "gamma_plus": [[0.0, 0.0], [0.0, 0.0]],
            "gamma_minus": [[0.0, 0.0], [0.0, 0.0]],
            "sigma": [[0.0, 0.0], [0.0, 0.0]]
        }"#;
        assert!(matches!(parse_model(bad_shape), Err(Error::InvalidInput(_))));

        let bad_index = r#"{
            "n_modes": 2,
            "hopping": [[0.0, 1.0], [1.0, 0.0]],
            "gamma_plus": { "type": "sparse", "entries": [{ "row": 5, "col": 0, "re": 1.0 }] },
            "gamma_minus": [[0.0, 0.0], [0.0, 0.0]],
            "sigma": [[0.0, 0.0], [0.0, 0.0]]
        }"#;
        assert!(matches!(parse_model(bad_index), Err(Error::InvalidInput(_))));

        let chain_misuse = r#"{
            "n_modes": 2,
            "hopping": [[0.0, 1.0], [1.0, 0.0]],
            "gamma_plus": { "type": "long_range_chain", "v": 1.0, "alpha": 1.0 },
            "gamma_minus": [[0.0, 0.0], [0.0, 0.0]],
            "sigma": [[0.0, 0.0], [0.0, 0.0]]
        }"#;
        assert!(matches!(parse_model(chain_misuse), Err(Error::InvalidInput(_))));
    }
}
