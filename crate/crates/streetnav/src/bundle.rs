//! Version-tagged JSON bundle of named real arrays.
//!
//! One document holds every parameter matrix of a pipeline (fusion rounds,
//! encoder, policy) as named row-major arrays, so checkpoints and scorer
//! parameters share a single on-disk format.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Error, Debug)]
pub enum BundleError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported bundle version {0}")]
    Version(u32),
    #[error("missing array `{0}`")]
    MissingArray(String),
    #[error("array `{name}` has shape {rows}x{cols}, expected {want_rows}x{want_cols}")]
    Shape {
        name: String,
        rows: usize,
        cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("array `{name}` declares {rows}x{cols} but carries {len} values")]
    Length {
        name: String,
        rows: usize,
        cols: usize,
        len: usize,
    },
}

/// A named row-major real array. Vectors are stored with `rows == 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBundle {
    pub version: u32,
    pub arrays: BTreeMap<String, NamedArray>,
}

impl Default for ParamBundle {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamBundle {
    pub fn new() -> Self {
        Self {
            version: BUNDLE_VERSION,
            arrays: BTreeMap::new(),
        }
    }

    pub fn insert_matrix(&mut self, name: &str, m: &Array2<f64>) {
        self.arrays.insert(
            name.to_string(),
            NamedArray {
                rows: m.nrows(),
                cols: m.ncols(),
                data: m.iter().cloned().collect(),
            },
        );
    }

    pub fn insert_vector(&mut self, name: &str, v: &Array1<f64>) {
        self.arrays.insert(
            name.to_string(),
            NamedArray {
                rows: 1,
                cols: v.len(),
                data: v.to_vec(),
            },
        );
    }

    pub fn matrix(&self, name: &str) -> Result<Array2<f64>, BundleError> {
        let arr = self
            .arrays
            .get(name)
            .ok_or_else(|| BundleError::MissingArray(name.to_string()))?;
        if arr.data.len() != arr.rows * arr.cols {
            return Err(BundleError::Length {
                name: name.to_string(),
                rows: arr.rows,
                cols: arr.cols,
                len: arr.data.len(),
            });
        }
        Ok(Array2::from_shape_vec((arr.rows, arr.cols), arr.data.clone())
            .expect("length checked"))
    }

    pub fn matrix_with_shape(
        &self,
        name: &str,
        rows: usize,
        cols: usize,
    ) -> Result<Array2<f64>, BundleError> {
        let m = self.matrix(name)?;
        if m.nrows() != rows || m.ncols() != cols {
            return Err(BundleError::Shape {
                name: name.to_string(),
                rows: m.nrows(),
                cols: m.ncols(),
                want_rows: rows,
                want_cols: cols,
            });
        }
        Ok(m)
    }

    pub fn vector(&self, name: &str) -> Result<Array1<f64>, BundleError> {
        let m = self.matrix(name)?;
        if m.nrows() != 1 {
            return Err(BundleError::Shape {
                name: name.to_string(),
                rows: m.nrows(),
                cols: m.ncols(),
                want_rows: 1,
                want_cols: m.ncols(),
            });
        }
        Ok(m.row(0).to_owned())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BundleError> {
        let bundle: ParamBundle = serde_json::from_str(text)?;
        if bundle.version != BUNDLE_VERSION {
            return Err(BundleError::Version(bundle.version));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<(), BundleError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BundleError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_arrays() {
        let mut bundle = ParamBundle::new();
        let m = Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64 * 0.25);
        let v = Array1::from_vec(vec![1.5, -2.25]);
        bundle.insert_matrix("layer.w", &m);
        bundle.insert_vector("layer.b", &v);

        let parsed = ParamBundle::from_json(&bundle.to_json()).unwrap();
        assert_eq!(parsed.matrix("layer.w").unwrap(), m);
        assert_eq!(parsed.vector("layer.b").unwrap(), v);
    }

    #[test]
    fn rejects_unknown_version_and_missing_names() {
        let err = ParamBundle::from_json(r#"{"version": 99, "arrays": {}}"#).unwrap_err();
        assert!(matches!(err, BundleError::Version(99)));

        let bundle = ParamBundle::new();
        assert!(matches!(
            bundle.matrix("nope"),
            Err(BundleError::MissingArray(_))
        ));
    }

    #[test]
    fn shape_validation() {
        let mut bundle = ParamBundle::new();
        bundle.insert_matrix("m", &Array2::zeros((2, 2)));
        assert!(matches!(
            bundle.matrix_with_shape("m", 3, 2),
            Err(BundleError::Shape { .. })
        ));
    }
}
