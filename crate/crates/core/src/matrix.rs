//! Embedding matrices and their plain-text exchange format.
//!
//! An embedding matrix has shape `D x N`: one row per embedding dimension
//! (neuron) and one column per input feature. Column `i` is the embedding
//! vector of feature `i`.
//!
//! The text format is CSV: a first line `D,N`, followed by `D` lines of `N`
//! comma-separated decimals.

use std::io::Read;

use nalgebra::{DMatrix, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::fmt_sig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRows", into = "MatrixRows")]
pub struct EmbeddingMatrix {
    entries: DMatrix<f64>,
}

/// Row-major serde representation.
#[derive(Serialize, Deserialize)]
struct MatrixRows {
    d: usize,
    n: usize,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<MatrixRows> for EmbeddingMatrix {
    type Error = Error;

    fn try_from(m: MatrixRows) -> Result<Self> {
        if m.rows.len() != m.d || m.rows.iter().any(|r| r.len() != m.n) {
            return Err(Error::DimensionMismatch(format!(
                "declared {}x{} but rows do not match",
                m.d, m.n
            )));
        }
        let flat: Vec<f64> = m.rows.into_iter().flatten().collect();
        EmbeddingMatrix::from_row_slice(m.d, m.n, &flat)
    }
}

impl From<EmbeddingMatrix> for MatrixRows {
    fn from(w: EmbeddingMatrix) -> Self {
        let rows = w
            .entries
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        MatrixRows {
            d: w.dim(),
            n: w.features(),
            rows,
        }
    }
}

impl EmbeddingMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "embedding matrix must be at least 1x1, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { entries })
    }

    pub fn from_row_slice(d: usize, n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != d * n {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for a {d}x{n} matrix, got {}",
                d * n,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(d, n, data))
    }

    /// `D x N` matrix with ones on the leading diagonal and zero padding.
    pub fn padded_identity(d: usize, n: usize) -> Result<Self> {
        Self::new(DMatrix::identity(d, n))
    }

    /// Embedding dimension `D` (number of rows).
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Feature count `N` (number of columns).
    pub fn features(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn column(&self, i: usize) -> DVectorView<'_, f64> {
        self.entries.column(i)
    }

    /// Gram matrix `WᵀW` of pairwise embedding dot products.
    pub fn gram(&self) -> DMatrix<f64> {
        self.entries.tr_mul(&self.entries)
    }

    /// Squared embedding lengths `‖W_i‖²`.
    pub fn norms(&self) -> Vec<f64> {
        self.entries
            .column_iter()
            .map(|c| c.norm_squared())
            .collect()
    }

    pub(crate) fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.features() {
            Err(Error::IndexOutOfRange {
                index: i,
                features: self.features(),
            })
        } else {
            Ok(())
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{}\n", self.dim(), self.features());
        for row in self.entries.row_iter() {
            let line: Vec<String> = row.iter().map(|&x| fmt_sig(x)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut records = reader.records();
        let header = records
            .next()
            .ok_or_else(|| Error::Parse("empty matrix file".into()))??;
        if header.len() != 2 {
            return Err(Error::Parse(format!(
                "first line must be `D,N`, got {} fields",
                header.len()
            )));
        }
        let parse_dim = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Parse(format!("bad dimension `{s}`: {e}")))
        };
        let d = parse_dim(&header[0])?;
        let n = parse_dim(&header[1])?;
        let mut data = Vec::with_capacity(d * n);
        let mut rows = 0;
        for record in records {
            let record = record?;
            if record.len() == 1 && record[0].is_empty() {
                continue;
            }
            if record.len() != n {
                return Err(Error::Parse(format!(
                    "row {} has {} entries, expected {n}",
                    rows + 1,
                    record.len()
                )));
            }
            for field in record.iter() {
                let x: f64 = field
                    .parse()
                    .map_err(|e| Error::Parse(format!("bad number `{field}`: {e}")))?;
                data.push(x);
            }
            rows += 1;
        }
        if rows != d {
            return Err(Error::Parse(format!("expected {d} rows, found {rows}")));
        }
        Self::from_row_slice(d, n, &data)
    }

    pub fn read_csv(mut reader: impl Read) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        Self::from_csv(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let err = EmbeddingMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite));
    }

    #[test]
    fn rejects_empty() {
        assert!(EmbeddingMatrix::new(DMatrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let w = EmbeddingMatrix::from_row_slice(2, 3, &[1.0, -0.5, 0.25, 0.0, 3.0, 1e-7]).unwrap();
        let text = w.to_csv();
        assert!(text.starts_with("2,3\n1.0,-0.5,0.25\n"));
        assert_eq!(EmbeddingMatrix::from_csv(&text).unwrap(), w);
    }

    #[test]
    fn csv_shape_errors() {
        assert!(matches!(
            EmbeddingMatrix::from_csv("2,2\n1,2\n").unwrap_err(),
            Error::Parse(_)
        ));
        assert!(matches!(
            EmbeddingMatrix::from_csv("1,2\n1,2,3\n").unwrap_err(),
            Error::Parse(_)
        ));
        assert!(matches!(
            EmbeddingMatrix::from_csv("1,2\n1,x\n").unwrap_err(),
            Error::Parse(_)
        ));
    }

    #[test]
    fn json_round_trip() {
        let w = EmbeddingMatrix::from_row_slice(1, 2, &[1.0, -1.0]).unwrap();
        let json = serde_json::to_string(&w).unwrap();
        assert_eq!(json, r#"{"d":1,"n":2,"rows":[[1.0,-1.0]]}"#);
        let back: EmbeddingMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, w);
    }
}
