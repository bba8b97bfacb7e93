//! Named-column dense feature matrices.

use std::collections::HashSet;
use std::io::{Read, Write};

use ndarray::{s, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense numeric matrix with one id per row and a unique name per column.
/// Every entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    row_ids: Vec<String>,
    columns: Vec<String>,
    data: Array2<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(row_ids: Vec<String>, columns: Vec<String>, data: Array2<T>) -> Result<Self> {
        if data.nrows() != row_ids.len() {
            return Err(Error::Matrix(format!(
                "{} row ids for {} rows",
                row_ids.len(),
                data.nrows()
            )));
        }
        if data.ncols() != columns.len() {
            return Err(Error::Matrix(format!(
                "{} column names for {} columns",
                columns.len(),
                data.ncols()
            )));
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.as_str()) {
                return Err(Error::Matrix(format!("duplicate column `{c}`")));
            }
        }
        if let Some(((r, c), v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Matrix(format!(
                "non-finite value {v} at row `{}`, column `{}`",
                row_ids[r], columns[c]
            )));
        }
        Ok(FeatureMatrix {
            row_ids,
            columns,
            data,
        })
    }

    pub fn from_rows(row_ids: Vec<String>, columns: Vec<String>, rows: &[Vec<T>]) -> Result<Self> {
        let d = columns.len();
        let mut data = Array2::zeros((rows.len(), d));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            data.row_mut(i).assign(&ArrayView1::from(row.as_slice()));
        }
        Self::new(row_ids, columns, data)
    }

    pub fn empty(columns: Vec<String>) -> Result<Self> {
        let d = columns.len();
        Self::new(Vec::new(), columns, Array2::zeros((0, d)))
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    pub fn into_data(self) -> Array2<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.data.row(i)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Concatenates columns; both matrices must list the same row ids.
    pub fn hstack(&self, other: &FeatureMatrix<T>) -> Result<Self> {
        if self.row_ids != other.row_ids {
            return Err(Error::Matrix("hstack: row ids differ".into()));
        }
        let data = ndarray::concatenate(Axis(1), &[self.data.view(), other.data.view()])
            .map_err(|e| Error::Matrix(e.to_string()))?;
        let mut columns = self.columns.clone();
        columns.extend(other.columns.iter().cloned());
        Self::new(self.row_ids.clone(), columns, data)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        FeatureMatrix {
            row_ids: rows.iter().map(|&r| self.row_ids[r].clone()).collect(),
            columns: self.columns.clone(),
            data: self.data.select(Axis(0), rows),
        }
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        FeatureMatrix {
            row_ids: self.row_ids[start..end].to_vec(),
            columns: self.columns.clone(),
            data: self.data.slice(s![start..end, ..]).to_owned(),
        }
    }

    /// Writes `id,<columns...>` then one line per row. An optional comment is
    /// emitted first as a `#`-prefixed line.
    pub fn write_csv<W: Write>(&self, out: W, comment: Option<&str>) -> Result<()> {
        let mut out = out;
        if let Some(c) = comment {
            writeln!(out, "# {c}").map_err(|e| Error::io("<csv>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in self.row_ids.iter().zip(self.data.rows()) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(input);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("id") {
            return Err(Error::Matrix("first CSV column must be `id`".into()));
        }
        let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            ids.push(rec.get(0).unwrap_or_default().to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.parse::<f64>()
                        .map(T::of)
                        .map_err(|e| Error::Matrix(format!("row {}: {e}", i + 1)))
                })
                .collect::<Result<Vec<T>>>()?;
            rows.push(row);
        }
        Self::from_rows(ids, columns, &rows)
    }
}

/// Per-column mean/std fitted on one matrix and applied to others. Columns
/// with zero spread are centered but not scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(data: &Array2<T>) -> Self {
        let n = data.nrows();
        let mut mean = vec![T::zero(); data.ncols()];
        let mut scale = vec![T::one(); data.ncols()];
        if n == 0 {
            return Standardizer { mean, scale };
        }
        for (j, col) in data.columns().into_iter().enumerate() {
            let m = col.iter().copied().sum::<T>() / T::of_usize(n);
            let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / T::of_usize(n);
            mean[j] = m;
            let sd = var.sqrt();
            if sd > T::of(1e-12) {
                scale[j] = sd;
            }
        }
        Standardizer { mean, scale }
    }

    pub fn transform(&self, data: &Array2<T>) -> Array2<T> {
        let mut out = data.clone();
        for mut row in out.rows_mut() {
            for ((v, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn transform_matrix(&self, m: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>> {
        FeatureMatrix::new(
            m.row_ids().to_vec(),
            m.columns().to_vec(),
            self.transform(m.data()),
        )
    }
}
