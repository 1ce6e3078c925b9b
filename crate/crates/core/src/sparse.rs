//! Compressed sparse row storage for relation matrices.
//!
//! Two shapes are used. [`SparseMatrix`] holds concrete non-negative values.
//! [`TransitionTemplate`] holds only a sparsity pattern whose entries point
//! into a parameter vector, so that a relation and its transpose can share
//! one learnable weight per edge.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from unordered triples. Duplicate coordinates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, v) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::InvalidArgument(format!(
                    "entry ({r}, {c}) outside a {rows}x{cols} matrix"
                )));
            }
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "entry ({r}, {c}) has invalid value {v}"
                )));
            }
        }
        entries.sort_by_key(|e| (e.0, e.1));

        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    /// Coordinate-sorted `(row, col, value)` triples.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// Row-vector product `x · M`, skipping zero entries of `x`.
    pub fn vecmat(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "vector length must equal row count");
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += xr * v;
            }
        }
        out
    }

    pub fn transpose(&self) -> SparseMatrix {
        SparseMatrix::from_triplets(self.cols, self.rows, self.triplets().map(|(r, c, v)| (c, r, v)))
            .expect("transpose of a valid matrix is valid")
    }

    pub fn density(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        self.nnz() as f64 / (self.rows as f64 * self.cols as f64)
    }
}

/// Sparsity pattern of a relation matrix whose entries are parameter slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionTemplate {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    slots: Vec<usize>,
}

impl TransitionTemplate {
    /// `edges` must be sorted and free of duplicates; slot `k` belongs to
    /// `edges[k]`. When `transposed` is set the pattern is that of the
    /// transpose while slots keep pointing at the original edges.
    pub fn from_edges(rows: usize, cols: usize, edges: &[(usize, usize)], transposed: bool) -> Self {
        let (out_rows, out_cols) = if transposed { (cols, rows) } else { (rows, cols) };
        let mut entries: Vec<(usize, usize, usize)> = edges
            .iter()
            .enumerate()
            .map(|(slot, &(s, d))| if transposed { (d, s, slot) } else { (s, d, slot) })
            .collect();
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = vec![0usize; out_rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut slots = Vec::with_capacity(entries.len());
        for (r, c, slot) in entries {
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            slots.push(slot);
        }
        for r in 0..out_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        TransitionTemplate {
            rows: out_rows,
            cols: out_cols,
            row_ptr,
            col_idx,
            slots,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.slots.len()
    }

    /// Column indices and parameter slots of row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[usize]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.slots[span])
    }

    /// Materializes the pattern with `weights[slot]` as values.
    pub fn bind(&self, weights: &[f64]) -> Result<SparseMatrix> {
        SparseMatrix::from_triplets(
            self.rows,
            self.cols,
            (0..self.rows).flat_map(|r| {
                let (cols, slots) = self.row(r);
                cols.iter().zip(slots).map(move |(&c, &s)| (r, c, weights[s]))
            }),
        )
    }
}
