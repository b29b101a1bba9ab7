//! Compressed sparse row matrices.

use nalgebra::DMatrix;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl Csr {
    /// Builds an n×n matrix; duplicate entries are summed and exact zeros dropped.
    pub fn from_triplets(n: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col = Vec::with_capacity(trip.len());
        let mut val: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows = Vec::with_capacity(trip.len());
        for (r, c, v) in trip {
            assert!(r < n && c < n, "triplet out of range");
            if last == Some((r, c)) {
                *val.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                col.push(c);
                val.push(v);
                last = Some((r, c));
            }
        }
        let keep: Vec<bool> = val.iter().map(|v| *v != 0.0).collect();
        let mut col2 = Vec::with_capacity(col.len());
        let mut val2 = Vec::with_capacity(val.len());
        for i in 0..col.len() {
            if keep[i] {
                row_ptr[rows[i] + 1] += 1;
                col2.push(col[i]);
                val2.push(val[i]);
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            n,
            row_ptr,
            col: col2,
            val: val2,
        }
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.val[k] * x[self.col[k]];
            }
            *yr = s;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        match self.col[lo..hi].binary_search(&c) {
            Ok(k) => self.val[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|r| self.val[self.row_ptr[r]..self.row_ptr[r + 1]].iter().sum())
            .collect()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out.push((r, self.col[k], self.val[k]));
            }
        }
        out
    }

    /// Largest |A_ij - A_ji|.
    pub fn asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for (r, c, v) in self.triplets() {
            m = m.max((v - self.get(c, r)).abs());
        }
        m
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for (r, c, v) in self.triplets() {
            d[(r, c)] += v;
        }
        d
    }

    /// Adds `d[i]` to the diagonal.
    pub fn add_diagonal(&self, d: &[f64]) -> Self {
        let mut trip = self.triplets();
        for (i, v) in d.iter().enumerate() {
            if *v != 0.0 {
                trip.push((i, i, *v));
            }
        }
        Self::from_triplets(self.n, trip)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for v in out.val.iter_mut() {
            *v *= s;
        }
        out
    }

    /// Coordinate-triplet text: a header line then `row col value` lines.
    pub fn to_triplet_text(&self) -> String {
        let mut s = format!("# n={} nnz={}\n", self.n, self.nnz());
        for (r, c, v) in self.triplets() {
            let _ = writeln!(s, "{r} {c} {v:.17e}");
        }
        s
    }
}
