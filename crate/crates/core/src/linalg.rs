//! Small dense matrix containers and exact integer rank.
//!
//! Patterns and generators are integer matrices; the learner works on a dense
//! f64 copy. Nothing here is tuned beyond row-major layout — the hot loops are
//! matvecs over a few hundred columns.

use num::bigint::BigInt;
use num::{Integer, Signed, Zero};

/// Row-major integer matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

impl IntMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<i64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        assert!(rows.iter().all(|x| x.len() == c), "ragged rows");
        Self { rows: r, cols: c, data: rows.into_iter().flatten().collect() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> i64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: i64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[i64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [i64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Copy of the column range `[lo, hi)` of every row.
    pub fn column_slice(&self, lo: usize, hi: usize) -> IntMatrix {
        assert!(lo <= hi && hi <= self.cols);
        let mut out = IntMatrix::zeros(self.rows, hi - lo);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[lo..hi]);
        }
        out
    }

    pub fn to_dense(&self) -> Dense {
        Dense { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v as f64).collect() }
    }

    /// Max over columns of the number of nonzero entries.
    pub fn max_column_degree(&self) -> usize {
        (0..self.cols)
            .map(|j| (0..self.rows).filter(|&i| self.get(i, j) != 0).count())
            .max()
            .unwrap_or(0)
    }
}

/// Row-major f64 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        assert!(rows.iter().all(|x| x.len() == c), "ragged rows");
        Self { rows: r, cols: c, data: rows.into_iter().flatten().collect() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// `out[i] = <row_i, v>`.
    pub fn matvec(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.cols);
        assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), v);
        }
    }

    /// `out[j] = sum_i row_i[j] * v[i]` (transpose apply).
    pub fn matvec_t(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.rows);
        assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for (i, &c) in v.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (o, &x) in out.iter_mut().zip(self.row(i)) {
                *o += c * x;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Exact rank over the rationals via fraction-free row elimination.
///
/// Rows are folded into an echelon basis one at a time; the cross-multiply
/// update keeps everything in BigInt and each reduced row is divided by its
/// content (gcd) to keep entries small. Intended for desk-scale matrices.
pub fn exact_rank(m: &IntMatrix) -> usize {
    exact_rank_of_rows((0..m.rows()).map(|i| m.row(i).to_vec()))
}

/// Rank of the column range `[lo, hi)`.
pub fn exact_rank_cols(m: &IntMatrix, lo: usize, hi: usize) -> usize {
    exact_rank_of_rows((0..m.rows()).map(|i| m.row(i)[lo..hi].to_vec()))
}

fn exact_rank_of_rows(rows: impl Iterator<Item = Vec<i64>>) -> usize {
    // Echelon basis: (pivot column, row), sorted by pivot column.
    let mut basis: Vec<(usize, Vec<BigInt>)> = Vec::new();
    for row in rows {
        let mut r: Vec<BigInt> = row.into_iter().map(BigInt::from).collect();
        for (piv_col, piv_row) in &basis {
            if r[*piv_col].is_zero() {
                continue;
            }
            let a = piv_row[*piv_col].clone();
            let b = r[*piv_col].clone();
            for (x, p) in r.iter_mut().zip(piv_row.iter()) {
                *x = &*x * &a - p * &b;
            }
            divide_by_content(&mut r);
        }
        if let Some(col) = r.iter().position(|x| !x.is_zero()) {
            basis.push((col, r));
            basis.sort_by_key(|(c, _)| *c);
        }
    }
    basis.len()
}

fn divide_by_content(r: &mut [BigInt]) {
    let mut g = BigInt::zero();
    for x in r.iter() {
        g = g.gcd(x);
        if g == BigInt::from(1) {
            return;
        }
    }
    if g.is_zero() {
        return;
    }
    let g = g.abs();
    for x in r.iter_mut() {
        *x = &*x / &g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_identity_and_dependent_rows() {
        let id = IntMatrix::from_rows(vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        assert_eq!(exact_rank(&id), 3);

        let dep = IntMatrix::from_rows(vec![vec![1, 2, 3], vec![2, 4, 6], vec![1, 0, 1]]);
        assert_eq!(exact_rank(&dep), 2);

        let zero = IntMatrix::zeros(4, 5);
        assert_eq!(exact_rank(&zero), 0);
    }

    #[test]
    fn rank_needs_exact_arithmetic_on_adversarial_rows() {
        // Nearly-dependent rows with large entries; f64 elimination would
        // need a tolerance, the exact route does not.
        let m = IntMatrix::from_rows(vec![
            vec![1_000_000, 999_999, 1],
            vec![999_999, 999_998, 1],
            vec![1, 1, 0],
        ]);
        // row0 - row1 = (1,1,0) = row2, so rank 2.
        assert_eq!(exact_rank(&m), 2);
    }

    #[test]
    fn column_slice_rank() {
        let m = IntMatrix::from_rows(vec![vec![1, 0, 5, 5], vec![0, 1, 5, 5]]);
        assert_eq!(exact_rank_cols(&m, 2, 4), 1);
        assert_eq!(exact_rank_cols(&m, 0, 2), 2);
    }

    #[test]
    fn matvec_matches_transpose_identity() {
        let m = Dense::from_rows(vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let mut y = vec![0.0; 2];
        m.matvec(&[1.0, 1.0, 1.0], &mut y);
        assert_eq!(y, vec![6.0, 15.0]);
        let mut z = vec![0.0; 3];
        m.matvec_t(&[1.0, 1.0], &mut z);
        assert_eq!(z, vec![5.0, 7.0, 9.0]);
    }
}
