//! Compressed sparse row storage for symmetric matrices (both triangles kept).

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;

use faer::Mat;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparsityPattern {
    /// Pattern coupling every pair of indices that share an element.
    pub fn from_elements<'a, I>(n: usize, elements: I) -> Self
    where
        I: IntoIterator<Item = &'a [usize]>,
    {
        let mut rows: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for el in elements {
            for &i in el {
                rows[i].extend(el.iter().copied());
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in rows {
            col_idx.extend(r);
            row_ptr.push(col_idx.len());
        }
        Self { n, row_ptr, col_idx }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[a..b].binary_search(&j).ok().map(|p| a + p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymCsr {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl SymCsr {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    /// Dense-pattern matrix from rows; must be square and symmetric.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Validation("matrix must be square".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if rows[i][j] != rows[j][i] {
                    return Err(Error::Validation(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        let all: Vec<usize> = (0..n).collect();
        let pattern = SparsityPattern::from_elements(n, std::iter::once(all.as_slice()));
        let values = rows.iter().flatten().copied().collect();
        Ok(Self {
            pattern: Arc::new(pattern),
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Adds `v` at `(i, j)`; the entry must be in the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self
            .pattern
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) is outside the sparsity pattern"));
        self.values[p] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.position(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.pattern.row_ptr[i], self.pattern.row_ptr[i + 1]);
        self.pattern.col_idx[a..b]
            .iter()
            .copied()
            .zip(self.values[a..b].iter().copied())
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n(), "vector length does not match the matrix");
        (0..self.n())
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.matvec(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// `self + alpha·other` on the same pattern.
    pub fn axpy(&self, alpha: f64, other: &SymCsr) -> Result<SymCsr> {
        if self.pattern != other.pattern {
            return Err(Error::Validation("matrices have different sparsity patterns".into()));
        }
        Ok(SymCsr {
            pattern: Arc::clone(&self.pattern),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        })
    }

    pub fn scale(&self, alpha: f64) -> SymCsr {
        SymCsr {
            pattern: Arc::clone(&self.pattern),
            values: self.values.iter().map(|v| v * alpha).collect(),
        }
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.n(), self.n());
        for i in 0..self.n() {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn norm_fro(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|A_ij − A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n() {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Writes the lower triangle as `i j value` lines (0-based).
    pub fn write_lower_triplets<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for i in 0..self.n() {
            for (j, v) in self.row(i) {
                if j <= i {
                    writeln!(out, "{i} {j} {v:.17e}")?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SymCsr {
        let els: Vec<Vec<usize>> = vec![vec![0, 1], vec![1, 2]];
        let pattern = SparsityPattern::from_elements(3, els.iter().map(Vec::as_slice));
        let mut a = SymCsr::zeros(Arc::new(pattern));
        for el in &els {
            a.add(el[0], el[0], 1.0);
            a.add(el[1], el[1], 1.0);
            a.add(el[0], el[1], -1.0);
            a.add(el[1], el[0], -1.0);
        }
        a
    }

    #[test]
    fn assembly_matvec_and_dense_agree() {
        let a = small();
        assert_eq!(a.pattern().nnz(), 7);
        assert_eq!(a.get(0, 2), 0.0);
        assert_eq!(a.get(1, 1), 2.0);
        let x = [1.0, 2.0, 4.0];
        assert_eq!(a.matvec(&x), vec![-1.0, -1.0, 2.0]);
        let d = a.to_dense();
        assert_eq!(d[(2, 1)], -1.0);
        assert_eq!(a.asymmetry(), 0.0);
        assert_eq!(a.bilinear(&x, &x), 1.0 + 4.0);
    }

    #[test]
    fn dense_constructor() {
        let a = SymCsr::from_dense(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        assert_eq!(a.get(1, 0), 1.0);
        assert_eq!(a.matvec(&[1.0, 1.0]), vec![3.0, 4.0]);
        assert!(SymCsr::from_dense(&[vec![2.0, 1.0], vec![0.0, 3.0]]).is_err());
    }

    #[test]
    fn lower_triplet_dump() {
        let mut buf = Vec::new();
        small().write_lower_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("1 0 -1.0"));
    }

    #[test]
    #[should_panic(expected = "outside the sparsity pattern")]
    fn adding_outside_pattern_panics() {
        small().add(0, 2, 1.0);
    }
}
