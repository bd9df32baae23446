//! Sparse matrices in canonical CSR form and a banded LU solver.
//!
//! Assembly goes through [`TripletBuilder`], which sorts contributions by
//! `(row, col, value)` before summing. The summation order therefore depends
//! only on the multiset of element contributions, so the assembled matrix is
//! bitwise independent of the order in which elements were visited.

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_unstable_by(|a, b| {
            a.0.cmp(&b.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.total_cmp(&b.2))
        });
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..self.nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates `(col, value)` over the stored entries of one row.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Iterates all stored `(row, col, value)` triples in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for (j, v) in self.row(i) {
                s += v * x[j];
            }
            *yi = s;
        }
    }

    /// `y = Aᵀ x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
        y
    }

    /// Bilinear form `yᵀ A x`.
    pub fn form(&self, y: &[f64], x: &[f64]) -> f64 {
        assert_eq!(y.len(), self.nrows);
        assert_eq!(x.len(), self.ncols);
        let mut s = 0.0;
        for (i, &yi) in y.iter().enumerate() {
            let mut r = 0.0;
            for (j, v) in self.row(i) {
                r += v * x[j];
            }
            s += yi * r;
        }
        s
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut b = TripletBuilder::with_capacity(self.ncols, self.nrows, self.nnz());
        for (i, j, v) in self.iter() {
            b.add(j, i, v);
        }
        b.build()
    }

    pub fn scaled(&self, s: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Linear combination `Σ cᵢ Aᵢ` of equally sized matrices.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> CsrMatrix {
        let (nrows, ncols) = (terms[0].1.nrows, terms[0].1.ncols);
        let cap = terms.iter().map(|(_, m)| m.nnz()).sum();
        let mut b = TripletBuilder::with_capacity(nrows, ncols, cap);
        for &(c, m) in terms {
            assert_eq!((m.nrows, m.ncols), (nrows, ncols));
            for (i, j, v) in m.iter() {
                b.add(i, j, c * v);
            }
        }
        b.build()
    }

    /// Drops every entry whose row is flagged in `row_fixed` or whose column is
    /// flagged in `col_fixed`.
    pub fn without_fixed(&self, row_fixed: &[bool], col_fixed: &[bool]) -> CsrMatrix {
        assert_eq!(row_fixed.len(), self.nrows);
        assert_eq!(col_fixed.len(), self.ncols);
        let mut b = TripletBuilder::with_capacity(self.nrows, self.ncols, self.nnz());
        for (i, j, v) in self.iter() {
            if !row_fixed[i] && !col_fixed[j] {
                b.add(i, j, v);
            }
        }
        b.build()
    }

    /// Largest |A - Aᵀ| entry relative to the largest |A| entry.
    pub fn asymmetry(&self) -> f64 {
        let mut max_abs = 0.0f64;
        let mut max_diff = 0.0f64;
        for (i, j, v) in self.iter() {
            max_abs = max_abs.max(v.abs());
            max_diff = max_diff.max((v - self.get(j, i)).abs());
        }
        if max_abs == 0.0 {
            0.0
        } else {
            max_diff / max_abs
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, j, v) in self.iter() {
            d[i][j] = v;
        }
        d
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// LU factorization with partial pivoting of a banded matrix.
///
/// The input is reordered by `order` (new position → old index) before the
/// band structure is extracted, so callers can pass a bandwidth-reducing
/// ordering.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
    order: Vec<usize>,
    position: Vec<usize>,
    matrix: CsrMatrix,
    block: &'static str,
}

const REFINE_TOL: f64 = 1e-10;

impl BandLu {
    pub fn factor(matrix: &CsrMatrix, order: &[usize], block: &'static str) -> Result<Self> {
        let n = matrix.nrows();
        assert_eq!(n, matrix.ncols(), "band LU needs a square matrix");
        assert_eq!(order.len(), n);
        let mut position = vec![0usize; n];
        for (new, &old) in order.iter().enumerate() {
            position[old] = new;
        }
        let (mut kl, mut ku) = (0usize, 0usize);
        for (i, j, _) in matrix.iter() {
            let (pi, pj) = (position[i], position[j]);
            if pj < pi {
                kl = kl.max(pi - pj);
            } else {
                ku = ku.max(pj - pi);
            }
        }
        let width = 2 * kl + ku + 1;
        let mut data = vec![0.0; n * width];
        for (i, j, v) in matrix.iter() {
            let (pi, pj) = (position[i], position[j]);
            data[pi * width + (pj + kl - pi)] += v;
        }
        let mut lu = Self {
            n,
            kl,
            ku,
            width,
            data,
            pivots: vec![0; n],
            order: order.to_vec(),
            position,
            matrix: matrix.clone(),
            block,
        };
        lu.eliminate()?;
        Ok(lu)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    fn eliminate(&mut self) -> Result<()> {
        let n = self.n;
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale * 1e-300_f64.max(f64::EPSILON * 1e-6);
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let last_col = (k + self.kl + self.ku).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.at(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= tiny || best == 0.0 {
                return Err(Error::Singular {
                    block: self.block,
                    row: self.order[k],
                });
            }
            self.pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.at(k, j), self.at(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.at(k, k)];
            for i in k + 1..=last_row {
                let ik = self.at(i, k);
                let l = self.data[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[ik] = l;
                let (ri, rk) = (self.at(i, k + 1), self.at(k, k + 1));
                let len = last_col - k;
                for t in 0..len {
                    self.data[ri + t] -= l * self.data[rk + t];
                }
            }
        }
        Ok(())
    }

    fn solve_permuted(&self, b: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    b[i] -= self.data[self.at(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + self.kl + self.ku).min(n - 1) {
                s -= self.data[self.at(k, j)] * b[j];
            }
            b[k] = s / self.data[self.at(k, k)];
        }
    }

    fn solve_permuted_transpose(&self, b: &mut [f64]) {
        let n = self.n;
        // Uᵀ y = b
        for k in 0..n {
            let mut s = b[k];
            let lo = k.saturating_sub(self.kl + self.ku);
            for j in lo..k {
                s -= self.data[self.at(j, k)] * b[j];
            }
            b[k] = s / self.data[self.at(k, k)];
        }
        // apply (P_k L_k^{-T}) from the last elimination step backwards
        for k in (0..n).rev() {
            let mut s = b[k];
            for i in k + 1..=(k + self.kl).min(n - 1) {
                s -= self.data[self.at(i, k)] * b[i];
            }
            b[k] = s;
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
        }
    }

    fn raw_solve(&self, rhs: &[f64], transpose: bool) -> Vec<f64> {
        let mut work: Vec<f64> = self.order.iter().map(|&o| rhs[o]).collect();
        if transpose {
            self.solve_permuted_transpose(&mut work);
        } else {
            self.solve_permuted(&mut work);
        }
        let mut x = vec![0.0; self.n];
        for (old, xi) in x.iter_mut().enumerate() {
            *xi = work[self.position[old]];
        }
        x
    }

    fn residual(&self, x: &[f64], rhs: &[f64], transpose: bool) -> Vec<f64> {
        let ax = if transpose {
            self.matrix.tr_mul_vec(x)
        } else {
            self.matrix.mul_vec(x)
        };
        rhs.iter().zip(ax).map(|(b, a)| b - a).collect()
    }

    fn solve_checked(&self, rhs: &[f64], transpose: bool) -> Result<Vec<f64>> {
        assert_eq!(rhs.len(), self.n);
        let bnorm = norm2(rhs);
        let mut x = self.raw_solve(rhs, transpose);
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut rel = 0.0;
        for _ in 0..3 {
            let r = self.residual(&x, rhs, transpose);
            rel = norm2(&r) / bnorm;
            if rel <= REFINE_TOL * 1e-2 {
                return Ok(x);
            }
            let dx = self.raw_solve(&r, transpose);
            axpy(1.0, &dx, &mut x);
        }
        let r = self.residual(&x, rhs, transpose);
        let final_rel = norm2(&r) / bnorm;
        if final_rel <= REFINE_TOL {
            Ok(x)
        } else {
            Err(Error::NoConvergence {
                stage: self.block,
                message: format!(
                    "relative residual {final_rel:.3e} (before refinement {rel:.3e}) exceeds {REFINE_TOL:e}"
                ),
            })
        }
    }

    /// Solves `A x = b` with iterative refinement to relative residual ≤ 1e-10.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solve_checked(rhs, false)
    }

    /// Solves `Aᵀ x = b` reusing the same factorization.
    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solve_checked(rhs, true)
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, band: usize, seed: u64, zero_diag_every: usize) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n {
            for j in i.saturating_sub(band)..(i + band + 1).min(n) {
                if i == j && zero_diag_every > 0 && i % zero_diag_every == 0 {
                    continue;
                }
                b.add(i, j, rng.random_range(-1.0..1.0));
            }
        }
        b.build()
    }

    #[test]
    fn triplets_sum_independent_of_insertion_order() {
        let mut a = TripletBuilder::new(2, 2);
        let mut b = TripletBuilder::new(2, 2);
        let vals = [0.1, 1e16, -1e16, 0.3];
        for v in vals {
            a.add(0, 1, v);
        }
        for v in vals.iter().rev() {
            b.add(0, 1, *v);
        }
        assert_eq!(a.build(), b.build());
    }

    #[test]
    fn band_lu_solves_with_zero_diagonals() {
        let n = 60;
        let a = random_banded(n, 4, 7, 3);
        let order: Vec<usize> = (0..n).collect();
        let lu = BandLu::factor(&a, &order, "test").unwrap();
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b = a.mul_vec(&x_true);
        let x = lu.solve(&b).unwrap();
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-9);
        }
        let bt = a.tr_mul_vec(&x_true);
        let xt = lu.solve_transpose(&bt).unwrap();
        for (u, v) in xt.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn band_lu_respects_reordering() {
        let n = 40;
        let a = random_banded(n, 3, 11, 0);
        let order: Vec<usize> = (0..n).rev().collect();
        let lu = BandLu::factor(&a, &order, "test").unwrap();
        let b: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let x = lu.solve(&b).unwrap();
        let r = a.mul_vec(&x);
        for (u, v) in r.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut b = TripletBuilder::new(2, 2);
        b.add(0, 0, 1.0);
        b.add(0, 1, 2.0);
        b.add(1, 0, 2.0);
        b.add(1, 1, 4.0);
        let err = BandLu::factor(&b.build(), &[0, 1], "momentum").unwrap_err();
        assert!(matches!(err, Error::Singular { block: "momentum", .. }));
    }
}
