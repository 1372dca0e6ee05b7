//! Compressed-row storage for the symmetric stiffness matrices.
//!
//! Both triangles are stored so that row slices double as column slices.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T: Real> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Zero-valued matrix over a given pattern; `rows[i]` must be sorted and unique.
    pub fn from_pattern(n: usize, rows: &[Vec<usize>]) -> Self {
        assert_eq!(rows.len(), n);
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut cols = Vec::with_capacity(rows.iter().map(|r| r.len()).sum());
        for r in rows {
            debug_assert!(r.windows(2).all(|w| w[0] < w[1]));
            cols.extend_from_slice(r);
            row_ptr.push(cols.len());
        }
        let nnz = cols.len();
        CsrMatrix {
            n,
            row_ptr,
            cols,
            vals: vec![T::zero(); nnz],
        }
    }

    pub fn from_raw(n: usize, row_ptr: Vec<usize>, cols: Vec<usize>, vals: Vec<T>) -> Self {
        assert_eq!(row_ptr.len(), n + 1);
        assert_eq!(cols.len(), vals.len());
        CsrMatrix { n, row_ptr, cols, vals }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![T::one(); n],
        }
    }

    pub fn zeros(n: usize) -> Self {
        CsrMatrix {
            n,
            row_ptr: vec![0; n + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    /// Builds from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut trip: Vec<(usize, usize, T)>) -> Self {
        trip.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(trip.len());
        let mut vals: Vec<T> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n, row_ptr, cols, vals }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn row_mut(&mut self, i: usize) -> (&[usize], &mut [T]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &mut self.vals[a..b])
    }

    pub fn values(&self) -> &[T] {
        &self.vals
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.vals
    }

    /// Storage offset of `(i, j)` if it is in the pattern.
    pub fn offset(&self, i: usize, j: usize) -> Option<usize> {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b].binary_search(&j).ok().map(|k| a + k)
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.offset(i, j).map(|k| self.vals[k]).unwrap_or_else(T::zero)
    }

    pub fn mul_vec(&self, x: &DVector<T>) -> DVector<T> {
        assert_eq!(x.len(), self.n);
        DVector::from_iterator(
            self.n,
            (0..self.n).map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).fold(T::zero(), |acc, (&j, &a)| acc + a * x[j])
            }),
        )
    }

    /// `alpha * self + beta * other` over the union pattern.
    pub fn add_scaled(&self, alpha: T, other: &CsrMatrix<T>, beta: T) -> CsrMatrix<T> {
        assert_eq!(self.n, other.n);
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        row_ptr.push(0);
        let mut cols = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut vals = Vec::with_capacity(self.nnz().max(other.nnz()));
        for i in 0..self.n {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let take_a = q >= cb.len() || (p < ca.len() && ca[p] < cb[q]);
                let take_b = p >= ca.len() || (q < cb.len() && cb[q] < ca[p]);
                if take_a {
                    cols.push(ca[p]);
                    vals.push(alpha * va[p]);
                    p += 1;
                } else if take_b {
                    cols.push(cb[q]);
                    vals.push(beta * vb[q]);
                    q += 1;
                } else {
                    cols.push(ca[p]);
                    vals.push(alpha * va[p] + beta * vb[q]);
                    p += 1;
                    q += 1;
                }
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            cols,
            vals,
        }
    }

    /// Removes stored entries that are exactly zero.
    pub fn pruned(&self) -> CsrMatrix<T> {
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                if a != T::zero() {
                    cols.push(j);
                    vals.push(a);
                }
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.vals {
            *v *= s;
        }
    }

    pub fn max_abs(&self) -> T {
        self.vals.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> T {
        self.vals.iter().fold(T::zero(), |m, v| m + *v * *v).sqrt()
    }

    /// Largest |A_ij - A_ji|.
    pub fn asymmetry(&self) -> T {
        let mut m = T::zero();
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                m = m.max((a - self.get(j, i)).abs());
            }
        }
        m
    }

    /// Row sums of absolute values.
    pub fn abs_row_sums(&self) -> DVector<T> {
        DVector::from_iterator(
            self.n,
            (0..self.n).map(|i| self.row(i).1.iter().fold(T::zero(), |a, v| a + v.abs())),
        )
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                d[(i, j)] += a;
            }
        }
        d
    }

    pub fn from_dense(d: &DMatrix<T>) -> Self {
        let n = d.nrows();
        let mut trip = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if d[(i, j)] != T::zero() {
                    trip.push((i, j, d[(i, j)]));
                }
            }
        }
        Self::from_triplets(n, trip)
    }

    /// Zeros row and column `dof` and puts `diag` on the diagonal (which is
    /// inserted into the pattern if absent).
    pub fn constrain(&mut self, dofs: &[usize], diag: T) {
        if dofs.is_empty() {
            return;
        }
        let mut mark = vec![false; self.n];
        for &d in dofs {
            mark[d] = true;
        }
        let mut missing = Vec::new();
        for i in 0..self.n {
            let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut has_diag = false;
            for k in a..b {
                let j = self.cols[k];
                if mark[i] || mark[j] {
                    self.vals[k] = if i == j && mark[i] { diag } else { T::zero() };
                }
                if i == j {
                    has_diag = true;
                }
            }
            if mark[i] && !has_diag {
                missing.push(i);
            }
        }
        if !missing.is_empty() {
            let trip: Vec<_> = missing.iter().map(|&i| (i, i, diag)).collect();
            *self = self.add_scaled(T::one(), &CsrMatrix::from_triplets(self.n, trip), T::one());
        }
    }

    /// Sets `A_ii += v` for each listed DOF.
    pub fn add_to_diagonal(&mut self, dofs: &[usize], v: T) {
        if dofs.is_empty() {
            return;
        }
        let trip: Vec<_> = dofs.iter().map(|&i| (i, i, v)).collect();
        *self = self.add_scaled(T::one(), &CsrMatrix::from_triplets(self.n, trip), T::one());
    }

    /// Re-indexes into a larger space through a strictly increasing map
    /// `old index -> new index`; new rows without a preimage are empty.
    pub fn embed(&self, new_n: usize, map: &[usize]) -> CsrMatrix<T> {
        assert_eq!(map.len(), self.n);
        debug_assert!(map.windows(2).all(|w| w[0] < w[1]));
        let mut row_ptr = vec![0usize; new_n + 1];
        for i in 0..self.n {
            row_ptr[map[i] + 1] = self.row_ptr[i + 1] - self.row_ptr[i];
        }
        for i in 0..new_n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let cols = self.cols.iter().map(|&j| map[j]).collect();
        CsrMatrix {
            n: new_n,
            row_ptr,
            cols,
            vals: self.vals.clone(),
        }
    }

    /// Rows with at least one nonzero entry.
    pub fn nonzero_rows(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| self.row(i).1.iter().any(|v| *v != T::zero()))
            .collect()
    }
}
