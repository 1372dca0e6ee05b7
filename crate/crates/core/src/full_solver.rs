//! Direct solver: envelope (profile) Cholesky factorization under a
//! bandwidth-reducing permutation.
//!
//! The factor is stored row by row from the first nonzero column of each row
//! to the diagonal. All indices handed to or returned from the public solve
//! routines are in original DOF numbering unless the name says `perm`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ordering::{self, Ordering, Permutation};
use crate::scalar::Real;
use crate::sparse::CsrMatrix;

/// Lower-triangular factor `L` with `P K Pᵀ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor<T: Real> {
    n: usize,
    /// First stored column of each row (permuted numbering).
    first: Vec<usize>,
    /// Offset of `L(i, first[i])` in `data`.
    start: Vec<usize>,
    data: Vec<T>,
    perm: Permutation,
}

/// Relative pivot threshold below which the matrix is declared singular.
pub const PIVOT_TOL: f64 = 1e-10;

impl<T: Real> CholeskyFactor<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn permutation(&self) -> &Permutation {
        &self.perm
    }

    /// Number of stored entries (envelope plus diagonal).
    pub fn stored(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn first(&self, i: usize) -> usize {
        self.first[i]
    }

    /// Stored part of row `i`, columns `first(i)..=i` (permuted numbering).
    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[self.start[i]..self.start[i] + (i - self.first[i] + 1)]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let len = i - self.first[i] + 1;
        &mut self.data[self.start[i]..self.start[i] + len]
    }

    /// `L(i, j)` in permuted numbering; zero outside the envelope.
    pub fn get(&self, i: usize, j: usize) -> T {
        if j > i || j < self.first[i] {
            T::zero()
        } else {
            self.data[self.start[i] + j - self.first[i]]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        assert!(j <= i && j >= self.first[i], "entry outside envelope");
        let k = self.start[i] + j - self.first[i];
        self.data[k] = v;
    }

    /// Rows `r > j` whose envelope reaches column `j`.
    pub fn column_rows(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        ((j + 1)..self.n).filter(move |&r| self.first[r] <= j)
    }

    /// Factor of the same matrix embedded in a larger space whose extra DOFs
    /// are decoupled with unit diagonal. `map[old] = new` must be injective;
    /// the extra DOFs are appended at the end of the elimination order.
    pub fn embed(&self, new_n: usize, map: &[usize]) -> CholeskyFactor<T> {
        assert_eq!(map.len(), self.n);
        let mut covered = vec![false; new_n];
        let mut perm: Vec<usize> = self.perm.perm.iter().map(|&old| map[old]).collect();
        for &m in map {
            covered[m] = true;
        }
        let mut first = self.first.clone();
        let mut start = self.start.clone();
        let mut data = self.data.clone();
        for (dof, _) in covered.iter().enumerate().filter(|(_, c)| !**c) {
            let i = perm.len();
            perm.push(dof);
            first.push(i);
            start.push(data.len());
            data.push(T::one());
        }
        CholeskyFactor {
            n: new_n,
            first,
            start,
            data,
            perm: Permutation::from_perm(perm),
        }
    }

    /// Dense `L` in permuted numbering (tests and small oracles).
    pub fn to_dense(&self) -> DMatrix<T> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (k, v) in self.row(i).iter().enumerate() {
                l[(i, self.first[i] + k)] = *v;
            }
        }
        l
    }

    /// Permutes an original-numbering vector into elimination order.
    pub fn to_perm(&self, v: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(self.n, self.perm.perm.iter().map(|&old| v[old]))
    }

    /// Inverse of [`to_perm`](Self::to_perm).
    pub fn from_perm(&self, v: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(self.n, self.perm.inv.iter().map(|&new| v[new]))
    }

    /// In place `x ← L⁻¹ x` (permuted numbering), assuming `x[..start] = 0`.
    /// Returns the first index whose result is nonzero-eligible (`start`).
    pub fn forward_from(&self, x: &mut [T], start: usize) {
        for i in start..self.n {
            let f = self.first[i].max(start);
            let row = self.row(i);
            let off = self.first[i];
            let mut s = x[i];
            for j in f..i {
                s -= row[j - off] * x[j];
            }
            x[i] = s / row[i - off];
        }
    }

    /// In place `x ← L⁻¹ x` (permuted numbering).
    pub fn forward(&self, x: &mut [T]) {
        let start = x.iter().position(|v| *v != T::zero()).unwrap_or(self.n);
        self.forward_from(x, start);
    }

    /// In place `x ← L⁻ᵀ x` (permuted numbering).
    pub fn backward(&self, x: &mut [T]) {
        for i in (0..self.n).rev() {
            let row = self.row(i);
            let off = self.first[i];
            let xi = x[i] / row[i - off];
            x[i] = xi;
            if xi != T::zero() {
                for j in off..i {
                    x[j] -= row[j - off] * xi;
                }
            }
        }
    }

    /// Solves `K u = f` in original numbering.
    pub fn solve(&self, f: &DVector<T>) -> DVector<T> {
        assert_eq!(f.len(), self.n, "right-hand side length");
        let mut x = self.to_perm(f);
        self.forward(x.as_mut_slice());
        self.backward(x.as_mut_slice());
        self.from_perm(&x)
    }

    /// Solves for every column of `b`.
    pub fn solve_many(&self, b: &DMatrix<T>) -> DMatrix<T> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for c in 0..b.ncols() {
            let col = self.solve(&b.column(c).into_owned());
            out.set_column(c, &col);
        }
        out
    }
}

/// Factorizes a symmetric positive definite matrix with the given ordering.
pub fn factorize_with<T: Real>(k: &CsrMatrix<T>, ord: &Ordering) -> Result<CholeskyFactor<T>> {
    let perm = ordering::compute(k, ord);
    factorize_permuted(k, perm)
}

/// Factorizes with reverse Cuthill–McKee ordering.
pub fn factorize<T: Real>(k: &CsrMatrix<T>) -> Result<CholeskyFactor<T>> {
    factorize_with(k, &Ordering::Rcm)
}

/// Factorizes `P K Pᵀ` for an explicit permutation.
pub fn factorize_permuted<T: Real>(k: &CsrMatrix<T>, perm: Permutation) -> Result<CholeskyFactor<T>> {
    let n = k.n();
    if perm.len() != n {
        return Err(Error::Dimension(format!("permutation of {} for matrix of {n}", perm.len())));
    }
    let mut first = vec![0usize; n];
    for new in 0..n {
        let (c, v) = k.row(perm.perm[new]);
        first[new] = c
            .iter()
            .zip(v)
            .filter(|(_, x)| **x != T::zero())
            .map(|(&j, _)| perm.inv[j])
            .min()
            .unwrap_or(new)
            .min(new);
    }
    let mut start = vec![0usize; n];
    let mut total = 0usize;
    for i in 0..n {
        start[i] = total;
        total += i - first[i] + 1;
    }
    let mut data = vec![T::zero(); total];
    // Lower triangle of the permuted matrix into the envelope.
    for new in 0..n {
        let (c, v) = k.row(perm.perm[new]);
        for (&j, &x) in c.iter().zip(v) {
            let jn = perm.inv[j];
            if jn <= new && x != T::zero() {
                data[start[new] + jn - first[new]] += x;
            }
        }
    }
    let tol = T::lit(PIVOT_TOL);
    for i in 0..n {
        let fi = first[i];
        let si = start[i];
        for j in fi..i {
            let fj = first[j];
            let sj = start[j];
            let k0 = fi.max(fj);
            let mut s = data[si + j - fi];
            for kk in k0..j {
                s -= data[si + kk - fi] * data[sj + kk - fj];
            }
            data[si + j - fi] = s / data[sj + j - fj];
        }
        let aii = data[si + i - fi];
        let mut d = aii;
        for kk in fi..i {
            let v = data[si + kk - fi];
            d -= v * v;
        }
        if !(d > tol * aii.abs()) || !d.is_finite_value() {
            let partial = CholeskyFactor {
                n: i,
                first: first[..i].to_vec(),
                start: start[..i].to_vec(),
                data: data[..si].to_vec(),
                perm: Permutation::identity(i),
            };
            let mut w: Vec<T> = vec![T::zero(); i];
            for kk in fi..i {
                w[kk] = data[si + kk - fi];
            }
            partial.backward(&mut w);
            let mut null = vec![0.0f64; n];
            for (kk, v) in w.iter().enumerate() {
                null[perm.perm[kk]] = -v.as_f64();
            }
            null[perm.perm[i]] = 1.0;
            return Err(Error::RigidBody {
                dof: perm.perm[i],
                null_vector: null,
            });
        }
        data[si + i - fi] = d.sqrt();
    }
    Ok(CholeskyFactor {
        n,
        first,
        start,
        data,
        perm,
    })
}

/// Factorizes and solves in one call.
pub fn solve_system<T: Real>(k: &CsrMatrix<T>, f: &DVector<T>) -> Result<DVector<T>> {
    Ok(factorize(k)?.solve(f))
}

/// `‖K u − f‖ / ‖f‖` (absolute norm when `f = 0`).
pub fn relative_residual<T: Real>(k: &CsrMatrix<T>, u: &DVector<T>, f: &DVector<T>) -> f64 {
    let r = (k.mul_vec(u) - f).norm().as_f64();
    let nf = f.norm().as_f64();
    if nf > 0.0 {
        r / nf
    } else {
        r
    }
}
