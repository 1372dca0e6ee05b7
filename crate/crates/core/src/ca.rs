//! Combined Approximations: reduced-basis prediction of the modified
//! displacement from the initial factorization.
//!
//! The basis is `U_1 = K*⁻¹F`, `U_{i+1} = −K*⁻¹ΔK U_i`; the modified system is
//! projected onto it and solved in the reduced space.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::full_solver::CholeskyFactor;
use crate::scalar::Real;
use crate::sparse::CsrMatrix;

/// Default number of basis vectors.
pub const DEFAULT_BASIS: usize = 10;
/// Largest accepted number of basis vectors.
pub const MAX_BASIS: usize = 30;
/// Relative singular-value threshold of the reduced solve.
pub const RANK_TOL: f64 = 1e-12;

/// Basis vectors as columns, each scaled to the norm of the first.
#[derive(Debug, Clone)]
pub struct BasisMatrix<T: Real> {
    pub vectors: DMatrix<T>,
    /// Factor applied to each raw recurrence vector.
    pub scales: Vec<T>,
}

impl<T: Real> BasisMatrix<T> {
    pub fn len(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.ncols() == 0
    }
}

/// Reduced stiffness, load and coefficients.
#[derive(Debug, Clone)]
pub struct ReducedSystem<T: Real> {
    pub k_r: DMatrix<T>,
    pub f_r: DVector<T>,
    pub y: DVector<T>,
    /// Numerical rank of `k_r` used by the solve.
    pub rank: usize,
}

/// How successive basis vectors are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BasisScheme {
    /// Raw recurrence, each vector rescaled to the norm of the first.
    Scaled,
    /// Each new vector is orthogonalized against its predecessors before it
    /// feeds the recurrence. The spanned space is the same in exact
    /// arithmetic, but it does not collapse onto the dominant eigenvector.
    #[default]
    Orthogonal,
}

/// Generates `s` basis vectors; each costs one pair of triangular solves.
pub fn build_basis<T: Real>(
    factor: &CholeskyFactor<T>,
    delta: &CsrMatrix<T>,
    f: &DVector<T>,
    s: usize,
) -> Result<BasisMatrix<T>> {
    let n = factor.n();
    if s == 0 {
        return Err(Error::Validation("basis count must be at least 1".into()));
    }
    if s > n {
        return Err(Error::Validation(format!("basis count {s} exceeds {n} DOFs")));
    }
    if delta.n() != n || f.len() != n {
        return Err(Error::Dimension(format!("basis inputs of size {} / {} for {n} DOFs", delta.n(), f.len())));
    }
    let mut vectors = DMatrix::zeros(n, s);
    let mut scales = Vec::with_capacity(s);
    let mut current = factor.solve(f);
    let target = current.norm();
    for i in 0..s {
        let norm = current.norm();
        let scale = if i == 0 || norm == T::zero() { T::one() } else { target / norm };
        current *= scale;
        scales.push(scale);
        vectors.set_column(i, &current);
        if i + 1 < s {
            let rhs = -delta.mul_vec(&current);
            current = if rhs.iter().all(|v| *v == T::zero()) { rhs } else { factor.solve(&rhs) };
        }
    }
    Ok(BasisMatrix { vectors, scales })
}

/// Basis built with the given [`BasisScheme`].
pub fn build_basis_with<T: Real>(
    factor: &CholeskyFactor<T>,
    delta: &CsrMatrix<T>,
    f: &DVector<T>,
    s: usize,
    scheme: BasisScheme,
) -> Result<BasisMatrix<T>> {
    if scheme == BasisScheme::Scaled {
        return build_basis(factor, delta, f, s);
    }
    let n = factor.n();
    if s == 0 {
        return Err(Error::Validation("basis count must be at least 1".into()));
    }
    if s > n {
        return Err(Error::Validation(format!("basis count {s} exceeds {n} DOFs")));
    }
    if delta.n() != n || f.len() != n {
        return Err(Error::Dimension(format!("basis inputs of size {} / {} for {n} DOFs", delta.n(), f.len())));
    }
    let mut vectors: DMatrix<T> = DMatrix::zeros(n, s);
    let mut scales = Vec::with_capacity(s);
    let mut current = factor.solve(f);
    let target = current.norm();
    let drop_tol = T::lit(1e-13);
    for i in 0..s {
        let raw_norm = current.norm();
        // Two passes of modified Gram–Schmidt.
        for _ in 0..2 {
            for j in 0..i {
                let q = vectors.column(j);
                let qq = q.dot(&q);
                if qq > T::zero() {
                    let c = q.dot(&current) / qq;
                    current -= q * c;
                }
            }
        }
        let norm = current.norm();
        let scale = if norm <= drop_tol * raw_norm || norm == T::zero() {
            current.fill(T::zero());
            T::zero()
        } else {
            target / norm
        };
        current *= scale;
        scales.push(scale);
        vectors.set_column(i, &current);
        if i + 1 < s {
            if scale == T::zero() {
                break;
            }
            let rhs = -delta.mul_vec(&current);
            current = if rhs.iter().all(|v| *v == T::zero()) { rhs } else { factor.solve(&rhs) };
        }
    }
    Ok(BasisMatrix { vectors, scales })
}

/// Symmetric reduced solve by truncated SVD, so linearly dependent basis
/// vectors are dropped rather than breaking the solve.
pub fn solve_reduced<T: Real>(k_r: &DMatrix<T>, f_r: &DVector<T>) -> Result<(DVector<T>, usize)> {
    let svd = k_r.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(T::zero(), |m, v| m.max(*v));
    let tol = smax * T::lit(RANK_TOL);
    let rank = svd.singular_values.iter().filter(|v| **v > tol && **v > T::zero()).count();
    if rank == 0 {
        if f_r.iter().all(|v| *v == T::zero()) {
            return Ok((DVector::zeros(f_r.len()), 0));
        }
        return Err(Error::Breakdown("reduced stiffness has rank 0".into()));
    }
    let y = svd
        .solve(f_r, tol)
        .map_err(|e| Error::Breakdown(format!("reduced solve failed: {e}")))?;
    Ok((y, rank))
}

/// Projects the modified system onto the basis and solves for coefficients.
pub fn reduce_and_solve<T: Real>(basis: &BasisMatrix<T>, k_m: &CsrMatrix<T>, f: &DVector<T>) -> Result<ReducedSystem<T>> {
    let ub = &basis.vectors;
    if ub.nrows() != k_m.n() || f.len() != k_m.n() {
        return Err(Error::Dimension("basis and modified system sizes differ".into()));
    }
    let mut kub = DMatrix::zeros(ub.nrows(), ub.ncols());
    for c in 0..ub.ncols() {
        kub.set_column(c, &k_m.mul_vec(&ub.column(c).into_owned()));
    }
    let mut k_r = ub.transpose() * kub;
    // Symmetrize the roundoff of the two-sided product.
    let half = T::lit(0.5);
    let kt = k_r.transpose();
    k_r = (k_r + kt) * half;
    let f_r = ub.transpose() * f;
    let (y, rank) = solve_reduced(&k_r, &f_r)?;
    Ok(ReducedSystem { k_r, f_r, y, rank })
}

/// `U = U_B y`.
pub fn combine<T: Real>(basis: &BasisMatrix<T>, y: &DVector<T>) -> DVector<T> {
    &basis.vectors * y
}

/// Outcome of a CA reanalysis.
#[derive(Debug, Clone)]
pub struct CaSolution<T: Real> {
    pub u: DVector<T>,
    pub basis: BasisMatrix<T>,
    pub reduced: ReducedSystem<T>,
}

/// Runs the whole CA reanalysis on the union DOF space.
pub fn ca_reanalyze<T: Real>(
    factor: &CholeskyFactor<T>,
    delta: &CsrMatrix<T>,
    k_m: &CsrMatrix<T>,
    f: &DVector<T>,
    s: usize,
) -> Result<CaSolution<T>> {
    ca_reanalyze_with(factor, delta, k_m, f, s, BasisScheme::default())
}

/// [`ca_reanalyze`] with an explicit basis scheme.
pub fn ca_reanalyze_with<T: Real>(
    factor: &CholeskyFactor<T>,
    delta: &CsrMatrix<T>,
    k_m: &CsrMatrix<T>,
    f: &DVector<T>,
    s: usize,
    scheme: BasisScheme,
) -> Result<CaSolution<T>> {
    if s > MAX_BASIS {
        return Err(Error::Validation(format!("basis count {s} exceeds the maximum {MAX_BASIS}")));
    }
    let basis = build_basis_with(factor, delta, f, s, scheme)?;
    let reduced = reduce_and_solve(&basis, k_m, f)?;
    let u = combine(&basis, &reduced.y);
    Ok(CaSolution { u, basis, reduced })
}
