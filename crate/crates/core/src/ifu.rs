//! Indirect Factorization Updating: exact reanalysis from the initial
//! Cholesky factor.
//!
//! Unbalanced DOFs (rows whose equation changed or whose residual is nonzero)
//! are constrained out of the initial factor; the dropped factor columns form
//! a low-rank correction handled by the Sherman–Morrison–Woodbury identity.
//! The displacement correction is a combination of fundamental solutions
//! that satisfy every balanced equation, with coefficients fixed by the
//! unbalanced ones.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::full_solver::{factorize, CholeskyFactor};
use crate::scalar::Real;
use crate::sparse::CsrMatrix;

/// Relative tolerance separating unbalanced DOFs from assembly noise.
pub const UNBALANCED_TOL: f64 = 1e-12;
/// Residual above which the update is rejected in favour of refactorization.
pub const RESIDUAL_TOL: f64 = 1e-9;

/// `δ = F − K_m U*`.
pub fn residual<T: Real>(k_m: &CsrMatrix<T>, f: &DVector<T>, u_star: &DVector<T>) -> DVector<T> {
    f - k_m.mul_vec(u_star)
}

/// Row sums of `|K_m − K*|` plus `|δ|`, from the stiffness change.
pub fn measurement_from_delta<T: Real>(delta: &CsrMatrix<T>, residual: &DVector<T>) -> DVector<T> {
    delta.abs_row_sums() + residual.abs()
}

/// Row sums of `|K_m − K*|` plus `|δ|`.
pub fn measurement<T: Real>(k_m: &CsrMatrix<T>, k_star: &CsrMatrix<T>, residual: &DVector<T>) -> DVector<T> {
    measurement_from_delta(&k_m.add_scaled(T::one(), k_star, -T::one()), residual)
}

/// Default threshold for [`unbalanced_set`].
pub fn default_tolerance<T: Real>(meas: &DVector<T>) -> T {
    meas.amax() * T::lit(UNBALANCED_TOL)
}

/// Threshold that also sits above the roundoff floor of the residual, which
/// is never exactly zero even when nothing changed.
pub fn noise_tolerance<T: Real>(meas: &DVector<T>, k_m: &CsrMatrix<T>, u_star: &DVector<T>, f: &DVector<T>) -> T {
    let floor = k_m.max_abs() * u_star.amax() + f.amax();
    meas.amax().max(floor) * T::lit(UNBALANCED_TOL)
}

/// Ascending indices with `|Δ_meas(i)| > tol`.
pub fn unbalanced_set<T: Real>(meas: &DVector<T>, tol: T) -> Vec<usize> {
    (0..meas.len()).filter(|&i| meas[i].abs() > tol).collect()
}

/// Initial factor with unbalanced DOFs constrained out, plus the columns
/// removed from it. `A_c = L Lᵀ + V Vᵀ` where `A_c` is the initial matrix
/// with the unbalanced rows and columns replaced by identity.
#[derive(Debug, Clone)]
pub struct ConstrainedFactor<T: Real> {
    pub factor: CholeskyFactor<T>,
    /// Removed columns in elimination order numbering, one per entry of `s_d`.
    pub v: DMatrix<T>,
    /// Unbalanced DOFs (original numbering), ascending.
    pub s_d: Vec<usize>,
}

/// Constrains a copy of `l0` at the DOFs `s_d`.
///
/// Columns are extracted from the highest elimination position down, so each
/// extracted column already has the rows of later-processed DOFs removed.
pub fn constrain_factor<T: Real>(l0: &CholeskyFactor<T>, s_d: &[usize]) -> ConstrainedFactor<T> {
    let n = l0.n();
    let mut l = l0.clone();
    let inv = &l0.permutation().inv;
    let mut order: Vec<usize> = (0..s_d.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(inv[s_d[i]]));
    let mut v = DMatrix::zeros(n, s_d.len());
    for i in order {
        let p = inv[s_d[i]];
        let rows: Vec<usize> = l.column_rows(p).collect();
        for &r in &rows {
            v[(r, i)] = l.get(r, p);
            l.set(r, p, T::zero());
        }
        for x in l.row_mut(p) {
            *x = T::zero();
        }
        l.set(p, p, T::one());
    }
    ConstrainedFactor {
        factor: l,
        v,
        s_d: s_d.to_vec(),
    }
}

/// Right-hand sides of the fundamental solutions (original numbering).
///
/// Column `i` carries `−K_m(:, S_d(i))` on the balanced rows and the unit
/// vector on the unbalanced ones, so that `A_c b = r` reproduces the balanced
/// equations with `b(S_d) = e_i`.
pub fn constraint_rhs<T: Real>(k_m: &CsrMatrix<T>, s_d: &[usize]) -> DMatrix<T> {
    let n = k_m.n();
    let mut in_s = vec![false; n];
    for &s in s_d {
        in_s[s] = true;
    }
    let mut r = DMatrix::zeros(n, s_d.len());
    for (i, &s) in s_d.iter().enumerate() {
        // K_m is symmetric: column s equals row s.
        let (cols, vals) = k_m.row(s);
        for (&j, &a) in cols.iter().zip(vals) {
            if !in_s[j] {
                r[(j, i)] = -a;
            }
        }
        r[(s, i)] = T::one();
    }
    r
}

fn forward_cols<T: Real>(l: &CholeskyFactor<T>, cols: &mut DMatrix<T>) {
    let n = l.n();
    let mut data: Vec<Vec<T>> = (0..cols.ncols()).map(|c| cols.column(c).iter().copied().collect()).collect();
    data.par_iter_mut().for_each(|x| {
        let start = x.iter().position(|v| *v != T::zero()).unwrap_or(n);
        l.forward_from(x, start);
    });
    for (c, x) in data.into_iter().enumerate() {
        cols.set_column(c, &DVector::from_vec(x));
    }
}

fn backward_cols<T: Real>(l: &CholeskyFactor<T>, cols: &mut DMatrix<T>) {
    let mut data: Vec<Vec<T>> = (0..cols.ncols()).map(|c| cols.column(c).iter().copied().collect()).collect();
    data.par_iter_mut().for_each(|x| l.backward(x));
    for (c, x) in data.into_iter().enumerate() {
        cols.set_column(c, &DVector::from_vec(x));
    }
}

fn permute_rows<T: Real>(l: &CholeskyFactor<T>, m: &DMatrix<T>) -> DMatrix<T> {
    let perm = &l.permutation().perm;
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(perm[r], c)])
}

fn unpermute_rows<T: Real>(l: &CholeskyFactor<T>, m: &DMatrix<T>) -> DMatrix<T> {
    let inv = &l.permutation().inv;
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(inv[r], c)])
}

/// Solves `(L Lᵀ + V Vᵀ) B = R` by the Sherman–Morrison–Woodbury identity,
/// every `A⁻¹` being a pair of triangular solves on the constrained factor.
pub fn fundamental_solutions<T: Real>(cf: &ConstrainedFactor<T>, r: &DMatrix<T>) -> Result<DMatrix<T>> {
    let l = &cf.factor;
    let a_inv = |m: &DMatrix<T>| {
        let mut x = m.clone();
        forward_cols(l, &mut x);
        backward_cols(l, &mut x);
        x
    };
    let rp = permute_rows(l, r);
    let a_r = a_inv(&rp);
    if cf.v.ncols() == 0 {
        return Ok(unpermute_rows(l, &a_r));
    }
    let a_v = a_inv(&cf.v);
    let g = DMatrix::identity(cf.v.ncols(), cf.v.ncols()) + cf.v.transpose() * &a_v;
    let corr = g
        .lu()
        .solve(&(cf.v.transpose() * &a_r))
        .ok_or_else(|| Error::Breakdown("capacitance matrix I + VᵀA⁻¹V is singular".into()))?;
    Ok(unpermute_rows(l, &(a_r - a_v * corr)))
}

/// `A_c x`: the initial matrix with unbalanced rows and columns replaced by
/// identity, applied to `x`.
pub fn constrained_apply<T: Real>(k_star: &CsrMatrix<T>, s_d: &[usize], x: &DVector<T>) -> DVector<T> {
    let n = k_star.n();
    let mut in_s = vec![false; n];
    for &s in s_d {
        in_s[s] = true;
    }
    DVector::from_fn(n, |i, _| {
        if in_s[i] {
            return x[i];
        }
        let (c, v) = k_star.row(i);
        c.iter()
            .zip(v)
            .filter(|(j, _)| !in_s[**j])
            .fold(T::zero(), |acc, (&j, &a)| acc + a * x[j])
    })
}

/// Outcome of an IFU reanalysis.
#[derive(Debug, Clone)]
pub struct IfuSolution<T: Real> {
    pub u: DVector<T>,
    /// Unbalanced DOFs, ascending.
    pub s_d: Vec<usize>,
    /// Reduced matrix of the unbalanced equations.
    pub k_r: DMatrix<T>,
    pub y: DVector<T>,
    /// `‖K_m U − F‖ / ‖F‖`.
    pub relative_residual: f64,
    /// `‖A_c ΔU − R y‖ / ‖R y‖` of the fundamental-solution system.
    pub fundamental_residual: f64,
    /// The update failed its residual check and `K_m` was refactorized.
    pub refactorized: bool,
}

fn rel_residual<T: Real>(k_m: &CsrMatrix<T>, u: &DVector<T>, f: &DVector<T>) -> f64 {
    let r = (f - k_m.mul_vec(u)).norm().as_f64();
    let fnorm = f.norm().as_f64();
    if fnorm == 0.0 {
        r
    } else {
        r / fnorm
    }
}

/// Exact reanalysis on the union DOF space.
///
/// `l0` factors `k_star`, `delta = K_m − K*`, and `u_star` solves the initial
/// system. The fundamental solutions are never formed column by column: with
/// `W_R = L⁻¹R`, `W_V = L⁻¹V` and `G = I + W_VᵀW_V`, the reduced matrix is
/// `K_R = W_KᵀW_R − W_KᵀW_V G⁻¹ W_VᵀW_R` where `W_K = L⁻¹K_m(:, S_d)`.
pub fn ifu_reanalyze<T: Real>(
    l0: &CholeskyFactor<T>,
    k_star: &CsrMatrix<T>,
    delta: &CsrMatrix<T>,
    k_m: &CsrMatrix<T>,
    f: &DVector<T>,
    u_star: &DVector<T>,
) -> Result<IfuSolution<T>> {
    let n = l0.n();
    if k_star.n() != n || k_m.n() != n || delta.n() != n || f.len() != n || u_star.len() != n {
        return Err(Error::Dimension("IFU inputs must share the union DOF space".into()));
    }
    let dres = residual(k_m, f, u_star);
    let meas = measurement_from_delta(delta, &dres);
    let tol = noise_tolerance(&meas, k_m, u_star, f);
    let s_d = unbalanced_set(&meas, tol);
    if s_d.is_empty() {
        if delta.max_abs() > tol {
            return Err(Error::Breakdown("stiffness changed but no DOF is unbalanced".into()));
        }
        return Ok(IfuSolution {
            u: u_star.clone(),
            s_d,
            k_r: DMatrix::zeros(0, 0),
            y: DVector::zeros(0),
            relative_residual: rel_residual(k_m, u_star, f),
            fundamental_residual: 0.0,
            refactorized: false,
        });
    }
    let nd = s_d.len();
    let cf = constrain_factor(l0, &s_d);
    let l = &cf.factor;
    let inv = &l.permutation().inv;
    let r = constraint_rhs(k_m, &s_d);
    let mut w_r = permute_rows(l, &r);
    forward_cols(l, &mut w_r);
    let mut w_v = cf.v.clone();
    forward_cols(l, &mut w_v);

    // Every column is zero above the first elimination position it touches.
    let first_nz = |m: &DMatrix<T>| {
        (0..m.ncols())
            .map(|c| m.column(c).iter().position(|v| *v != T::zero()).unwrap_or(n))
            .min()
            .unwrap_or(n)
    };
    let s0 = first_nz(&w_r).min(first_nz(&w_v));
    let tail = n - s0;
    let wr = w_r.rows(s0, tail).into_owned();
    let wv = w_v.rows(s0, tail).into_owned();
    // W_K = E − W_R; E holds K_m(S, S) + I on the unbalanced rows.
    let mut wk = -&wr;
    for (i, &si) in s_d.iter().enumerate() {
        for (j, &sj) in s_d.iter().enumerate() {
            let e = k_m.get(sj, si) + if i == j { T::one() } else { T::zero() };
            wk[(inv[sj] - s0, i)] += e;
        }
    }
    let g = DMatrix::identity(nd, nd) + wv.transpose() * &wv;
    let g_lu = g.lu();
    let vr = wv.transpose() * &wr;
    let g_vr = g_lu
        .solve(&vr)
        .ok_or_else(|| Error::Breakdown("capacitance matrix I + VᵀA⁻¹V is singular".into()))?;
    let k_r = wk.transpose() * &wr - (wk.transpose() * &wv) * &g_vr;
    let delta_u_s = DVector::from_iterator(nd, s_d.iter().map(|&s| dres[s]));
    let y = k_r
        .clone()
        .lu()
        .solve(&delta_u_s)
        .ok_or_else(|| Error::Structural("reduced matrix of the unbalanced equations is singular".into()))?;
    // ΔU = L⁻ᵀ (W_R y − W_V G⁻¹ W_Vᵀ W_R y).
    let z_tail = &wr * &y - &wv * (&g_vr * &y);
    let mut z = vec![T::zero(); n];
    z[s0..].copy_from_slice(z_tail.as_slice());
    l.backward(&mut z);
    let du = l.from_perm(&DVector::from_vec(z));
    let u = u_star + &du;

    let ry = &r * &y;
    let ac = constrained_apply(k_star, &s_d, &du);
    let ry_norm = ry.norm().as_f64();
    let fundamental_residual = if ry_norm == 0.0 { 0.0 } else { (ac - &ry).norm().as_f64() / ry_norm };
    let relative_residual = rel_residual(k_m, &u, f);
    if relative_residual <= RESIDUAL_TOL && fundamental_residual <= RESIDUAL_TOL {
        return Ok(IfuSolution {
            u,
            s_d,
            k_r,
            y,
            relative_residual,
            fundamental_residual,
            refactorized: false,
        });
    }
    let fac = factorize(k_m).map_err(|e| match e {
        Error::RigidBody { .. } => Error::Structural(e.to_string()),
        other => other,
    })?;
    let u = fac.solve(f);
    Ok(IfuSolution {
        relative_residual: rel_residual(k_m, &u, f),
        u,
        s_d,
        k_r,
        y,
        fundamental_residual,
        refactorized: true,
    })
}

/// Literal step-by-step variant: forms the fundamental solutions explicitly.
/// Used as an oracle for [`ifu_reanalyze`].
pub fn ifu_reanalyze_explicit<T: Real>(
    l0: &CholeskyFactor<T>,
    k_m: &CsrMatrix<T>,
    k_star: &CsrMatrix<T>,
    f: &DVector<T>,
    u_star: &DVector<T>,
) -> Result<(DVector<T>, DMatrix<T>)> {
    let dres = residual(k_m, f, u_star);
    let meas = measurement(k_m, k_star, &dres);
    let s_d = unbalanced_set(&meas, noise_tolerance(&meas, k_m, u_star, f));
    if s_d.is_empty() {
        return Ok((u_star.clone(), DMatrix::zeros(k_m.n(), 0)));
    }
    let cf = constrain_factor(l0, &s_d);
    let r = constraint_rhs(k_m, &s_d);
    let b = fundamental_solutions(&cf, &r)?;
    let n = k_m.n();
    let mut k_u = DMatrix::zeros(s_d.len(), n);
    for (i, &s) in s_d.iter().enumerate() {
        let (c, v) = k_m.row(s);
        for (&j, &a) in c.iter().zip(v) {
            k_u[(i, j)] = a;
        }
    }
    let k_r = &k_u * &b;
    let delta_u = DVector::from_iterator(s_d.len(), s_d.iter().map(|&s| dres[s]));
    let y = k_r
        .lu()
        .solve(&delta_u)
        .ok_or_else(|| Error::Structural("reduced matrix of the unbalanced equations is singular".into()))?;
    Ok((u_star + &b * y, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::full_solver::factorize_with;
    use crate::ordering::Ordering;

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let a = DMatrix::from_fn(n, n, |_, _| next());
        &a * a.transpose() + DMatrix::identity(n, n) * n as f64
    }

    #[test]
    fn residual_of_rank_one_change() {
        let k = spd(5, 1);
        let f = DVector::from_element(5, 1.0);
        let u = k.clone().lu().solve(&f).unwrap();
        let mut km = k.clone();
        km[(2, 2)] += 3.0;
        let d = residual(&CsrMatrix::from_dense(&km), &f, &u);
        for i in 0..5 {
            let want = if i == 2 { -3.0 * u[2] } else { 0.0 };
            assert!((d[i] - want).abs() < 1e-12);
        }
        let m = measurement(&CsrMatrix::from_dense(&km), &CsrMatrix::from_dense(&k), &d);
        assert_eq!(unbalanced_set(&m, default_tolerance(&m)), vec![2]);
    }

    #[test]
    fn unbalanced_set_examples() {
        let m = DVector::from_vec(vec![0.0, 3.0, 0.0, 1.0]);
        assert_eq!(unbalanced_set(&m, 0.0), vec![1, 3]);
        assert!(unbalanced_set(&DVector::<f64>::zeros(3), 0.0).is_empty());
    }

    #[test]
    fn constrain_two_by_two_by_hand() {
        let k = CsrMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]));
        let l0 = factorize_with(&k, &Ordering::Natural).unwrap();
        let cf = constrain_factor(&l0, &[1]);
        assert_eq!(cf.factor.to_dense(), DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));
        assert_eq!(cf.v, DMatrix::from_column_slice(2, 1, &[0.0, 0.0]));
        let cf0 = constrain_factor(&l0, &[0]);
        assert_eq!(cf0.factor.to_dense(), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2f64.sqrt()]));
        assert_eq!(cf0.v, DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));
        // Original factor untouched.
        assert_eq!(l0.to_dense(), DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2f64.sqrt()]));
    }

    #[test]
    fn constrained_identity_holds() {
        let n = 8;
        let k = spd(n, 7);
        let kc = CsrMatrix::from_dense(&k);
        for ord in [Ordering::Natural, Ordering::Rcm] {
            let l0 = factorize_with(&kc, &ord).unwrap();
            let s_d = vec![1, 4, 5];
            let cf = constrain_factor(&l0, &s_d);
            let l = cf.factor.to_dense();
            let recon = &l * l.transpose() + &cf.v * cf.v.transpose();
            let mut a_c = k.clone();
            for &s in &s_d {
                a_c.row_mut(s).fill(0.0);
                a_c.column_mut(s).fill(0.0);
                a_c[(s, s)] = 1.0;
            }
            let perm = &l0.permutation().perm;
            let a_perm = DMatrix::from_fn(n, n, |i, j| a_c[(perm[i], perm[j])]);
            assert!((recon - a_perm).amax() < 1e-12);
        }
    }

    #[test]
    fn fundamental_solutions_match_dense() {
        let n = 6;
        let k = spd(n, 3);
        let kc = CsrMatrix::from_dense(&k);
        let l0 = factorize_with(&kc, &Ordering::Natural).unwrap();
        let s_d = vec![2, 5];
        let cf = constrain_factor(&l0, &s_d);
        let mut km = k.clone();
        km[(2, 2)] += 1.0;
        let r = constraint_rhs(&CsrMatrix::from_dense(&km), &s_d);
        let b = fundamental_solutions(&cf, &r).unwrap();
        let l = cf.factor.to_dense();
        let a = &l * l.transpose() + &cf.v * cf.v.transpose();
        let dense = a.lu().solve(&r).unwrap();
        assert!((&b - dense).amax() < 1e-10);
    }

    #[test]
    fn explicit_and_fast_paths_are_exact() {
        let n = 12;
        let k = spd(n, 11);
        let mut dk = DMatrix::zeros(n, n);
        dk[(3, 3)] = 2.0;
        dk[(3, 8)] = -0.7;
        dk[(8, 3)] = -0.7;
        dk[(8, 8)] = 1.5;
        let km = &k + &dk;
        let f = DVector::from_fn(n, |i, _| (i as f64 * 0.7).cos());
        let exact = km.clone().lu().solve(&f).unwrap();
        let (kc, kmc) = (CsrMatrix::from_dense(&k), CsrMatrix::from_dense(&km));
        let l0 = factorize_with(&kc, &Ordering::Rcm).unwrap();
        let u_star = l0.solve(&f);
        let (u1, _) = ifu_reanalyze_explicit(&l0, &kmc, &kc, &f, &u_star).unwrap();
        assert!((&u1 - &exact).amax() < 1e-10);
        let sol = ifu_reanalyze(&l0, &kc, &CsrMatrix::from_dense(&dk), &kmc, &f, &u_star).unwrap();
        assert!(!sol.refactorized);
        assert_eq!(sol.s_d, vec![3, 8]);
        assert!((&sol.u - &exact).amax() < 1e-10);
        assert!(sol.fundamental_residual < 1e-9);
    }

    #[test]
    fn literal_positive_rhs_breaks_exactness() {
        // The fundamental solutions need −K_m on the balanced rows; the
        // positive sign leaves the modified equations unsatisfied.
        let n = 6;
        let k = spd(n, 5);
        let mut km = k.clone();
        km[(1, 1)] += 4.0;
        let f = DVector::from_element(n, 1.0);
        let kc = CsrMatrix::from_dense(&k);
        let l0 = factorize_with(&kc, &Ordering::Natural).unwrap();
        let u_star = l0.solve(&f);
        let s_d = vec![1];
        let cf = constrain_factor(&l0, &s_d);
        let mut r = constraint_rhs(&CsrMatrix::from_dense(&km), &s_d);
        r.column_mut(0).iter_mut().enumerate().for_each(|(i, v)| {
            if i != 1 {
                *v = -*v
            }
        });
        let b = fundamental_solutions(&cf, &r).unwrap();
        let dres = &f - &km * &u_star;
        let kr = km.row(1) * &b;
        let u = &u_star + &b * (dres[1] / kr[(0, 0)]);
        assert!((&km * u - &f).norm() > 1e-3);
    }

    #[test]
    fn no_change_short_circuits() {
        let k = CsrMatrix::from_dense(&spd(5, 9));
        let l0 = factorize_with(&k, &Ordering::Rcm).unwrap();
        let f = DVector::from_element(5, 2.0);
        let u = l0.solve(&f);
        let sol = ifu_reanalyze(&l0, &k, &CsrMatrix::zeros(5), &k, &f, &u).unwrap();
        assert!(sol.s_d.is_empty());
        assert_eq!(sol.u, u);
    }

    #[test]
    fn removed_dof_becomes_identity_row() {
        // Union-space removal: DOF 2 turns into an identity equation.
        let n = 5;
        let k = spd(n, 4);
        let mut km = k.clone();
        km.row_mut(2).fill(0.0);
        km.column_mut(2).fill(0.0);
        km[(2, 2)] = 1.0;
        let mut f = DVector::from_element(n, 1.0);
        let kc = CsrMatrix::from_dense(&k);
        let l0 = factorize_with(&kc, &Ordering::Rcm).unwrap();
        let u_star = l0.solve(&f);
        f[2] = 0.0;
        let kmc = CsrMatrix::from_dense(&km);
        let dk = kmc.add_scaled(1.0, &kc, -1.0);
        let sol = ifu_reanalyze(&l0, &kc, &dk, &kmc, &f, &u_star).unwrap();
        let exact = km.lu().solve(&f).unwrap();
        assert!((&sol.u - exact).amax() < 1e-10);
        assert_eq!(sol.u[2], 0.0);
    }
}
