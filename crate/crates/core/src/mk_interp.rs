//! Moving-Kriging shape functions.
//!
//! For a support of `n` nodes and a polynomial basis of `m` terms the shape
//! functions are `phi(x) = p(x)ᵀ S_a + r(x)ᵀ S_b` with
//! `S_a = (Pᵀ R⁻¹ P)⁻¹ Pᵀ R⁻¹` and `S_b = R⁻¹ (I − P S_a)`, where `R` is the
//! Gaussian correlation matrix of the support nodes and `r(x)` the correlation
//! vector of the evaluation point.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{InterpSettings, NodeCloud, NodeId, PolyBasis};
use crate::scalar::Real;
use crate::Point;

/// Gaussian correlation `exp(-theta * |xi - xj|²)`.
pub fn correlation<T: Real>(xi: &[T], xj: &[T], theta: T) -> T {
    let r2 = xi
        .iter()
        .zip(xj)
        .fold(T::zero(), |acc, (a, b)| acc + (*a - *b) * (*a - *b));
    (-theta * r2).exp()
}

/// Local nodal spacing `d_c` around `point`: the mean distance from the
/// point's nearest node to that node's `dim + 1` nearest neighbours.
pub fn local_spacing<T: Real>(point: &Point<T>, cloud: &NodeCloud<T>) -> Result<T> {
    if cloud.len() < 2 {
        return Err(Error::Validation(
            "local spacing needs at least two nodes".into(),
        ));
    }
    let nearest = cloud.nearest(point, 1, None)[0].0;
    let k = cloud.dim() + 1;
    let neigh = cloud.nearest(&cloud.coords()[nearest], k, Some(nearest));
    let sum = neigh.iter().fold(T::zero(), |acc, (_, d2)| acc + d2.sqrt());
    Ok(sum / T::from_usize_lossy(neigh.len()))
}

/// Nodes inside the closed support ball of an evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSelection<T: Real> {
    pub point: Point<T>,
    pub dim: usize,
    /// Support radius `d_m` (after any growth retry).
    pub radius: T,
    /// Local spacing `d_c`.
    pub spacing: T,
    /// Positions in the source cloud, ascending (hence ascending id).
    pub nodes: Vec<usize>,
    pub ids: Vec<NodeId>,
    pub coords: Vec<Point<T>>,
}

impl<T: Real> SupportSelection<T> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Support ball of radius `alpha * d_c`; grows once by 1.5× if it holds
/// fewer than `basis.terms(dim)` nodes.
pub fn select_support<T: Real>(
    point: &Point<T>,
    cloud: &NodeCloud<T>,
    alpha: T,
    basis: PolyBasis,
) -> Result<SupportSelection<T>> {
    let dim = cloud.dim();
    let needed = basis.terms(dim);
    let spacing = local_spacing(point, cloud)?;
    let mut radius = alpha * spacing;
    // Ties at exactly d_m are kept: closed ball with a relative slack of a few ulps.
    let slack = T::one() + T::lit(1e-12);
    let mut nodes = cloud.within(point, radius * slack);
    if nodes.len() < needed {
        radius *= T::lit(1.5);
        nodes = cloud.within(point, radius * slack);
        if nodes.len() < needed {
            return Err(Error::SupportDeficiency {
                point: point[..dim].iter().map(|v| v.as_f64()).collect(),
                radius: radius.as_f64(),
                found: nodes.len(),
                needed,
            });
        }
    }
    let ids = nodes.iter().map(|&i| cloud.ids()[i]).collect();
    let coords = nodes.iter().map(|&i| cloud.coords()[i]).collect();
    Ok(SupportSelection {
        point: *point,
        dim,
        radius,
        spacing,
        nodes,
        ids,
        coords,
    })
}

/// Correlation and polynomial systems of one support, with `S_a`, `S_b`.
///
/// The polynomial basis is evaluated in local coordinates
/// `(x - center) / scale`; this spans the same space as `[1 x y (z)]`, so the
/// shape functions are unchanged while `PᵀR⁻¹P` stays well scaled.
#[derive(Debug, Clone)]
pub struct KrigingSystem<T: Real> {
    pub r_corr: DMatrix<T>,
    pub p_poly: DMatrix<T>,
    pub s_a: DMatrix<T>,
    pub s_b: DMatrix<T>,
    pub theta: T,
    pub basis: PolyBasis,
    pub center: Point<T>,
    pub scale: T,
    /// Diagonal shift applied to `R` when plain factorization failed.
    pub jitter: T,
}

fn poly_row<T: Real>(x: &Point<T>, center: &Point<T>, scale: T, dim: usize, basis: PolyBasis, out: &mut [T]) {
    out[0] = T::one();
    if basis == PolyBasis::Linear {
        for k in 0..dim {
            out[k + 1] = (x[k] - center[k]) / scale;
        }
    }
}

fn frob<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |a, v| a + *v * *v).sqrt()
}

fn condition_estimate<T: Real>(m: &DMatrix<T>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for v in eig.eigenvalues.iter() {
        let a = v.as_f64().abs();
        lo = lo.min(a);
        hi = hi.max(a);
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Normwise backward error of `A X = B`.
fn residual_ok<T: Real>(a: &DMatrix<T>, x: &DMatrix<T>, b: &DMatrix<T>, tol: f64) -> bool {
    let res = frob(&(a * x - b)).as_f64();
    let scale = (frob(a) * frob(x) + frob(b)).as_f64();
    res <= tol * scale.max(f64::MIN_POSITIVE)
}

const RESIDUAL_TOL: f64 = 1e-10;

pub fn build_system<T: Real>(sel: &SupportSelection<T>, theta: T, basis: PolyBasis) -> Result<KrigingSystem<T>> {
    let n = sel.len();
    let dim = sel.dim;
    let m = basis.terms(dim);
    let point_vec = || sel.point[..dim].iter().map(|v| v.as_f64()).collect::<Vec<_>>();
    if n < m {
        return Err(Error::SupportDeficiency {
            point: point_vec(),
            radius: sel.radius.as_f64(),
            found: n,
            needed: m,
        });
    }
    let center = sel.point;
    let scale = if sel.radius > T::zero() { sel.radius } else { T::one() };

    let mut r = DMatrix::<T>::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = correlation(&sel.coords[i][..dim], &sel.coords[j][..dim], theta);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    let mut p = DMatrix::<T>::zeros(n, m);
    let mut row = vec![T::zero(); m];
    for i in 0..n {
        poly_row(&sel.coords[i], &center, scale, dim, basis, &mut row);
        for j in 0..m {
            p[(i, j)] = row[j];
        }
    }

    let attempt = |jitter: T| -> Option<(DMatrix<T>, DMatrix<T>)> {
        let mut rj = r.clone();
        if jitter > T::zero() {
            for i in 0..n {
                rj[(i, i)] += jitter;
            }
        }
        let chol = Cholesky::new(rj.clone())?;
        let r_inv_p = chol.solve(&p);
        let a = p.transpose() * &r_inv_p;
        let a_chol = Cholesky::new(a.clone());
        let a_chol = match a_chol {
            Some(c) => c,
            None => return Some((DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))),
        };
        let s_a = a_chol.solve(&r_inv_p.transpose());
        let rhs = DMatrix::<T>::identity(n, n) - &p * &s_a;
        let s_b = chol.solve(&rhs);
        if !residual_ok(&rj, &r_inv_p, &p, RESIDUAL_TOL)
            || !residual_ok(&a, &s_a, &r_inv_p.transpose(), RESIDUAL_TOL)
            || !residual_ok(&rj, &s_b, &rhs, RESIDUAL_TOL)
        {
            return None;
        }
        Some((s_a, s_b))
    };

    // Rank check on the polynomial moment matrix, independent of R's conditioning.
    let ptp = p.transpose() * &p;
    let eig = SymmetricEigen::new(ptp);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for v in eig.eigenvalues.iter() {
        lo = lo.min(v.as_f64());
        hi = hi.max(v.as_f64());
    }
    if !(lo > 1e-12 * hi) {
        return Err(Error::RankDeficient {
            point: point_vec(),
            support: n,
        });
    }

    let trace = (0..n).fold(T::zero(), |a, i| a + r[(i, i)]);
    let jitter_value = T::lit(1e-12) * trace / T::from_usize_lossy(n);
    for jitter in [T::zero(), jitter_value] {
        if let Some((s_a, s_b)) = attempt(jitter) {
            if s_a.nrows() == 0 {
                return Err(Error::RankDeficient {
                    point: point_vec(),
                    support: n,
                });
            }
            return Ok(KrigingSystem {
                r_corr: r,
                p_poly: p,
                s_a,
                s_b,
                theta,
                basis,
                center,
                scale,
                jitter,
            });
        }
    }
    Err(Error::Conditioning {
        point: point_vec(),
        condition: condition_estimate(&r),
    })
}

/// Shape function values and first derivatives at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeEval<T: Real> {
    pub dim: usize,
    pub values: Vec<T>,
    /// `grads[I][k]` = d phi_I / d x_k.
    pub grads: Vec<Point<T>>,
    /// Cloud positions of the support nodes.
    pub nodes: Vec<usize>,
    pub ids: Vec<NodeId>,
}

impl<T: Real> ShapeEval<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `sum_I phi_I u_I` for nodal scalars aligned with the support.
    pub fn interpolate(&self, nodal: &[T]) -> T {
        self.values.iter().zip(nodal).fold(T::zero(), |a, (p, u)| a + *p * *u)
    }
}

/// Evaluates `phi_I(x)` and `phi_I,k(x)` for the support of `sel`.
pub fn shape_functions<T: Real>(sel: &SupportSelection<T>, sys: &KrigingSystem<T>, point: &Point<T>) -> ShapeEval<T> {
    let n = sel.len();
    let dim = sel.dim;
    let m = sys.basis.terms(dim);
    let mut pv = vec![T::zero(); m];
    poly_row(point, &sys.center, sys.scale, dim, sys.basis, &mut pv);
    let mut r = DVector::<T>::zeros(n);
    for k in 0..n {
        r[k] = correlation(&sel.coords[k][..dim], &point[..dim], sys.theta);
    }
    let two = T::lit(2.0);
    let mut values = vec![T::zero(); n];
    let mut grads = vec![[T::zero(); 3]; n];
    for i in 0..n {
        let mut v = T::zero();
        for j in 0..m {
            v += pv[j] * sys.s_a[(j, i)];
        }
        for k in 0..n {
            v += r[k] * sys.s_b[(k, i)];
        }
        values[i] = v;
    }
    for axis in 0..dim {
        // dr_k/dx = -2 theta (x - x_k) r_k ; dp/dx = e_{axis+1} / scale.
        let dr: Vec<T> = (0..n)
            .map(|k| -two * sys.theta * (point[axis] - sel.coords[k][axis]) * r[k])
            .collect();
        for i in 0..n {
            let mut g = T::zero();
            if sys.basis == PolyBasis::Linear {
                g += sys.s_a[(axis + 1, i)] / sys.scale;
            }
            for k in 0..n {
                g += dr[k] * sys.s_b[(k, i)];
            }
            grads[i][axis] = g;
        }
    }
    ShapeEval {
        dim,
        values,
        grads,
        nodes: sel.nodes.clone(),
        ids: sel.ids.clone(),
    }
}

/// Support selection, Kriging system and evaluation in one call.
pub fn evaluate<T: Real>(point: &Point<T>, cloud: &NodeCloud<T>, interp: &InterpSettings<T>) -> Result<ShapeEval<T>> {
    let sel = select_support(point, cloud, interp.alpha, interp.basis)?;
    let sys = build_system(&sel, interp.theta, interp.basis)?;
    Ok(shape_functions(&sel, &sys, point))
}

/// Cheap check used by reanalysis: the support set alone determines the
/// Kriging shape functions at a given point.
pub fn support_ids<T: Real>(point: &Point<T>, cloud: &NodeCloud<T>, interp: &InterpSettings<T>) -> Result<Vec<NodeId>> {
    Ok(select_support(point, cloud, interp.alpha, interp.basis)?.ids)
}
