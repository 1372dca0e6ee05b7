//! Nodal strain and stress recovery, von Mises scalars, and relative error
//! measures between two solutions on the same cloud.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{b_block, constitutive};
use crate::error::{Error, Result};
use crate::mk_interp::evaluate;
use crate::model::{DofMap, Model, NodeId};
use crate::scalar::Real;

/// Displacements and recovered fields at the nodes of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSolution<T: Real> {
    pub dim: usize,
    /// Node ids in cloud order.
    pub node_ids: Vec<NodeId>,
    /// Nodal displacements, `dim` entries per node.
    pub displacement: DVector<T>,
    /// Engineering strain per node (rows); 3 components in 2D, 6 in 3D.
    pub strain: DMatrix<T>,
    /// Stress per node, same layout as `strain`.
    pub stress: DMatrix<T>,
    pub von_mises_strain: DVector<T>,
    pub von_mises_stress: DVector<T>,
}

impl<T: Real> FieldSolution<T> {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }
}

/// Von Mises stress from (xx, yy, xy) in 2D or (xx, yy, zz, yz, zx, xy) in 3D.
pub fn von_mises_stress<T: Real>(s: &[T]) -> T {
    let three = T::lit(3.0);
    match s.len() {
        3 => (s[0] * s[0] - s[0] * s[1] + s[1] * s[1] + three * s[2] * s[2]).sqrt(),
        6 => {
            let half = T::lit(0.5);
            let d = (s[0] - s[1]) * (s[0] - s[1]) + (s[1] - s[2]) * (s[1] - s[2]) + (s[2] - s[0]) * (s[2] - s[0]);
            (half * d + three * (s[3] * s[3] + s[4] * s[4] + s[5] * s[5])).sqrt()
        }
        n => panic!("von Mises stress of {n} components"),
    }
}

/// Von Mises equivalent strain with an effective Poisson ratio of 0.5,
/// from engineering strains; the out-of-plane strain is taken as zero in 2D.
pub fn von_mises_strain<T: Real>(e: &[T]) -> T {
    let (ex, ey, ez, g) = match e.len() {
        3 => (e[0], e[1], T::zero(), e[2] * e[2]),
        6 => (e[0], e[1], e[2], e[3] * e[3] + e[4] * e[4] + e[5] * e[5]),
        n => panic!("von Mises strain of {n} components"),
    };
    let half = T::lit(0.5);
    let d = (ex - ey) * (ex - ey) + (ey - ez) * (ey - ez) + (ez - ex) * (ez - ex);
    T::lit(2.0 / 3.0) * (half * d + T::lit(0.75) * g).sqrt()
}

/// Strain at every node of `model` from union-space displacements `u`.
pub fn recover_fields<T: Real>(u: &DVector<T>, model: &Model<T>, map: &DofMap) -> Result<FieldSolution<T>> {
    let dim = model.dim();
    if u.len() != map.num_dofs() {
        return Err(Error::Dimension(format!("{} displacements for {} DOFs", u.len(), map.num_dofs())));
    }
    let cloud = &model.cloud;
    let positions = map.positions_of(cloud);
    let ncomp = if dim == 2 { 3 } else { 6 };
    let d_mat = constitutive(&model.material);
    let strains: Vec<DVector<T>> = cloud
        .coords()
        .par_iter()
        .map(|x| -> Result<DVector<T>> {
            let eval = evaluate(x, cloud, &model.interp)?;
            let mut eps = DVector::zeros(ncomp);
            for (grad, &node) in eval.grads.iter().zip(&eval.nodes) {
                let p = positions[node];
                let ui = u.rows(p * dim, dim);
                eps += b_block(grad, dim) * ui;
            }
            Ok(eps)
        })
        .collect::<Result<_>>()?;
    let n = cloud.len();
    let mut strain = DMatrix::zeros(n, ncomp);
    let mut stress = DMatrix::zeros(n, ncomp);
    let mut vm_e = DVector::zeros(n);
    let mut vm_s = DVector::zeros(n);
    for (i, eps) in strains.iter().enumerate() {
        let sig = &d_mat * eps;
        strain.set_row(i, &eps.transpose());
        stress.set_row(i, &sig.transpose());
        vm_e[i] = von_mises_strain(eps.as_slice());
        vm_s[i] = von_mises_stress(sig.as_slice());
    }
    let mut displacement = DVector::zeros(n * dim);
    for (i, &p) in positions.iter().enumerate() {
        for k in 0..dim {
            displacement[i * dim + k] = u[p * dim + k];
        }
    }
    Ok(FieldSolution {
        dim,
        node_ids: cloud.ids().to_vec(),
        displacement,
        strain,
        stress,
        von_mises_strain: vm_e,
        von_mises_stress: vm_s,
    })
}

/// Relative errors in percent: displacement vector and the nodal von Mises
/// strain and stress vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub e_u: f64,
    pub e_eps: f64,
    pub e_sigma: f64,
}

fn rel_percent<T: Real>(c: &DVector<T>, r: &DVector<T>, what: &'static str) -> Result<f64> {
    let rn = r.norm().as_f64();
    if rn == 0.0 {
        return Err(Error::UndefinedError(what));
    }
    Ok((c - r).norm().as_f64() / rn * 100.0)
}

/// Errors of `candidate` relative to `reference` on the same nodes.
pub fn error_metrics<T: Real>(candidate: &FieldSolution<T>, reference: &FieldSolution<T>) -> Result<ErrorMetrics> {
    if candidate.node_ids != reference.node_ids || candidate.dim != reference.dim {
        return Err(Error::Dimension("solutions live on different node sets".into()));
    }
    Ok(ErrorMetrics {
        e_u: rel_percent(&candidate.displacement, &reference.displacement, "displacement")?,
        e_eps: rel_percent(&candidate.von_mises_strain, &reference.von_mises_strain, "von Mises strain")?,
        e_sigma: rel_percent(&candidate.von_mises_stress, &reference.von_mises_stress, "von Mises stress")?,
    })
}
