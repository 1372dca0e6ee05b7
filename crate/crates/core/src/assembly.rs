//! Galerkin assembly of the stiffness matrix and load vector by 2×2 (2×2×2)
//! Gauss quadrature over the background cells.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mk_interp::{evaluate, ShapeEval};
use crate::model::{BackgroundGrid, DofMap, ElasticityMode, MaterialModel, Model, NodeCloud};
use crate::scalar::Real;
use crate::sparse::CsrMatrix;
use crate::Point;

/// Quadrature point with weight × jacobian folded into `weight`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussPoint<T: Real> {
    pub position: Point<T>,
    pub weight: T,
    pub cell: usize,
    /// Index of the point within its cell.
    pub local: usize,
}

/// Gauss points of one cell that lie inside the grid's solution domain.
pub fn cell_gauss_points<T: Real>(grid: &BackgroundGrid<T>, cell: usize) -> Vec<GaussPoint<T>> {
    if !grid.is_active(cell) {
        return Vec::new();
    }
    grid.cell_gauss_points(cell)
        .into_iter()
        .enumerate()
        .filter(|(_, (x, _))| grid.domain().contains(x, grid.dim()))
        .map(|(local, (position, weight))| GaussPoint {
            position,
            weight,
            cell,
            local,
        })
        .collect()
}

/// All quadrature points of the active cells, restricted to the domain.
pub fn gauss_points<T: Real>(grid: &BackgroundGrid<T>) -> Vec<GaussPoint<T>> {
    (0..grid.num_cells()).flat_map(|c| cell_gauss_points(grid, c)).collect()
}

/// Isotropic constitutive matrix: 3×3 plane stress or 6×6 solid with
/// strain order (xx, yy, zz, yz, zx, xy) and engineering shear strains.
pub fn constitutive<T: Real>(mat: &MaterialModel<T>) -> DMatrix<T> {
    let e = mat.young_modulus;
    let nu = mat.poisson_ratio;
    let one = T::one();
    let two = T::lit(2.0);
    match mat.mode {
        ElasticityMode::PlaneStress => {
            let c = e / (one - nu * nu);
            DMatrix::from_row_slice(
                3,
                3,
                &[c, c * nu, T::zero(), c * nu, c, T::zero(), T::zero(), T::zero(), c * (one - nu) / two],
            )
        }
        ElasticityMode::Solid3d => {
            let c = e / ((one + nu) * (one - two * nu));
            let mut d = DMatrix::zeros(6, 6);
            for i in 0..3 {
                for j in 0..3 {
                    d[(i, j)] = if i == j { c * (one - nu) } else { c * nu };
                }
                d[(i + 3, i + 3)] = c * (one - two * nu) / two;
            }
            d
        }
    }
}

/// Strain–displacement block of one node from its shape-function gradient.
pub fn b_block<T: Real>(grad: &Point<T>, dim: usize) -> DMatrix<T> {
    let z = T::zero();
    let [gx, gy, gz] = *grad;
    if dim == 2 {
        DMatrix::from_row_slice(3, 2, &[gx, z, z, gy, gy, gx])
    } else {
        DMatrix::from_row_slice(
            6,
            3,
            &[gx, z, z, z, gy, z, z, z, gz, z, gz, gy, gz, z, gx, gy, gx, z],
        )
    }
}

/// Per-node B blocks for every node of a support.
pub fn strain_displacement<T: Real>(eval: &ShapeEval<T>) -> Vec<DMatrix<T>> {
    eval.grads.iter().map(|g| b_block(g, eval.dim)).collect()
}

/// Full B matrix (strain components × support DOFs).
pub fn b_matrix<T: Real>(eval: &ShapeEval<T>) -> DMatrix<T> {
    let d = eval.dim;
    let ns = if d == 2 { 3 } else { 6 };
    let mut b = DMatrix::zeros(ns, eval.len() * d);
    for (i, g) in eval.grads.iter().enumerate() {
        b.view_mut((0, i * d), (ns, d)).copy_from(&b_block(g, d));
    }
    b
}

/// Element-like stiffness of one Gauss point, keyed by union node positions.
#[derive(Debug, Clone)]
pub struct GaussContribution<T: Real> {
    /// Union node positions of the support, ascending.
    pub nodes: Vec<usize>,
    /// `w · Bᵀ D B`, size (nodes · d)².
    pub ke: DMatrix<T>,
}

/// Integrates one Gauss point. `positions[i]` is the union node position of
/// cloud node `i`.
pub fn gauss_contribution<T: Real>(
    gp: &GaussPoint<T>,
    cloud: &NodeCloud<T>,
    positions: &[usize],
    d_mat: &DMatrix<T>,
    interp: &crate::model::InterpSettings<T>,
) -> Result<GaussContribution<T>> {
    let eval = evaluate(&gp.position, cloud, interp)?;
    let b = b_matrix(&eval);
    let db = d_mat * &b;
    let mut ke = b.transpose() * db;
    ke *= gp.weight;
    let nodes = eval.nodes.iter().map(|&i| positions[i]).collect();
    Ok(GaussContribution { nodes, ke })
}

/// Integrates a batch of Gauss points in parallel; output order matches input.
pub fn compute_contributions<T: Real>(
    gps: &[GaussPoint<T>],
    cloud: &NodeCloud<T>,
    positions: &[usize],
    d_mat: &DMatrix<T>,
    interp: &crate::model::InterpSettings<T>,
) -> Result<Vec<GaussContribution<T>>> {
    gps.par_iter()
        .with_min_len(16)
        .map(|gp| gauss_contribution(gp, cloud, positions, d_mat, interp))
        .collect()
}

/// Node-level sparsity from support cliques, expanded to `dim` DOFs per node.
pub fn build_pattern<'a, T: Real>(
    num_nodes: usize,
    dim: usize,
    cliques: impl Iterator<Item = &'a [usize]>,
) -> CsrMatrix<T> {
    let mut touching: Vec<Vec<u32>> = vec![Vec::new(); num_nodes];
    let cliques: Vec<&[usize]> = cliques.collect();
    for (c, nodes) in cliques.iter().enumerate() {
        for &a in nodes.iter() {
            touching[a].push(c as u32);
        }
    }
    let mut mark = vec![usize::MAX; num_nodes];
    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(num_nodes * dim);
    for a in 0..num_nodes {
        let mut neigh = Vec::new();
        for &c in &touching[a] {
            for &b in cliques[c as usize] {
                if mark[b] != a {
                    mark[b] = a;
                    neigh.push(b);
                }
            }
        }
        neigh.sort_unstable();
        let cols: Vec<usize> = neigh.iter().flat_map(|&b| (0..dim).map(move |k| b * dim + k)).collect();
        for _ in 0..dim {
            rows.push(cols.clone());
        }
    }
    CsrMatrix::from_pattern(num_nodes * dim, &rows)
}

/// Adds `sign · ke` of every contribution into `k`, whose pattern must
/// already contain the node blocks. Sequential, hence deterministic.
pub fn scatter<T: Real>(contribs: &[GaussContribution<T>], sign: T, dim: usize, k: &mut CsrMatrix<T>) {
    for c in contribs {
        for (la, &pa) in c.nodes.iter().enumerate() {
            for i in 0..dim {
                let row = pa * dim + i;
                let (cols, vals) = k.row_mut(row);
                let mut ptr = 0usize;
                for (lb, &pb) in c.nodes.iter().enumerate() {
                    let target = pb * dim;
                    while cols[ptr] < target {
                        ptr += 1;
                    }
                    debug_assert_eq!(cols[ptr], target);
                    for j in 0..dim {
                        vals[ptr + j] += sign * c.ke[(la * dim + i, lb * dim + j)];
                    }
                }
            }
        }
    }
}

/// Sums contributions into a fresh matrix on a `num_nodes · dim` space.
pub fn sum_contributions<T: Real>(
    num_nodes: usize,
    dim: usize,
    groups: &[(&[GaussContribution<T>], T)],
) -> CsrMatrix<T> {
    let cliques = groups.iter().flat_map(|(cs, _)| cs.iter().map(|c| c.nodes.as_slice()));
    let mut k = build_pattern(num_nodes, dim, cliques);
    for (cs, sign) in groups {
        scatter(cs, *sign, dim, &mut k);
    }
    k
}

/// Stiffness of `model` on the union DOF space of `map`, before boundary
/// conditions and without any treatment of inactive DOFs.
pub fn assemble_stiffness<T: Real>(model: &Model<T>, map: &DofMap) -> Result<CsrMatrix<T>> {
    let dim = model.dim();
    if map.dim() != dim {
        return Err(Error::Dimension(format!("dof map dim {} vs model dim {dim}", map.dim())));
    }
    let positions = map.positions_of(&model.cloud);
    let d_mat = constitutive(&model.material);
    let gps = gauss_points(&model.grid);
    let contribs = compute_contributions(&gps, &model.cloud, &positions, &d_mat, &model.interp)?;
    Ok(sum_contributions(map.nodes().len(), dim, &[(&contribs, T::one())]))
}

/// Consistent nodal forces from point loads and edge tractions; tractions are
/// integrated with 2-point Gauss using Kriging shape values.
pub fn assemble_load<T: Real>(model: &Model<T>, map: &DofMap) -> Result<DVector<T>> {
    let dim = model.dim();
    let mut f = DVector::zeros(map.num_dofs());
    for &(id, axis, v) in &model.bc.point_loads {
        let dof = map
            .dof(id, axis)
            .filter(|_| model.cloud.contains(id))
            .ok_or_else(|| Error::Validation(format!("point load on nonexistent node {id}")))?;
        f[dof] += v;
    }
    if model.bc.tractions.is_empty() {
        return Ok(f);
    }
    let positions = map.positions_of(&model.cloud);
    let g = T::one() / T::lit(3.0).sqrt();
    let half = T::lit(0.5);
    for t in &model.bc.tractions {
        let mut len2 = T::zero();
        for k in 0..dim {
            len2 += (t.to[k] - t.from[k]) * (t.to[k] - t.from[k]);
        }
        let w = len2.sqrt() * half;
        for s in [-g, g] {
            let mut x = [T::zero(); 3];
            for k in 0..dim {
                x[k] = t.from[k] + (t.to[k] - t.from[k]) * (T::one() + s) * half;
            }
            let q = t.intensity((T::one() + s) * half);
            let eval = evaluate(&x, &model.cloud, &model.interp)?;
            for (i, &node) in eval.nodes.iter().enumerate() {
                let p = positions[node];
                for k in 0..dim {
                    f[p * dim + k] += eval.values[i] * q[k] * w;
                }
            }
        }
    }
    Ok(f)
}

/// Which configuration of a [`DofMap`] a system describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Config {
    Initial,
    Modified,
}

/// DOFs eliminated from a configuration: fixed DOFs and DOFs of nodes that
/// are absent from it.
pub fn constrained_dofs<T: Real>(model: &Model<T>, map: &DofMap, active: &[bool]) -> Vec<bool> {
    let mut c: Vec<bool> = active.iter().map(|a| !a).collect();
    for &(id, axis) in &model.bc.fixed {
        if let Some(d) = map.dof(id, axis) {
            c[d] = true;
        }
    }
    c
}

/// Row/column elimination with unit diagonal; constrained loads are zeroed.
pub fn apply_bcs<T: Real>(raw: &CsrMatrix<T>, f: &DVector<T>, constrained: &[bool]) -> (CsrMatrix<T>, DVector<T>) {
    let dofs: Vec<usize> = (0..constrained.len()).filter(|&i| constrained[i]).collect();
    let mut k = raw.clone();
    k.constrain(&dofs, T::one());
    let mut f = f.clone();
    for &d in &dofs {
        f[d] = T::zero();
    }
    (k, f)
}

/// Assembled, constrained system of one configuration on the union DOF space.
#[derive(Debug, Clone)]
pub struct StiffnessSystem<T: Real> {
    /// Stiffness before elimination.
    pub raw: CsrMatrix<T>,
    /// Stiffness after elimination (SPD for a well-posed model).
    pub k: CsrMatrix<T>,
    /// Load after elimination.
    pub f: DVector<T>,
    pub dof_map: DofMap,
    pub constrained: Vec<bool>,
}

impl<T: Real> StiffnessSystem<T> {
    /// Assembles `model` as the `config` side of `map`.
    pub fn assemble(model: &Model<T>, map: &DofMap, config: Config) -> Result<Self> {
        let raw = assemble_stiffness(model, map)?;
        Self::from_raw(model, map, config, raw)
    }

    /// Builds the constrained system from an already assembled raw stiffness.
    pub fn from_raw(model: &Model<T>, map: &DofMap, config: Config, raw: CsrMatrix<T>) -> Result<Self> {
        let active = match config {
            Config::Initial => map.active_initial(),
            Config::Modified => map.active_modified(),
        };
        let f_raw = assemble_load(model, map)?;
        let constrained = constrained_dofs(model, map, active);
        let (k, f) = apply_bcs(&raw, &f_raw, &constrained);
        Ok(StiffnessSystem {
            raw,
            k,
            f,
            dof_map: map.clone(),
            constrained,
        })
    }

    /// System of an unmodified model.
    pub fn single(model: &Model<T>) -> Result<Self> {
        Self::assemble(model, &DofMap::single(&model.cloud), Config::Initial)
    }

    pub fn num_dofs(&self) -> usize {
        self.k.n()
    }

    /// Old DOF index to `map` DOF index; strictly increasing because both
    /// maps order nodes by id.
    pub fn dof_embedding(&self, map: &DofMap) -> Vec<usize> {
        let d = map.dim();
        let mut out = Vec::with_capacity(self.num_dofs());
        for &id in self.dof_map.nodes() {
            let p = map.node_position(id).expect("node missing from union map");
            out.extend((0..d).map(|k| p * d + k));
        }
        out
    }

    /// The initial system of `model` re-expressed on a union map that may
    /// contain extra (inactive) nodes.
    pub fn embed(&self, model: &Model<T>, map: &DofMap) -> Result<Self> {
        if map == &self.dof_map {
            return Ok(self.clone());
        }
        let emb = self.dof_embedding(map);
        let raw = self.raw.embed(map.num_dofs(), &emb);
        Self::from_raw(model, map, Config::Initial, raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundaryConditions, Domain, InterpSettings, Traction};
    use std::collections::BTreeMap;

    fn patch(n: usize) -> Model<f64> {
        let mut nodes = Vec::new();
        for j in 0..n {
            for i in 0..n {
                nodes.push(((j * n + i) as u64, [i as f64, j as f64, 0.0]));
            }
        }
        let cloud = NodeCloud::new(2, nodes).unwrap();
        let grid = BackgroundGrid::new(2, [0.0; 3], [1.0, 1.0, 1.0], [n - 1, n - 1, 1], Domain::default()).unwrap();
        let mat = MaterialModel::new(1.0, 0.25, ElasticityMode::PlaneStress).unwrap();
        let mut m = Model::new(cloud, grid, mat, BoundaryConditions::default(), InterpSettings::default()).unwrap();
        m.units = BTreeMap::new();
        m
    }

    #[test]
    fn unit_cell_gauss_points() {
        let grid = BackgroundGrid::<f64>::new(2, [0.0; 3], [1.0; 3], [1, 1, 1], Domain::default()).unwrap();
        let gps = gauss_points(&grid);
        assert_eq!(gps.len(), 4);
        let a = 0.5 / 3f64.sqrt();
        for gp in &gps {
            assert!((gp.weight - 0.25).abs() < 1e-15);
            assert!(((gp.position[0] - 0.5).abs() - a).abs() < 1e-15);
        }
        let grid3 = BackgroundGrid::<f64>::new(3, [0.0; 3], [1.0; 3], [1, 1, 1], Domain::default()).unwrap();
        let gps3 = gauss_points(&grid3);
        assert_eq!(gps3.len(), 8);
        assert!(gps3.iter().all(|g| (g.weight - 0.125).abs() < 1e-15));
    }

    #[test]
    fn plane_stress_d() {
        let m = MaterialModel::new(1.0, 0.0, ElasticityMode::PlaneStress).unwrap();
        let d = constitutive(&m);
        assert_eq!(d, DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.5]));
        let m = MaterialModel::new(200.0f64, 0.3, ElasticityMode::PlaneStress).unwrap();
        assert!((constitutive(&m)[(0, 0)] - 200.0 / 0.91).abs() < 1e-12);
    }

    #[test]
    fn solid_d_is_symmetric_and_hydrostatic_consistent() {
        let m = MaterialModel::new(1.0f64, 0.3, ElasticityMode::Solid3d).unwrap();
        let d = constitutive(&m);
        assert_eq!(d.clone(), d.transpose());
        // Bulk modulus from a volumetric strain.
        let eps = DVector::from_vec(vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let s = &d * eps;
        let k = 1.0 / (3.0 * (1.0 - 2.0 * 0.3));
        assert!((s[0] / 3.0 - k).abs() < 1e-12);
    }

    #[test]
    fn b_block_layout() {
        let b = b_block(&[1.0f64, 0.0, 0.0], 2);
        assert_eq!(b, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
        assert_eq!(b_block(&[0.0f64; 3], 2), DMatrix::zeros(3, 2));
        let b3 = b_block(&[1.0, 2.0, 3.0], 3);
        assert_eq!(b3.row(3).iter().copied().collect::<Vec<_>>(), vec![0.0, 3.0, 2.0]);
        assert_eq!(b3.row(4).iter().copied().collect::<Vec<_>>(), vec![3.0, 0.0, 1.0]);
        assert_eq!(b3.row(5).iter().copied().collect::<Vec<_>>(), vec![2.0, 1.0, 0.0]);
    }

    #[test]
    fn stiffness_symmetric_and_annihilates_rigid_modes() {
        let m = patch(4);
        let map = DofMap::single(&m.cloud);
        let k = assemble_stiffness(&m, &map).unwrap();
        assert!(k.asymmetry() <= 1e-12 * k.max_abs());
        let n = m.cloud.len();
        let c = m.cloud.coords();
        let modes = [
            DVector::from_fn(2 * n, |i, _| if i % 2 == 0 { 1.0 } else { 0.0 }),
            DVector::from_fn(2 * n, |i, _| if i % 2 == 1 { 1.0 } else { 0.0 }),
            DVector::from_fn(2 * n, |i, _| if i % 2 == 0 { -c[i / 2][1] } else { c[i / 2][0] }),
        ];
        for u in &modes {
            let r = k.mul_vec(u).norm();
            assert!(r <= 1e-8 * k.frobenius() * u.norm(), "rigid residual {r}");
        }
    }

    #[test]
    fn doubling_modulus_doubles_stiffness() {
        let m = patch(3);
        let mut m2 = m.clone();
        m2.material.young_modulus = 2.0;
        let map = DofMap::single(&m.cloud);
        let a = assemble_stiffness(&m, &map).unwrap();
        let b = assemble_stiffness(&m2, &map).unwrap();
        let diff = b.add_scaled(1.0, &a, -2.0);
        assert!(diff.max_abs() <= 1e-12 * b.max_abs());
    }

    #[test]
    fn traction_between_two_nodes_lumps_half_each() {
        let mut m = patch(3);
        m.bc.tractions.push(Traction::uniform([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]));
        let map = DofMap::single(&m.cloud);
        let f = assemble_load(&m, &map).unwrap();
        // Total force is exact; the two segment nodes carry the bulk of it.
        let total: f64 = (0..m.cloud.len()).map(|i| f[2 * i + 1]).sum();
        assert!((total - 2.0).abs() < 1e-10);
        assert!(f.iter().step_by(2).all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn point_load_and_full_fixing() {
        let mut m = patch(3);
        m.bc.point_loads.push((4, 1, 1000.0));
        let map = DofMap::single(&m.cloud);
        let f = assemble_load(&m, &map).unwrap();
        assert_eq!(f[9], 1000.0);
        assert_eq!(f.iter().filter(|v| **v != 0.0).count(), 1);
        let raw = assemble_stiffness(&m, &map).unwrap();
        let (k, f2) = apply_bcs(&raw, &f, &vec![true; 18]);
        assert_eq!(k.pruned().to_dense(), DMatrix::identity(18, 18));
        assert!(f2.iter().all(|v| *v == 0.0));
        let (k0, f0) = apply_bcs(&raw, &f, &vec![false; 18]);
        assert_eq!(k0, raw);
        assert_eq!(f0, f);
    }
}
