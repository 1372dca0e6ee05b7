//! Stiffness update after a structural modification.
//!
//! The local path re-integrates only quadrature points whose support node set
//! or domain membership differs between the two configurations. Moving-Kriging
//! shape functions at a point depend only on its support set, so every other
//! point contributes identically to both stiffness matrices and cancels.

use std::collections::BTreeSet;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_load, compute_contributions, constitutive, constrained_dofs, sum_contributions, Config,
    GaussPoint, StiffnessSystem,
};
use crate::error::{Error, Result};
use crate::mk_interp::{select_support, support_ids};
use crate::model::{DofMap, Model, Modification, NodeCloud, NodeId};
use crate::scalar::Real;
use crate::sparse::CsrMatrix;
use crate::Point;

/// How the modified stiffness is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateStrategy {
    /// Influence-domain re-integration.
    #[default]
    Local,
    /// Full reassembly of the modified model.
    Global,
}

/// Nodes added or removed, with their coordinates.
pub fn changed_nodes<T: Real>(initial: &Model<T>, m: &Modification<T>) -> Vec<(NodeId, Point<T>)> {
    let mut out: Vec<(NodeId, Point<T>)> = m
        .removed
        .iter()
        .filter_map(|id| initial.cloud.coord(*id).map(|x| (*id, *x)))
        .collect();
    out.extend(m.added.iter().cloned());
    out
}

/// Quadrature point whose contribution differs between configurations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffectedPoint<T: Real> {
    pub gauss: GaussPoint<T>,
    pub inside_initial: bool,
    pub inside_modified: bool,
}

/// Cells and quadrature points touched by a modification.
#[derive(Debug, Clone)]
pub struct InfluenceDomain<T: Real> {
    /// Cells holding a changed node or a point whose domain membership flips.
    pub seed_cells: Vec<usize>,
    /// Every examined cell (seeds plus surrounding layers).
    pub cells: Vec<usize>,
    /// Number of cell layers around the seeds.
    pub ring_width: usize,
    pub affected: Vec<AffectedPoint<T>>,
    /// Union of the supports of affected points in both configurations.
    pub influence_nodes: BTreeSet<NodeId>,
    /// Quadrature points examined (inside either domain).
    pub examined_points: usize,
}

/// Serializable digest of an [`InfluenceDomain`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceSummary {
    pub seed_cells: usize,
    pub cells: usize,
    pub ring_width: usize,
    pub affected_points: usize,
    pub examined_points: usize,
    pub total_points: usize,
    pub influence_nodes: usize,
}

impl<T: Real> InfluenceDomain<T> {
    pub fn summary(&self, total_points: usize) -> InfluenceSummary {
        InfluenceSummary {
            seed_cells: self.seed_cells.len(),
            cells: self.cells.len(),
            ring_width: self.ring_width,
            affected_points: self.affected.len(),
            examined_points: self.examined_points,
            total_points,
            influence_nodes: self.influence_nodes.len(),
        }
    }
}

/// Farthest distance from `p` at which a node can alter its support: the
/// support radius, or the reach of the nodes that set the local spacing.
fn reach<T: Real>(p: &Point<T>, cloud: &NodeCloud<T>, model: &Model<T>) -> Result<T> {
    let sel = select_support(p, cloud, model.interp.alpha, model.interp.basis)?;
    let (near, d2) = cloud.nearest(p, 1, None)[0];
    let neigh = cloud.nearest(&cloud.coords()[near], cloud.dim() + 1, Some(near));
    let far = neigh.iter().fold(T::zero(), |m, (_, e2)| m.max(e2.sqrt()));
    Ok(sel.radius.max(d2.sqrt() + far))
}

struct PointState<T: Real> {
    gauss: GaussPoint<T>,
    inside_initial: bool,
    inside_modified: bool,
    affected: bool,
    ids: Vec<NodeId>,
}

fn examine_cell<T: Real>(initial: &Model<T>, modified: &Model<T>, cell: usize) -> Result<Vec<PointState<T>>> {
    let dim = initial.dim();
    let mut out = Vec::new();
    for (local, (x, w)) in initial.grid.cell_gauss_points(cell).into_iter().enumerate() {
        let a = initial.grid.domain().contains(&x, dim);
        let b = modified.grid.domain().contains(&x, dim);
        if !a && !b {
            continue;
        }
        let gauss = GaussPoint {
            position: x,
            weight: w,
            cell,
            local,
        };
        let ia = if a { support_ids(&x, &initial.cloud, &initial.interp)? } else { Vec::new() };
        let ib = if b { support_ids(&x, &modified.cloud, &modified.interp)? } else { Vec::new() };
        let affected = a != b || ia != ib;
        let mut ids = ia;
        ids.extend(ib);
        out.push(PointState {
            gauss,
            inside_initial: a,
            inside_modified: b,
            affected,
            ids,
        });
    }
    Ok(out)
}

/// Vertex-adjacent neighbours of a cell.
fn cell_neighbours<T: Real>(model: &Model<T>, cell: usize) -> Vec<usize> {
    let grid = &model.grid;
    let counts = grid.counts();
    let ijk = grid.cell_ijk(cell);
    let dim = grid.dim();
    let mut out = Vec::new();
    let span = |k: usize| -> std::ops::RangeInclusive<i64> {
        if k < dim {
            -1..=1
        } else {
            0..=0
        }
    };
    for dz in span(2) {
        for dy in span(1) {
            for dx in span(0) {
                if dx == 0 && dy == 0 && dz == 0 {
                    continue;
                }
                let c = [ijk[0] as i64 + dx, ijk[1] as i64 + dy, ijk[2] as i64 + dz];
                if (0..3).all(|k| c[k] >= 0 && (c[k] as usize) < counts[k].max(1)) {
                    out.push(grid.cell_index([c[0] as usize, c[1] as usize, c[2] as usize]));
                }
            }
        }
    }
    out
}

/// Locates the quadrature points whose contributions change.
///
/// Starting from the seed cells, layers of neighbouring cells are examined
/// until the outermost layer holds no affected point and the largest support
/// or spacing reach found there cannot cross the examined band.
pub fn build_influence_domain<T: Real>(
    initial: &Model<T>,
    modified: &Model<T>,
    changed: &[(NodeId, Point<T>)],
) -> Result<InfluenceDomain<T>> {
    let grid = &initial.grid;
    let dim = initial.dim();
    let ncells = grid.num_cells();
    let mut seeds = BTreeSet::new();
    for (id, x) in changed {
        let cells = grid.cells_containing(x);
        if cells.is_empty() {
            return Err(Error::Validation(format!("changed node {id} lies outside the background grid")));
        }
        seeds.extend(cells);
    }
    if initial.grid.domain() != modified.grid.domain() {
        let flips: Vec<usize> = (0..ncells)
            .into_par_iter()
            .filter(|&c| {
                grid.cell_gauss_points(c).iter().any(|(x, _)| {
                    initial.grid.domain().contains(x, dim) != modified.grid.domain().contains(x, dim)
                })
            })
            .collect();
        seeds.extend(flips);
    }
    let seed_cells: Vec<usize> = seeds.into_iter().collect();
    let min_edge = grid.min_cell_edge();

    // Initial ring width from the spacing around the changed nodes.
    let mut dc_max = T::zero();
    for (_, x) in changed {
        for cloud in [&initial.cloud, &modified.cloud] {
            if cloud.len() >= 2 {
                dc_max = dc_max.max(crate::mk_interp::local_spacing(x, cloud)?);
            }
        }
    }
    let mut width = (initial.interp.alpha * dc_max / min_edge).as_f64().ceil().max(1.0) as usize;

    let mut dist = vec![usize::MAX; ncells];
    let mut layers: Vec<Vec<usize>> = Vec::new();
    for &c in &seed_cells {
        dist[c] = 0;
    }
    layers.push(seed_cells.clone());
    let mut states: Vec<Vec<PointState<T>>> = Vec::new();
    let examine = |layer: &[usize]| -> Result<Vec<PointState<T>>> {
        let per: Vec<Vec<PointState<T>>> = layer
            .par_iter()
            .map(|&c| examine_cell(initial, modified, c))
            .collect::<Result<_>>()?;
        Ok(per.into_iter().flatten().collect())
    };
    states.push(examine(&layers[0])?);
    loop {
        while layers.len() <= width {
            let last = layers.last().unwrap();
            let k = layers.len();
            let mut next = Vec::new();
            for &c in last {
                for nb in cell_neighbours(initial, c) {
                    if dist[nb] == usize::MAX {
                        dist[nb] = k;
                        next.push(nb);
                    }
                }
            }
            next.sort_unstable();
            if next.is_empty() {
                break;
            }
            states.push(examine(&next)?);
            layers.push(next);
        }
        let outer = layers.len() - 1;
        if outer < width {
            // The whole grid has been examined.
            break;
        }
        let outer_states = &states[outer];
        let outer_affected = outer_states.iter().any(|s| s.affected);
        let outer_reach = outer_states
            .par_iter()
            .map(|s| -> Result<T> {
                let mut r = T::zero();
                if s.inside_initial {
                    r = r.max(reach(&s.gauss.position, &initial.cloud, initial)?);
                }
                if s.inside_modified {
                    r = r.max(reach(&s.gauss.position, &modified.cloud, modified)?);
                }
                Ok(r)
            })
            .try_reduce(T::zero, |a, b| Ok(a.max(b)))?;
        if !outer_affected && outer_reach < T::from_usize_lossy(outer) * min_edge {
            break;
        }
        width += 1;
    }

    let mut affected = Vec::new();
    let mut influence_nodes = BTreeSet::new();
    let mut examined_points = 0;
    for s in states.into_iter().flatten() {
        examined_points += 1;
        if s.affected {
            influence_nodes.extend(s.ids.iter().copied());
            affected.push(AffectedPoint {
                gauss: s.gauss,
                inside_initial: s.inside_initial,
                inside_modified: s.inside_modified,
            });
        }
    }
    Ok(InfluenceDomain {
        seed_cells,
        cells: layers.into_iter().flatten().collect(),
        ring_width: width.min(dist.iter().filter(|d| **d != usize::MAX).max().copied().unwrap_or(0)),
        affected,
        influence_nodes,
        examined_points,
    })
}

/// Change of the stiffness matrix between configurations.
#[derive(Debug, Clone)]
pub struct StiffnessDelta<T: Real> {
    /// Change of the stiffness before elimination.
    pub raw: CsrMatrix<T>,
    /// Change of the eliminated stiffness, `K_m − K*`.
    pub effective: CsrMatrix<T>,
    /// DOFs with a nonzero row in `effective`.
    pub touched_dofs: Vec<usize>,
}

/// Exact change of the eliminated stiffness, given the raw change and the
/// constrained sets of both configurations.
pub fn effective_delta<T: Real>(
    raw_initial: &CsrMatrix<T>,
    raw_delta: &CsrMatrix<T>,
    constrained_initial: &[bool],
    constrained_modified: &[bool],
) -> CsrMatrix<T> {
    let n = raw_initial.n();
    let (cs, cm) = (constrained_initial, constrained_modified);
    let mut rows: Vec<Vec<usize>> = (0..n).map(|i| raw_delta.row(i).0.to_vec()).collect();
    for i in (0..n).filter(|&i| cs[i] != cm[i]) {
        let cols = raw_initial.row(i).0;
        rows[i].extend_from_slice(cols);
        rows[i].push(i);
        for &j in cols {
            rows[j].push(i);
        }
    }
    for r in &mut rows {
        r.sort_unstable();
        r.dedup();
    }
    let mut out = CsrMatrix::from_pattern(n, &rows);
    for i in 0..n {
        let (cols, vals) = out.row_mut(i);
        for (&j, v) in cols.iter().zip(vals.iter_mut()) {
            let k0 = raw_initial.get(i, j);
            let mut km = if !cm[i] && !cm[j] { k0 + raw_delta.get(i, j) } else { T::zero() };
            let mut ks = if !cs[i] && !cs[j] { k0 } else { T::zero() };
            if i == j {
                if cm[i] {
                    km += T::one();
                }
                if cs[i] {
                    ks += T::one();
                }
            }
            *v = km - ks;
        }
    }
    out.pruned()
}

fn touched<T: Real>(d: &CsrMatrix<T>) -> Vec<usize> {
    (0..d.n()).filter(|&i| !d.row(i).0.is_empty()).collect()
}

/// Re-integrates the affected points in both configurations.
pub fn compute_delta<T: Real>(
    initial: &Model<T>,
    modified: &Model<T>,
    base: &StiffnessSystem<T>,
    constrained_modified: &[bool],
    domain: &InfluenceDomain<T>,
) -> Result<StiffnessDelta<T>> {
    let map = &base.dof_map;
    let dim = initial.dim();
    let d_mat = constitutive(&initial.material);
    let gps_a: Vec<GaussPoint<T>> = domain.affected.iter().filter(|a| a.inside_initial).map(|a| a.gauss).collect();
    let gps_b: Vec<GaussPoint<T>> = domain.affected.iter().filter(|a| a.inside_modified).map(|a| a.gauss).collect();
    let ca = compute_contributions(&gps_a, &initial.cloud, &map.positions_of(&initial.cloud), &d_mat, &initial.interp)?;
    let cb =
        compute_contributions(&gps_b, &modified.cloud, &map.positions_of(&modified.cloud), &d_mat, &modified.interp)?;
    let raw = sum_contributions(map.nodes().len(), dim, &[(&cb, T::one()), (&ca, -T::one())]);
    let effective = effective_delta(&base.raw, &raw, &base.constrained, constrained_modified);
    let touched_dofs = touched(&effective);
    Ok(StiffnessDelta {
        raw,
        effective,
        touched_dofs,
    })
}

/// Result of updating the stiffness to the modified configuration.
#[derive(Debug, Clone)]
pub struct UpdateOutcome<T: Real> {
    /// Modified system on the union DOF space.
    pub system: StiffnessSystem<T>,
    /// `K_m − K*` on the union DOF space.
    pub delta: CsrMatrix<T>,
    pub touched_dofs: Vec<usize>,
    /// Path that produced `system`.
    pub path: UpdateStrategy,
    /// Why a requested local update fell back to reassembly.
    pub fallback: Option<String>,
    pub influence: Option<InfluenceSummary>,
}

/// Full reassembly of the modified model.
pub fn global_update<T: Real>(modified: &Model<T>, base: &StiffnessSystem<T>) -> Result<UpdateOutcome<T>> {
    let system = StiffnessSystem::assemble(modified, &base.dof_map, Config::Modified)?;
    let delta = system.k.add_scaled(T::one(), &base.k, -T::one()).pruned();
    let touched_dofs = touched(&delta);
    Ok(UpdateOutcome {
        system,
        delta,
        touched_dofs,
        path: UpdateStrategy::Global,
        fallback: None,
        influence: None,
    })
}

/// Why the local path cannot be used, if it cannot.
pub fn local_refusal<T: Real>(initial: &Model<T>, modified: &Model<T>) -> Option<String> {
    if initial.material != modified.material {
        return Some("material change alters every quadrature point".into());
    }
    if initial.interp != modified.interp {
        return Some("interpolation settings differ".into());
    }
    None
}

/// Modified stiffness from the initial system `base`, which must describe the
/// initial configuration on the union DOF map of the modification.
pub fn update_stiffness<T: Real>(
    initial: &Model<T>,
    modified: &Model<T>,
    modification: &Modification<T>,
    base: &StiffnessSystem<T>,
    strategy: UpdateStrategy,
) -> Result<UpdateOutcome<T>> {
    let map = &base.dof_map;
    if strategy == UpdateStrategy::Global {
        return global_update(modified, base);
    }
    if let Some(reason) = local_refusal(initial, modified) {
        let mut out = global_update(modified, base)?;
        out.fallback = Some(reason);
        return Ok(out);
    }
    let changed = changed_nodes(initial, modification);
    let domain = build_influence_domain(initial, modified, &changed)?;
    let constrained = constrained_dofs(modified, map, map.active_modified());
    let delta = compute_delta(initial, modified, base, &constrained, &domain)?;
    let k = base.k.add_scaled(T::one(), &delta.effective, T::one());
    let raw = base.raw.add_scaled(T::one(), &delta.raw, T::one());
    let mut f: DVector<T> = assemble_load(modified, map)?;
    for (d, c) in constrained.iter().enumerate() {
        if *c {
            f[d] = T::zero();
        }
    }
    let total_points = crate::assembly::gauss_points(&initial.grid).len();
    Ok(UpdateOutcome {
        system: StiffnessSystem {
            raw,
            k,
            f,
            dof_map: map.clone(),
            constrained,
        },
        delta: delta.effective,
        touched_dofs: delta.touched_dofs,
        path: UpdateStrategy::Local,
        fallback: None,
        influence: Some(domain.summary(total_points)),
    })
}

/// Convenience: builds the modified model and updates a single-configuration
/// baseline system onto the union map.
pub fn modify_and_update<T: Real>(
    initial: &Model<T>,
    baseline: &StiffnessSystem<T>,
    modification: &Modification<T>,
    strategy: UpdateStrategy,
) -> Result<(Model<T>, StiffnessSystem<T>, UpdateOutcome<T>)> {
    let (modified, map): (Model<T>, DofMap) = initial.apply_modification(modification)?;
    let base = baseline.embed(initial, &map)?;
    let out = update_stiffness(initial, &modified, modification, &base, strategy)?;
    Ok((modified, base, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo;
    use crate::model::{ElasticityMode, MaterialModel};

    fn max_diff(a: &CsrMatrix<f64>, b: &CsrMatrix<f64>) -> f64 {
        a.add_scaled(1.0, b, -1.0).max_abs()
    }

    fn check_exact(initial: &Model<f64>, m: &Modification<f64>) -> UpdateOutcome<f64> {
        let baseline = StiffnessSystem::single(initial).unwrap();
        let (modified, base, local) = modify_and_update(initial, &baseline, m, UpdateStrategy::Local).unwrap();
        assert_eq!(local.path, UpdateStrategy::Local);
        let global = global_update(&modified, &base).unwrap();
        let scale = global.system.k.max_abs();
        assert!(max_diff(&local.system.k, &global.system.k) <= 1e-12 * scale);
        assert!(max_diff(&local.delta, &global.delta) <= 1e-12 * scale);
        assert!((&local.system.f - &global.system.f).amax() <= 1e-12 * global.system.f.amax().max(1.0));
        assert_eq!(local.system.constrained, global.system.constrained);
        local
    }

    #[test]
    fn removal_with_hole_matches_reassembly() {
        let (m, modif) = demo::plate_with_holes(5.0).unwrap();
        let out = check_exact(&m, &modif);
        let s = out.influence.unwrap();
        assert!(s.affected_points < s.total_points);
    }

    #[test]
    fn added_nodes_match_reassembly() {
        let (m, modif) = demo::support_bracket(2.0).unwrap();
        let out = check_exact(&m, &modif);
        assert!(out.influence.unwrap().affected_points > 0);
    }

    #[test]
    fn single_interior_node_removal_is_local() {
        let m = demo::cantilever(demo::Beam::default(), 25, 7).unwrap();
        let id = demo::nearest_id(&m, [24.0, 0.0, 0.0]);
        let modif = Modification {
            removed: [id].into_iter().collect(),
            ..Default::default()
        };
        let out = check_exact(&m, &modif);
        let s = out.influence.unwrap();
        assert!(s.affected_points * 2 < s.total_points, "{s:?}");
        assert!(!out.touched_dofs.is_empty());
    }

    #[test]
    fn material_change_falls_back() {
        let m = demo::cantilever(demo::Beam::default(), 9, 3).unwrap();
        let modif = Modification {
            material: Some(MaterialModel::new(1.0, 0.3, ElasticityMode::PlaneStress).unwrap()),
            ..Default::default()
        };
        let baseline = StiffnessSystem::single(&m).unwrap();
        let (_, _, out) = modify_and_update(&m, &baseline, &modif, UpdateStrategy::Local).unwrap();
        assert_eq!(out.path, UpdateStrategy::Global);
        assert!(out.fallback.is_some());
    }

    #[test]
    fn effective_delta_handles_constraint_flip() {
        let raw = CsrMatrix::from_dense(&nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]));
        let zero = CsrMatrix::zeros(2);
        let d = effective_delta(&raw, &zero, &[false, false], &[true, false]);
        let want = nalgebra::DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, 0.0]);
        assert_eq!(d.to_dense(), want);
    }

    #[test]
    fn empty_modification_has_zero_delta() {
        let m = demo::cantilever(demo::Beam::default(), 9, 3).unwrap();
        let baseline = StiffnessSystem::single(&m).unwrap();
        let (_, _, out) = modify_and_update(&m, &baseline, &Modification::default(), UpdateStrategy::Local).unwrap();
        assert_eq!(out.delta.nnz(), 0);
        assert!(out.touched_dofs.is_empty());
    }
}
