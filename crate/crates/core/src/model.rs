//! Problem data model: node clouds, background grid, material, boundary
//! conditions, modifications and the union DOF bookkeeping shared by the
//! initial and modified configurations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spatial::{dist2, SpatialIndex};
use crate::Point;

pub type NodeId = u64;

fn point_from<T: Real>(x: &[f64], dim: usize, what: &str) -> Result<Point<T>> {
    if x.len() != dim {
        return Err(Error::Validation(format!(
            "{what}: expected {dim} coordinates, got {}",
            x.len()
        )));
    }
    let mut p = [T::zero(); 3];
    for (k, &v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Validation(format!("{what}: non-finite coordinate")));
        }
        p[k] = T::lit(v);
    }
    Ok(p)
}

fn point_to<T: Real>(p: &Point<T>, dim: usize) -> Vec<f64> {
    p[..dim].iter().map(|v| v.as_f64()).collect()
}

// ---------------------------------------------------------------------------
// Node cloud

/// Scattered field nodes, kept sorted by id so that positions inside the
/// cloud follow the deterministic DOF order.
#[derive(Debug, Clone)]
pub struct NodeCloud<T: Real> {
    dim: usize,
    ids: Vec<NodeId>,
    coords: Vec<Point<T>>,
    index: Arc<SpatialIndex<T>>,
}

impl<T: Real> NodeCloud<T> {
    pub fn new(dim: usize, nodes: Vec<(NodeId, Point<T>)>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Validation(format!("dim must be 2 or 3, got {dim}")));
        }
        let mut nodes = nodes;
        nodes.sort_by_key(|n| n.0);
        for w in nodes.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Validation(format!("duplicate node id {}", w[0].0)));
            }
        }
        for (id, x) in &nodes {
            if x[..dim].iter().any(|v| !v.is_finite_value()) {
                return Err(Error::Validation(format!("node {id} has non-finite coordinates")));
            }
        }
        // Coincident nodes make the correlation matrix singular.
        let mut order: Vec<usize> = (0..nodes.len()).collect();
        order.sort_by(|&a, &b| {
            let (pa, pb) = (&nodes[a].1, &nodes[b].1);
            pa[0]
                .partial_cmp(&pb[0])
                .unwrap()
                .then(pa[1].partial_cmp(&pb[1]).unwrap())
                .then(pa[2].partial_cmp(&pb[2]).unwrap())
        });
        for w in order.windows(2) {
            if dist2(&nodes[w[0]].1, &nodes[w[1]].1, dim) == T::zero() {
                return Err(Error::Validation(format!(
                    "nodes {} and {} coincide",
                    nodes[w[0]].0, nodes[w[1]].0
                )));
            }
        }
        let ids: Vec<NodeId> = nodes.iter().map(|n| n.0).collect();
        let coords: Vec<Point<T>> = nodes.iter().map(|n| n.1).collect();
        let index = Arc::new(SpatialIndex::new(&coords, dim));
        Ok(NodeCloud { dim, ids, coords, index })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Node ids in ascending order.
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn coords(&self) -> &[Point<T>] {
        &self.coords
    }

    pub fn position(&self, id: NodeId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.position(id).is_some()
    }

    pub fn coord(&self, id: NodeId) -> Option<&Point<T>> {
        self.position(id).map(|p| &self.coords[p])
    }

    pub fn index(&self) -> &SpatialIndex<T> {
        &self.index
    }

    pub fn within(&self, p: &Point<T>, r: T) -> Vec<usize> {
        self.index.within(&self.coords, p, r)
    }

    pub fn nearest(&self, p: &Point<T>, k: usize, skip: Option<usize>) -> Vec<(usize, T)> {
        self.index.nearest(&self.coords, p, k, skip)
    }
}

impl<T: Real> PartialEq for NodeCloud<T> {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.ids == other.ids && self.coords == other.coords
    }
}

// ---------------------------------------------------------------------------
// Domain geometry

/// Primitive used to describe the analysis domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Box { min: Vec<f64>, max: Vec<f64> },
    /// Disc in 2D, sphere in 3D.
    Ball { center: Vec<f64>, radius: f64 },
    /// Simple 2D polygon (even-odd rule).
    Polygon { points: Vec<[f64; 2]> },
    /// `normal · x <= offset`.
    HalfSpace { normal: Vec<f64>, offset: f64 },
    Intersection { parts: Vec<Shape> },
}

impl Shape {
    /// Closed membership test; `strict` excludes the boundary.
    pub fn contains(&self, x: &[f64], strict: bool) -> bool {
        let eps = 1e-12;
        match self {
            Shape::Box { min, max } => x.iter().enumerate().all(|(k, &v)| {
                if strict {
                    v > min[k] + eps && v < max[k] - eps
                } else {
                    v >= min[k] - eps && v <= max[k] + eps
                }
            }),
            Shape::Ball { center, radius } => {
                let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                let r2 = radius * radius;
                if strict {
                    d2 < r2 * (1.0 - eps)
                } else {
                    d2 <= r2 * (1.0 + eps)
                }
            }
            Shape::Polygon { points } => {
                let (px, py) = (x[0], x[1]);
                let n = points.len();
                // Boundary points count as inside for the closed test.
                for i in 0..n {
                    let a = points[i];
                    let b = points[(i + 1) % n];
                    let cross = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
                    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                    if cross.abs() <= eps * len.max(1.0)
                        && px >= a[0].min(b[0]) - eps
                        && px <= a[0].max(b[0]) + eps
                        && py >= a[1].min(b[1]) - eps
                        && py <= a[1].max(b[1]) + eps
                    {
                        return !strict;
                    }
                }
                let mut inside = false;
                let mut j = n - 1;
                for i in 0..n {
                    let (xi, yi) = (points[i][0], points[i][1]);
                    let (xj, yj) = (points[j][0], points[j][1]);
                    if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
            Shape::HalfSpace { normal, offset } => {
                let s: f64 = x.iter().zip(normal).map(|(a, b)| a * b).sum();
                if strict {
                    s < offset - eps
                } else {
                    s <= offset + eps
                }
            }
            Shape::Intersection { parts } => parts.iter().all(|p| p.contains(x, strict)),
        }
    }
}

/// Solution domain: union of `include` minus the interiors of `exclude`.
/// An empty `include` list means the whole background grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    #[serde(default)]
    pub include: Vec<Shape>,
    #[serde(default)]
    pub exclude: Vec<Shape>,
}

impl Domain {
    pub fn contains<T: Real>(&self, p: &Point<T>, dim: usize) -> bool {
        let x: Vec<f64> = p[..dim].iter().map(|v| v.as_f64()).collect();
        (self.include.is_empty() || self.include.iter().any(|s| s.contains(&x, false)))
            && !self.exclude.iter().any(|s| s.contains(&x, true))
    }
}

// ---------------------------------------------------------------------------
// Background grid

/// 2-point Gauss–Legendre abscissa on [-1, 1].
pub(crate) fn gauss_abscissa<T: Real>() -> T {
    T::one() / T::lit(3.0).sqrt()
}

/// Axis-aligned background cells carrying the quadrature points.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundGrid<T: Real> {
    dim: usize,
    origin: Point<T>,
    cell_size: Point<T>,
    counts: [usize; 3],
    domain: Domain,
    active: Vec<bool>,
}

impl<T: Real> BackgroundGrid<T> {
    pub fn new(dim: usize, origin: Point<T>, cell_size: Point<T>, counts: [usize; 3], domain: Domain) -> Result<Self> {
        for k in 0..dim {
            if !(cell_size[k] > T::zero()) || !cell_size[k].is_finite_value() {
                return Err(Error::Validation(format!("cell_size[{k}] must be positive")));
            }
            if counts[k] == 0 {
                return Err(Error::Validation(format!("counts[{k}] must be positive")));
            }
        }
        let mut counts = counts;
        let mut cell_size = cell_size;
        for k in dim..3 {
            counts[k] = 1;
            cell_size[k] = T::one();
        }
        let mut g = BackgroundGrid {
            dim,
            origin,
            cell_size,
            counts,
            domain,
            active: Vec::new(),
        };
        g.active = (0..g.num_cells())
            .map(|c| g.cell_gauss_points(c).iter().any(|(x, _)| g.domain.contains(x, dim)))
            .collect();
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn origin(&self) -> &Point<T> {
        &self.origin
    }

    pub fn cell_size(&self) -> &Point<T> {
        &self.cell_size
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Same cells, different solution domain.
    pub fn with_domain(&self, domain: Domain) -> Self {
        BackgroundGrid::new(self.dim, self.origin, self.cell_size, self.counts, domain)
            .expect("grid already validated")
    }

    pub fn num_cells(&self) -> usize {
        self.counts[0] * self.counts[1] * self.counts[2]
    }

    pub fn is_active(&self, cell: usize) -> bool {
        self.active[cell]
    }

    /// Indices of cells with at least one Gauss point inside the domain.
    pub fn active_cells(&self) -> Vec<usize> {
        (0..self.num_cells()).filter(|&c| self.active[c]).collect()
    }

    pub fn min_cell_edge(&self) -> T {
        let mut m = self.cell_size[0];
        for k in 1..self.dim {
            m = m.min(self.cell_size[k]);
        }
        m
    }

    pub fn cell_ijk(&self, cell: usize) -> [usize; 3] {
        let i = cell % self.counts[0];
        let j = (cell / self.counts[0]) % self.counts[1];
        let k = cell / (self.counts[0] * self.counts[1]);
        [i, j, k]
    }

    pub fn cell_index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.counts[0] * (ijk[1] + self.counts[1] * ijk[2])
    }

    pub fn cell_bounds(&self, cell: usize) -> (Point<T>, Point<T>) {
        let ijk = self.cell_ijk(cell);
        let mut lo = [T::zero(); 3];
        let mut hi = [T::zero(); 3];
        for k in 0..self.dim {
            lo[k] = self.origin[k] + T::from_usize_lossy(ijk[k]) * self.cell_size[k];
            hi[k] = lo[k] + self.cell_size[k];
        }
        (lo, hi)
    }

    /// All cells whose closed box contains `p` (up to 2^d for a shared corner).
    pub fn cells_containing(&self, p: &Point<T>) -> Vec<usize> {
        let tol = T::lit(1e-9);
        let mut ranges: [(usize, usize); 3] = [(0, 0); 3];
        for k in 0..3 {
            if k >= self.dim {
                ranges[k] = (0, 0);
                continue;
            }
            let f = ((p[k] - self.origin[k]) / self.cell_size[k]).as_f64();
            let n = self.counts[k] as f64;
            let t = tol.as_f64();
            if f < -t || f > n + t {
                return Vec::new();
            }
            let lo = (f - t).floor().max(0.0) as usize;
            let hi = ((f + t).floor() as usize).min(self.counts[k] - 1);
            // A coordinate just past a cell face still belongs to the lower cell.
            let lo = lo.min(self.counts[k] - 1);
            ranges[k] = (lo, hi.max(lo));
        }
        let mut out = Vec::new();
        for k in ranges[2].0..=ranges[2].1 {
            for j in ranges[1].0..=ranges[1].1 {
                for i in ranges[0].0..=ranges[0].1 {
                    out.push(self.cell_index([i, j, k]));
                }
            }
        }
        out
    }

    /// Gauss points of one cell (ignoring the domain), with weight × jacobian.
    pub fn cell_gauss_points(&self, cell: usize) -> Vec<(Point<T>, T)> {
        let (lo, hi) = self.cell_bounds(cell);
        let g = gauss_abscissa::<T>();
        let half = T::lit(0.5);
        let mut w = T::one();
        for k in 0..self.dim {
            w *= self.cell_size[k] * half;
        }
        let npts = 1usize << self.dim;
        let mut out = Vec::with_capacity(npts);
        // x varies fastest.
        for q in 0..npts {
            let mut x = [T::zero(); 3];
            for k in 0..self.dim {
                let s = if (q >> k) & 1 == 0 { -g } else { g };
                let mid = (lo[k] + hi[k]) * half;
                x[k] = mid + s * (hi[k] - lo[k]) * half;
            }
            out.push((x, w));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Material

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElasticityMode {
    PlaneStress,
    #[serde(rename = "solid_3d")]
    Solid3d,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialModel<T: Real> {
    pub young_modulus: T,
    pub poisson_ratio: T,
    pub mode: ElasticityMode,
}

impl<T: Real> MaterialModel<T> {
    pub fn new(young_modulus: T, poisson_ratio: T, mode: ElasticityMode) -> Result<Self> {
        if !(young_modulus > T::zero()) || !young_modulus.is_finite_value() {
            return Err(Error::Validation("Young's modulus must be positive".into()));
        }
        if !(poisson_ratio >= T::zero() && poisson_ratio < T::lit(0.5)) {
            return Err(Error::Validation(format!(
                "Poisson ratio must satisfy 0 <= nu < 0.5, got {}",
                poisson_ratio.as_f64()
            )));
        }
        Ok(MaterialModel {
            young_modulus,
            poisson_ratio,
            mode,
        })
    }

    pub fn dim(&self) -> usize {
        match self.mode {
            ElasticityMode::PlaneStress => 2,
            ElasticityMode::Solid3d => 3,
        }
    }

    /// Number of independent strain components (3 in 2D, 6 in 3D).
    pub fn strain_components(&self) -> usize {
        match self.mode {
            ElasticityMode::PlaneStress => 3,
            ElasticityMode::Solid3d => 6,
        }
    }
}

// ---------------------------------------------------------------------------
// Boundary conditions

/// Distributed load along a straight segment: `q` at `from`, varying
/// linearly to `q_end` at `to` (uniform when `q_end` is absent).
#[derive(Debug, Clone, PartialEq)]
pub struct Traction<T: Real> {
    pub from: Point<T>,
    pub to: Point<T>,
    pub q: Point<T>,
    pub q_end: Option<Point<T>>,
}

impl<T: Real> Traction<T> {
    pub fn uniform(from: Point<T>, to: Point<T>, q: Point<T>) -> Self {
        Traction { from, to, q, q_end: None }
    }

    /// Load intensity at parameter `s` in [0, 1] along the segment.
    pub fn intensity(&self, s: T) -> Point<T> {
        match self.q_end {
            None => self.q,
            Some(e) => {
                let mut out = [T::zero(); 3];
                for k in 0..3 {
                    out[k] = self.q[k] + (e[k] - self.q[k]) * s;
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundaryConditions<T: Real> {
    /// Zero-displacement constraints as (node id, axis).
    pub fixed: BTreeSet<(NodeId, usize)>,
    pub point_loads: Vec<(NodeId, usize, T)>,
    pub tractions: Vec<Traction<T>>,
}

impl<T: Real> BoundaryConditions<T> {
    pub fn validate(&self, cloud: &NodeCloud<T>) -> Result<()> {
        let dim = cloud.dim();
        for &(id, axis) in &self.fixed {
            if !cloud.contains(id) {
                return Err(Error::Validation(format!("fixed dof references missing node {id}")));
            }
            if axis >= dim {
                return Err(Error::Validation(format!("fixed dof axis {axis} out of range")));
            }
        }
        for &(id, axis, v) in &self.point_loads {
            if !cloud.contains(id) {
                return Err(Error::Validation(format!("point load on nonexistent node {id}")));
            }
            if axis >= dim {
                return Err(Error::Validation(format!("point load axis {axis} out of range")));
            }
            if !v.is_finite_value() {
                return Err(Error::Validation("non-finite point load".into()));
            }
            if self.fixed.contains(&(id, axis)) {
                return Err(Error::Validation(format!(
                    "dof ({id}, {axis}) is both fixed and point-loaded"
                )));
            }
        }
        Ok(())
    }

    /// Node ids referenced by any fixed DOF or point load.
    pub fn referenced_nodes(&self) -> BTreeSet<NodeId> {
        self.fixed
            .iter()
            .map(|f| f.0)
            .chain(self.point_loads.iter().map(|p| p.0))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Interpolation settings

/// Polynomial basis appended to the Kriging correlation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolyBasis {
    Constant,
    #[default]
    Linear,
}

impl PolyBasis {
    pub fn terms(&self, dim: usize) -> usize {
        match self {
            PolyBasis::Constant => 1,
            PolyBasis::Linear => dim + 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpSettings<T: Real> {
    /// Support-radius scale, `d_m = alpha * d_c`.
    pub alpha: T,
    /// Gaussian correlation parameter (1/length²).
    pub theta: T,
    pub basis: PolyBasis,
}

impl<T: Real> Default for InterpSettings<T> {
    fn default() -> Self {
        InterpSettings {
            alpha: T::lit(3.0),
            theta: T::one(),
            basis: PolyBasis::Linear,
        }
    }
}

// ---------------------------------------------------------------------------
// Model

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real> {
    pub cloud: NodeCloud<T>,
    pub grid: BackgroundGrid<T>,
    pub material: MaterialModel<T>,
    pub bc: BoundaryConditions<T>,
    pub interp: InterpSettings<T>,
    /// Unit labels carried verbatim from the model file.
    pub units: BTreeMap<String, String>,
}

impl<T: Real> Model<T> {
    pub fn new(
        cloud: NodeCloud<T>,
        grid: BackgroundGrid<T>,
        material: MaterialModel<T>,
        bc: BoundaryConditions<T>,
        interp: InterpSettings<T>,
    ) -> Result<Self> {
        if grid.dim() != cloud.dim() {
            return Err(Error::Validation("grid and cloud dimensions differ".into()));
        }
        if material.dim() != cloud.dim() {
            return Err(Error::Validation(format!(
                "material mode {:?} incompatible with dim {}",
                material.mode,
                cloud.dim()
            )));
        }
        if !(interp.alpha > T::zero()) || !(interp.theta > T::zero()) {
            return Err(Error::Validation("alpha and theta must be positive".into()));
        }
        bc.validate(&cloud)?;
        Ok(Model {
            cloud,
            grid,
            material,
            bc,
            interp,
            units: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.cloud.dim()
    }

    /// Builds the modified model and the union DOF map over both node sets.
    pub fn apply_modification(&self, m: &Modification<T>) -> Result<(Model<T>, DofMap)> {
        m.validate(&self.cloud)?;
        let dim = self.dim();
        let bc = match &m.bc {
            Some(bc) => bc.clone(),
            None => {
                let touched = self.bc.referenced_nodes();
                if let Some(id) = m.removed.iter().find(|id| touched.contains(id)) {
                    return Err(Error::Validation(format!(
                        "removed node {id} carries a load or constraint; supply a bc change"
                    )));
                }
                self.bc.clone()
            }
        };
        let mut nodes: Vec<(NodeId, Point<T>)> = self
            .cloud
            .ids()
            .iter()
            .zip(self.cloud.coords())
            .filter(|(id, _)| !m.removed.contains(id))
            .map(|(id, x)| (*id, *x))
            .collect();
        nodes.extend(m.added.iter().cloned());
        let cloud = NodeCloud::new(dim, nodes)?;
        let grid = match &m.domain {
            Some(d) => self.grid.with_domain(d.clone()),
            None => self.grid.clone(),
        };
        let material = m.material.unwrap_or(self.material);
        let mut modified = Model::new(cloud, grid, material, bc, self.interp)?;
        modified.units = self.units.clone();
        let map = DofMap::new(dim, &self.cloud, &modified.cloud);
        Ok((modified, map))
    }
}

// ---------------------------------------------------------------------------
// Modification

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Modification<T: Real> {
    pub added: Vec<(NodeId, Point<T>)>,
    pub removed: BTreeSet<NodeId>,
    pub material: Option<MaterialModel<T>>,
    pub bc: Option<BoundaryConditions<T>>,
    /// Replacement solution domain (e.g. a hole cut out of the plate).
    pub domain: Option<Domain>,
}

impl<T: Real> Modification<T> {
    pub fn validate(&self, cloud: &NodeCloud<T>) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (id, _) in &self.added {
            if cloud.contains(*id) {
                return Err(Error::Validation(format!("added node id {id} already exists")));
            }
            if !seen.insert(*id) {
                return Err(Error::Validation(format!("added node id {id} repeated")));
            }
            if self.removed.contains(id) {
                return Err(Error::Validation(format!("node {id} both added and removed")));
            }
        }
        for id in &self.removed {
            if !cloud.contains(*id) {
                return Err(Error::Validation(format!("removed node {id} does not exist")));
            }
        }
        if let Some(mat) = &self.material {
            if mat.dim() != cloud.dim() {
                return Err(Error::Validation("material change has wrong dimensionality".into()));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.added.is_empty()
            && self.removed.is_empty()
            && self.material.is_none()
            && self.bc.is_none()
            && self.domain.is_none()
    }

    /// No nodes added or removed: the DOF count is unchanged.
    pub fn is_dof_constant(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

// ---------------------------------------------------------------------------
// DOF map

/// Fixed index space over the union of initial and modified nodes,
/// ordered by node id then axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    dim: usize,
    nodes: Vec<NodeId>,
    active_initial: Vec<bool>,
    active_modified: Vec<bool>,
}

impl DofMap {
    pub fn new<T: Real>(dim: usize, initial: &NodeCloud<T>, modified: &NodeCloud<T>) -> Self {
        let mut nodes: Vec<NodeId> = initial.ids().iter().chain(modified.ids()).copied().collect();
        nodes.sort_unstable();
        nodes.dedup();
        let mut active_initial = vec![false; nodes.len() * dim];
        let mut active_modified = vec![false; nodes.len() * dim];
        for (p, id) in nodes.iter().enumerate() {
            let a = initial.contains(*id);
            let b = modified.contains(*id);
            for k in 0..dim {
                active_initial[p * dim + k] = a;
                active_modified[p * dim + k] = b;
            }
        }
        DofMap {
            dim,
            nodes,
            active_initial,
            active_modified,
        }
    }

    /// Map for a single configuration (no modification).
    pub fn single<T: Real>(cloud: &NodeCloud<T>) -> Self {
        Self::new(cloud.dim(), cloud, cloud)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_dofs(&self) -> usize {
        self.nodes.len() * self.dim
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn node_position(&self, id: NodeId) -> Option<usize> {
        self.nodes.binary_search(&id).ok()
    }

    pub fn dof(&self, id: NodeId, axis: usize) -> Option<usize> {
        self.node_position(id).map(|p| p * self.dim + axis)
    }

    pub fn dof_owner(&self, dof: usize) -> (NodeId, usize) {
        (self.nodes[dof / self.dim], dof % self.dim)
    }

    pub fn active_initial(&self) -> &[bool] {
        &self.active_initial
    }

    pub fn active_modified(&self) -> &[bool] {
        &self.active_modified
    }

    /// Union node position for every node of `cloud`, in cloud order.
    pub fn positions_of<T: Real>(&self, cloud: &NodeCloud<T>) -> Vec<usize> {
        cloud
            .ids()
            .iter()
            .map(|id| self.node_position(*id).expect("cloud node missing from dof map"))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// JSON

#[derive(Debug, Serialize, Deserialize)]
struct NodeJson {
    id: NodeId,
    x: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GridJson {
    origin: Vec<f64>,
    cell_size: Vec<f64>,
    counts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<Domain>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MaterialJson {
    #[serde(rename = "E")]
    e: f64,
    nu: f64,
    mode: ElasticityMode,
}

#[derive(Debug, Serialize, Deserialize)]
struct TractionJson {
    from: Vec<f64>,
    to: Vec<f64>,
    q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q_end: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize, Default)]
struct BcJson {
    #[serde(default)]
    fixed: Vec<(NodeId, usize)>,
    #[serde(default)]
    point_loads: Vec<(NodeId, usize, f64)>,
    #[serde(default)]
    tractions: Vec<TractionJson>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InterpJson {
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_theta")]
    theta: f64,
    #[serde(default)]
    basis: PolyBasis,
}

fn default_alpha() -> f64 {
    3.0
}

fn default_theta() -> f64 {
    1.0
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelJson {
    dim: usize,
    nodes: Vec<NodeJson>,
    grid: GridJson,
    material: MaterialJson,
    #[serde(default)]
    bc: BcJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    interp: Option<InterpJson>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    units: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize, Default)]
struct ModificationJson {
    #[serde(default)]
    add: Vec<NodeJson>,
    #[serde(default)]
    remove: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    material: Option<MaterialJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bc: Option<BcJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<Domain>,
}

fn material_from<T: Real>(m: &MaterialJson) -> Result<MaterialModel<T>> {
    MaterialModel::new(T::lit(m.e), T::lit(m.nu), m.mode)
}

fn material_to<T: Real>(m: &MaterialModel<T>) -> MaterialJson {
    MaterialJson {
        e: m.young_modulus.as_f64(),
        nu: m.poisson_ratio.as_f64(),
        mode: m.mode,
    }
}

fn bc_from<T: Real>(b: &BcJson, dim: usize) -> Result<BoundaryConditions<T>> {
    let mut fixed = BTreeSet::new();
    for &f in &b.fixed {
        fixed.insert(f);
    }
    let point_loads = b.point_loads.iter().map(|&(id, ax, v)| (id, ax, T::lit(v))).collect();
    let tractions = b
        .tractions
        .iter()
        .map(|t| {
            Ok(Traction {
                from: point_from(&t.from, dim, "traction.from")?,
                to: point_from(&t.to, dim, "traction.to")?,
                q: point_from(&t.q, dim, "traction.q")?,
                q_end: t.q_end.as_ref().map(|e| point_from(e, dim, "traction.q_end")).transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundaryConditions {
        fixed,
        point_loads,
        tractions,
    })
}

fn bc_to<T: Real>(b: &BoundaryConditions<T>, dim: usize) -> BcJson {
    BcJson {
        fixed: b.fixed.iter().copied().collect(),
        point_loads: b.point_loads.iter().map(|&(id, ax, v)| (id, ax, v.as_f64())).collect(),
        tractions: b
            .tractions
            .iter()
            .map(|t| TractionJson {
                from: point_to(&t.from, dim),
                to: point_to(&t.to, dim),
                q: point_to(&t.q, dim),
                q_end: t.q_end.as_ref().map(|e| point_to(e, dim)),
            })
            .collect(),
    }
}

fn nodes_from<T: Real>(nodes: &[NodeJson], dim: usize) -> Result<Vec<(NodeId, Point<T>)>> {
    nodes
        .iter()
        .map(|n| Ok((n.id, point_from(&n.x, dim, &format!("node {}", n.id))?)))
        .collect()
}

fn padded<T: Real>(v: &[f64], dim: usize, what: &str) -> Result<Point<T>> {
    point_from(v, dim, what)
}

impl<T: Real> Model<T> {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let j: ModelJson = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        let dim = j.dim;
        if dim != 2 && dim != 3 {
            return Err(Error::Validation(format!("dim must be 2 or 3, got {dim}")));
        }
        let cloud = NodeCloud::new(dim, nodes_from(&j.nodes, dim)?)?;
        if j.grid.counts.len() != dim {
            return Err(Error::Validation("grid.counts has wrong length".into()));
        }
        let mut counts = [1usize; 3];
        counts[..dim].copy_from_slice(&j.grid.counts);
        let grid = BackgroundGrid::new(
            dim,
            padded(&j.grid.origin, dim, "grid.origin")?,
            padded(&j.grid.cell_size, dim, "grid.cell_size")?,
            counts,
            j.grid.domain.clone().unwrap_or_default(),
        )?;
        let material = material_from(&j.material)?;
        let bc = bc_from(&j.bc, dim)?;
        let interp = match &j.interp {
            Some(i) => InterpSettings {
                alpha: T::lit(i.alpha),
                theta: T::lit(i.theta),
                basis: i.basis,
            },
            None => InterpSettings::default(),
        };
        let mut m = Model::new(cloud, grid, material, bc, interp)?;
        m.units = j.units;
        Ok(m)
    }

    pub fn to_json_string(&self) -> String {
        let dim = self.dim();
        let j = ModelJson {
            dim,
            nodes: self
                .cloud
                .ids()
                .iter()
                .zip(self.cloud.coords())
                .map(|(id, x)| NodeJson {
                    id: *id,
                    x: point_to(x, dim),
                })
                .collect(),
            grid: GridJson {
                origin: point_to(self.grid.origin(), dim),
                cell_size: point_to(self.grid.cell_size(), dim),
                counts: self.grid.counts()[..dim].to_vec(),
                domain: if *self.grid.domain() == Domain::default() {
                    None
                } else {
                    Some(self.grid.domain().clone())
                },
            },
            material: material_to(&self.material),
            bc: bc_to(&self.bc, dim),
            interp: Some(InterpJson {
                alpha: self.interp.alpha.as_f64(),
                theta: self.interp.theta.as_f64(),
                basis: self.interp.basis,
            }),
            units: self.units.clone(),
        };
        serde_json::to_string_pretty(&j).expect("model serializes")
    }
}

impl<T: Real> Modification<T> {
    pub fn from_json_str(s: &str, dim: usize) -> Result<Self> {
        let j: ModificationJson = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(Modification {
            added: nodes_from(&j.add, dim)?,
            removed: j.remove.iter().copied().collect(),
            material: j.material.as_ref().map(material_from).transpose()?,
            bc: j.bc.as_ref().map(|b| bc_from(b, dim)).transpose()?,
            domain: j.domain,
        })
    }

    pub fn to_json_string(&self, dim: usize) -> String {
        let j = ModificationJson {
            add: self
                .added
                .iter()
                .map(|(id, x)| NodeJson {
                    id: *id,
                    x: point_to(x, dim),
                })
                .collect(),
            remove: self.removed.iter().copied().collect(),
            material: self.material.as_ref().map(material_to),
            bc: self.bc.as_ref().map(|b| bc_to(b, dim)),
            domain: self.domain.clone(),
        };
        serde_json::to_string_pretty(&j).expect("modification serializes")
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads and validates a model file.
pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<Model<T>> {
    Model::from_json_str(&read(path.as_ref())?)
}

pub fn load_modification<T: Real>(path: impl AsRef<Path>, dim: usize) -> Result<Modification<T>> {
    Modification::from_json_str(&read(path.as_ref())?, dim)
}

pub fn save_model<T: Real>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model.to_json_string()).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
