//! Generators for the bundled demonstration models.
//!
//! All demos use regular node lattices with stable ids (the lattice index),
//! background cells of the lattice pitch, and `theta = 0.25 / pitch²`, i.e. a
//! Gaussian correlation length of two node spacings.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::Result;
use crate::model::{
    BackgroundGrid, BoundaryConditions, Domain, ElasticityMode, InterpSettings, MaterialModel, Model, Modification,
    NodeCloud, NodeId, PolyBasis, Shape, Traction,
};
use crate::Point;

/// Regular lattice over `[origin, origin + counts·h]` keeping nodes for which
/// `keep` holds; ids are lattice indices with x varying fastest.
pub fn lattice(
    dim: usize,
    origin: [f64; 3],
    counts: [usize; 3],
    h: f64,
    keep: impl Fn(&Point<f64>) -> bool,
) -> Vec<(NodeId, Point<f64>)> {
    let nz = if dim == 3 { counts[2] + 1 } else { 1 };
    let mut out = Vec::new();
    for k in 0..nz {
        for j in 0..=counts[1] {
            for i in 0..=counts[0] {
                let mut x = [origin[0] + i as f64 * h, origin[1] + j as f64 * h, 0.0];
                if dim == 3 {
                    x[2] = origin[2] + k as f64 * h;
                }
                if keep(&x) {
                    let id = (i + (counts[0] + 1) * (j + (counts[1] + 1) * k)) as NodeId;
                    out.push((id, x));
                }
            }
        }
    }
    out
}

fn units() -> BTreeMap<String, String> {
    [("length", "mm"), ("force", "mN"), ("stress", "mN/mm^2")]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect()
}

fn interp(h: f64) -> InterpSettings<f64> {
    InterpSettings {
        alpha: 3.0,
        theta: 0.25 / (h * h),
        basis: PolyBasis::Linear,
    }
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

fn ids_where(nodes: &[(NodeId, Point<f64>)], pred: impl Fn(&Point<f64>) -> bool) -> Vec<NodeId> {
    nodes.iter().filter(|(_, x)| pred(x)).map(|(id, _)| *id).collect()
}

/// Square patch `[0, size]²` with `n × n` nodes under uniform tension
/// `sigma` in x. Both x-faces carry the exact traction (so the load is
/// self-equilibrated) and three point constraints at nodes where the exact
/// field vanishes remove the rigid modes without carrying any reaction.
///
/// Shape functions only vanish at other nodes, not along edges, so fixing a
/// whole edge of nodes would not impose the edge condition exactly.
pub fn unit_patch(n: usize, size: f64, sigma: f64) -> Result<Model<f64>> {
    let h = size / (n - 1) as f64;
    let nodes = lattice(2, [0.0; 3], [n - 1, n - 1, 0], h, |_| true);
    let mut bc = BoundaryConditions::default();
    bc.fixed.insert((0, 0));
    bc.fixed.insert((0, 1));
    bc.fixed.insert(((n - 1) as NodeId, 1));
    for j in 0..n - 1 {
        let y0 = j as f64 * h;
        bc.tractions
            .push(Traction::uniform([size, y0, 0.0], [size, y0 + h, 0.0], [sigma, 0.0, 0.0]));
        bc.tractions
            .push(Traction::uniform([0.0, y0, 0.0], [0.0, y0 + h, 0.0], [-sigma, 0.0, 0.0]));
    }
    let cloud = NodeCloud::new(2, nodes)?;
    let grid = BackgroundGrid::new(2, [0.0; 3], [h, h, h], [n - 1, n - 1, 1], Domain::default())?;
    let mat = MaterialModel::new(1.0, 0.25, ElasticityMode::PlaneStress)?;
    let mut m = Model::new(cloud, grid, mat, bc, interp(h))?;
    m.units = units();
    Ok(m)
}

/// Timoshenko cantilever parameters (length, depth, E, nu, end load).
#[derive(Debug, Clone, Copy)]
pub struct Beam {
    pub length: f64,
    pub depth: f64,
    pub young: f64,
    pub poisson: f64,
    pub load: f64,
}

impl Default for Beam {
    fn default() -> Self {
        Beam {
            length: 48.0,
            depth: 12.0,
            young: 3.0e7,
            poisson: 0.3,
            load: 1000.0,
        }
    }
}

impl Beam {
    fn inertia(&self) -> f64 {
        self.depth.powi(3) / 12.0
    }

    /// Bending stress of the elasticity solution (downward end load).
    pub fn sigma_xx(&self, x: f64, y: f64) -> f64 {
        self.load * (self.length - x) * y / self.inertia()
    }

    /// Shear stress of the elasticity solution.
    pub fn tau_xy(&self, y: f64) -> f64 {
        -self.load / (2.0 * self.inertia()) * (self.depth * self.depth / 4.0 - y * y)
    }

    /// Closed-form vertical deflection of the beam axis at the loaded end.
    pub fn tip_deflection(&self) -> f64 {
        let (p, l, d, e, nu, i) = (self.load, self.length, self.depth, self.young, self.poisson, self.inertia());
        -(p * l.powi(3) / (3.0 * e * i) + (4.0 + 5.0 * nu) * p * d * d * l / (24.0 * e * i))
    }
}

/// Linear pieces along a vertical edge whose resultant matches the exact
/// (at most quadratic) traction on every piece.
fn edge_tractions(x: f64, y0: f64, y1: f64, pieces: usize, t: impl Fn(f64) -> [f64; 2]) -> Vec<Traction<f64>> {
    let h = (y1 - y0) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let (a, b) = (y0 + k as f64 * h, y0 + (k + 1) as f64 * h);
            let (ta, tb, tm) = (t(a), t(b), t(0.5 * (a + b)));
            // Simpson mean minus trapezoid mean, added to both ends.
            let mut qa = [0.0; 3];
            let mut qb = [0.0; 3];
            for c in 0..2 {
                let simpson = (ta[c] + 4.0 * tm[c] + tb[c]) / 6.0;
                let shift = simpson - 0.5 * (ta[c] + tb[c]);
                qa[c] = ta[c] + shift;
                qb[c] = tb[c] + shift;
            }
            Traction {
                from: [x, a, 0.0],
                to: [x, b, 0.0],
                q: qa,
                q_end: Some(qb),
            }
        })
        .collect()
}

/// Plane-stress cantilever `[0, L] × [−D/2, D/2]` on an `nx × ny` lattice.
///
/// Both end faces carry the tractions of the elasticity solution; the three
/// root points where that solution has zero horizontal displacement (and the
/// root centre, also zero vertical displacement) remove the rigid modes.
pub fn cantilever(beam: Beam, nx: usize, ny: usize) -> Result<Model<f64>> {
    let h = beam.length / (nx - 1) as f64;
    let hy = beam.depth / (ny - 1) as f64;
    if (h - hy).abs() > 1e-12 * h {
        return Err(crate::Error::Validation(format!("cantilever lattice {nx}×{ny} is not square")));
    }
    let half = beam.depth / 2.0;
    let nodes = lattice(2, [0.0, -half, 0.0], [nx - 1, ny - 1, 0], h, |_| true);
    let mut bc = BoundaryConditions::default();
    for id in ids_where(&nodes, |x| near(x[0], 0.0) && (near(x[1], 0.0) || near(x[1].abs(), half))) {
        bc.fixed.insert((id, 0));
    }
    for id in ids_where(&nodes, |x| near(x[0], 0.0) && near(x[1], 0.0)) {
        bc.fixed.insert((id, 1));
    }
    let b = beam;
    bc.tractions
        .extend(edge_tractions(0.0, -half, half, ny - 1, |y| [-b.sigma_xx(0.0, y), -b.tau_xy(y)]));
    bc.tractions
        .extend(edge_tractions(b.length, -half, half, ny - 1, |y| [0.0, b.tau_xy(y)]));
    let cloud = NodeCloud::new(2, nodes)?;
    let grid = BackgroundGrid::new(2, [0.0, -half, 0.0], [h, h, h], [nx - 1, ny - 1, 1], Domain::default())?;
    let mat = MaterialModel::new(beam.young, beam.poisson, ElasticityMode::PlaneStress)?;
    Model::new(cloud, grid, mat, bc, interp(h))
}

/// Id of the lattice node nearest to `p`.
pub fn nearest_id(model: &Model<f64>, p: [f64; 3]) -> NodeId {
    let (i, _) = model.cloud.nearest(&p, 1, None)[0];
    model.cloud.ids()[i]
}

fn ball(c: [f64; 2], r: f64) -> Shape {
    Shape::Ball {
        center: c.to_vec(),
        radius: r,
    }
}

/// Rectangular plate `L × D` (clamped left edge, vertical point load at the
/// middle of the right edge) and the modification that cuts two circular
/// holes, removing roughly a third of the nodes.
pub fn plate_with_holes(pitch: f64) -> Result<(Model<f64>, Modification<f64>)> {
    let (l, d) = (100.0, 50.0);
    let (nx, ny) = ((l / pitch).round() as usize, (d / pitch).round() as usize);
    let nodes = lattice(2, [0.0; 3], [nx, ny, 0], pitch, |_| true);
    let mut bc = BoundaryConditions::default();
    for id in ids_where(&nodes, |x| near(x[0], 0.0)) {
        bc.fixed.insert((id, 0));
        bc.fixed.insert((id, 1));
    }
    let cloud = NodeCloud::new(2, nodes.clone())?;
    let grid = BackgroundGrid::new(2, [0.0; 3], [pitch; 3], [nx, ny, 1], Domain::default())?;
    let mat = MaterialModel::new(2.0e8, 0.3, ElasticityMode::PlaneStress)?;
    let mut model = Model::new(cloud, grid, mat, bc, interp(pitch))?;
    let tip = nearest_id(&model, [l, d / 2.0, 0.0]);
    model.bc.point_loads.push((tip, 1, -1000.0));
    model.units = units();

    let holes = [([30.0, 25.0], 16.5), ([70.0, 25.0], 16.5)];
    let removed: BTreeSet<NodeId> = ids_where(&nodes, |x| {
        holes
            .iter()
            .any(|(c, r)| (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) < r * r * (1.0 - 1e-12))
    })
    .into_iter()
    .collect();
    let m = Modification {
        removed,
        domain: Some(Domain {
            include: Vec::new(),
            exclude: holes.iter().map(|(c, r)| ball(*c, *r)).collect(),
        }),
        ..Default::default()
    };
    Ok((model, m))
}

/// Same plate as [`plate_with_holes`]; the modification tapers it linearly
/// from full depth at the clamp to a third of the depth at the loaded end,
/// removing roughly a third of the nodes.
pub fn tapered_plate(pitch: f64) -> Result<(Model<f64>, Modification<f64>)> {
    let (model, _) = plate_with_holes(pitch)?;
    let (l, d) = (100.0, 50.0);
    let cut = d / 3.0;
    let exclude = vec![
        Shape::Polygon {
            points: vec![[0.0, d], [l, d], [l, d - cut]],
        },
        Shape::Polygon {
            points: vec![[0.0, 0.0], [l, cut], [l, 0.0]],
        },
    ];
    let fixed = model.bc.referenced_nodes();
    // Nodes on the cut line go too, so no node is left without quadrature
    // cells around it.
    let removed = model
        .cloud
        .ids()
        .iter()
        .zip(model.cloud.coords())
        .filter(|(id, x)| !fixed.contains(id) && exclude.iter().any(|s| s.contains(&x[..2], false)))
        .map(|(id, _)| *id)
        .collect();
    let m = Modification {
        removed,
        domain: Some(Domain {
            include: Vec::new(),
            exclude,
        }),
        ..Default::default()
    };
    Ok((model, m))
}

fn bracket_domain(fillet: f64) -> Domain {
    let (t, arm_y) = (12.0, 36.0);
    let mut include = vec![
        Shape::Box {
            min: vec![0.0, 0.0],
            max: vec![t, 48.0],
        },
        Shape::Box {
            min: vec![0.0, arm_y],
            max: vec![60.0, 48.0],
        },
    ];
    let mut exclude = vec![ball([6.0, 8.0], 2.5), ball([6.0, 24.0], 2.5)];
    if fillet > 0.0 {
        include.push(Shape::Box {
            min: vec![t, arm_y - fillet],
            max: vec![t + fillet, arm_y],
        });
        exclude.push(ball([t + fillet, arm_y - fillet], fillet));
    }
    Domain { include, exclude }
}

/// L-shaped support bracket pinned at two holes with an end load; the
/// modification enlarges the re-entrant fillet radius from 2.5 to 7.5.
pub fn support_bracket(pitch: f64) -> Result<(Model<f64>, Modification<f64>)> {
    let (nx, ny) = ((60.0 / pitch).round() as usize, (48.0 / pitch).round() as usize);
    let d0 = bracket_domain(2.5);
    let d1 = bracket_domain(7.5);
    let inside = |d: &Domain, x: &Point<f64>| d.contains(x, 2);
    let nodes = lattice(2, [0.0; 3], [nx, ny, 0], pitch, |x| inside(&d0, x));
    let all = lattice(2, [0.0; 3], [nx, ny, 0], pitch, |x| inside(&d1, x));
    let existing: BTreeSet<NodeId> = nodes.iter().map(|n| n.0).collect();
    let added: Vec<_> = all.into_iter().filter(|(id, _)| !existing.contains(id)).collect();

    let mut bc = BoundaryConditions::default();
    let pin_ring = 2.5 + 0.75 * pitch;
    for id in ids_where(&nodes, |x| {
        [[6.0, 8.0], [6.0, 24.0]]
            .iter()
            .any(|c| ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)).sqrt() <= pin_ring)
    }) {
        bc.fixed.insert((id, 0));
        bc.fixed.insert((id, 1));
    }
    let cloud = NodeCloud::new(2, nodes)?;
    let grid = BackgroundGrid::new(2, [0.0; 3], [pitch; 3], [nx, ny, 1], d0)?;
    let mat = MaterialModel::new(2.0e8, 0.3, ElasticityMode::PlaneStress)?;
    let mut model = Model::new(cloud, grid, mat, bc, interp(pitch))?;
    let tip = nearest_id(&model, [60.0, 42.0, 0.0]);
    model.bc.point_loads.push((tip, 1, -1000.0));
    model.units = units();
    let m = Modification {
        added,
        domain: Some(d1),
        ..Default::default()
    };
    Ok((model, m))
}

fn frame_domain(with_rib: bool) -> Domain {
    let mut include = vec![
        Shape::Box {
            min: vec![0.0, 0.0, 0.0],
            max: vec![3.0, 12.0, 3.0],
        },
        Shape::Box {
            min: vec![0.0, 9.0, 0.0],
            max: vec![12.0, 12.0, 3.0],
        },
    ];
    if with_rib {
        // Triangular rib (3,9)-(8,9)-(3,4), one pitch thick at mid-width.
        include.push(Shape::Intersection {
            parts: vec![
                Shape::Box {
                    min: vec![3.0, 4.0, 1.0],
                    max: vec![8.0, 9.0, 2.0],
                },
                Shape::HalfSpace {
                    normal: vec![1.0, -1.0, 0.0],
                    offset: -1.0,
                },
            ],
        });
    }
    Domain {
        include,
        exclude: Vec::new(),
    }
}

/// Coarse 3D L-frame with a fixed base and a uniform line load on the top
/// outer edge; the modification adds a triangular rib at the inner corner.
pub fn l_frame(pitch: f64) -> Result<(Model<f64>, Modification<f64>)> {
    let n = (12.0 / pitch).round() as usize;
    let nz = (3.0 / pitch).round() as usize;
    let d0 = frame_domain(false);
    let d1 = frame_domain(true);
    let nodes = lattice(3, [0.0; 3], [n, n, nz], pitch, |x| d0.contains(x, 3));
    let all = lattice(3, [0.0; 3], [n, n, nz], pitch, |x| d1.contains(x, 3));
    let existing: BTreeSet<NodeId> = nodes.iter().map(|n| n.0).collect();
    let added: Vec<_> = all.into_iter().filter(|(id, _)| !existing.contains(id)).collect();
    let mut bc = BoundaryConditions::default();
    for id in ids_where(&nodes, |x| near(x[1], 0.0)) {
        for a in 0..3 {
            bc.fixed.insert((id, a));
        }
    }
    bc.tractions
        .push(Traction::uniform([12.0, 12.0, 0.0], [12.0, 12.0, 3.0], [0.0, -100.0, 0.0]));
    let cloud = NodeCloud::new(3, nodes)?;
    let grid = BackgroundGrid::new(3, [0.0; 3], [pitch; 3], [n, n, nz], d0)?;
    let mat = MaterialModel::new(2.0e8, 0.3, ElasticityMode::Solid3d)?;
    let mut model = Model::new(cloud, grid, mat, bc, interp(pitch))?;
    model.units = units();
    let m = Modification {
        added,
        domain: Some(d1),
        ..Default::default()
    };
    Ok((model, m))
}

/// Size of modification generated for a benchmark family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchKind {
    /// About 1.5 % of the nodes removed near the loaded end.
    Small,
    /// About 30 % of the nodes removed by a central hole.
    Large,
}

/// Rectangular plate of `nx × ny` unit cells (2:1 aspect) with a modification
/// of the requested kind.
pub fn bench_plate(nx: usize, ny: usize, kind: BenchKind) -> Result<(Model<f64>, Modification<f64>)> {
    let h = 1.0;
    let (l, d) = (nx as f64, ny as f64);
    let nodes = lattice(2, [0.0; 3], [nx, ny, 0], h, |_| true);
    let mut bc = BoundaryConditions::default();
    for id in ids_where(&nodes, |x| near(x[0], 0.0)) {
        bc.fixed.insert((id, 0));
        bc.fixed.insert((id, 1));
    }
    let cloud = NodeCloud::new(2, nodes.clone())?;
    let grid = BackgroundGrid::new(2, [0.0; 3], [h; 3], [nx, ny, 1], Domain::default())?;
    let mat = MaterialModel::new(2.0e8, 0.3, ElasticityMode::PlaneStress)?;
    let mut model = Model::new(cloud, grid, mat, bc, interp(h))?;
    let tip = nearest_id(&model, [l, d / 2.0, 0.0]);
    model.bc.point_loads.push((tip, 1, -1000.0));
    model.units = units();
    let total = nodes.len() as f64;
    let (center, frac) = match kind {
        BenchKind::Small => ([0.8 * l, 0.5 * d], 0.015),
        BenchKind::Large => ([0.5 * l, 0.5 * d], 0.30),
    };
    let r = (frac * total * h * h / std::f64::consts::PI).sqrt();
    let removed: BTreeSet<NodeId> = ids_where(&nodes, |x| {
        (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2) < r * r * (1.0 - 1e-12)
    })
    .into_iter()
    .filter(|id| *id != tip)
    .collect();
    let m = Modification {
        removed,
        domain: Some(Domain {
            include: Vec::new(),
            exclude: vec![ball(center, r)],
        }),
        ..Default::default()
    };
    Ok((model, m))
}
