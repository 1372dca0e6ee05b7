//! Random clouds and small models shared by the integration tests.

#![allow(dead_code)]

use meshless::model::{
    BackgroundGrid, BoundaryConditions, Domain, ElasticityMode, InterpSettings, MaterialModel, Model, NodeCloud, NodeId,
};
use meshless::Point;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Unit-pitch lattice of `counts` nodes per axis; interior coordinates are
/// jittered by up to `jitter` pitches, boundary nodes stay on their faces.
pub fn jittered_nodes(rng: &mut ChaCha8Rng, dim: usize, counts: [usize; 3], jitter: f64) -> Vec<(NodeId, Point<f64>)> {
    let nz = if dim == 3 { counts[2] } else { 1 };
    let mut out = Vec::new();
    for k in 0..nz {
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                let idx = [i, j, k];
                let mut x = [0.0; 3];
                for a in 0..dim {
                    x[a] = idx[a] as f64;
                    if idx[a] > 0 && idx[a] + 1 < counts[a] {
                        x[a] += rng.gen_range(-jitter..jitter);
                    }
                }
                out.push((out.len() as NodeId, x));
            }
        }
    }
    out
}

/// Model on a jittered lattice: unit cells, left face clamped, a point load
/// at the node with the largest x.
pub fn random_model(rng: &mut ChaCha8Rng, dim: usize, counts: [usize; 3], jitter: f64) -> Model<f64> {
    let nodes = jittered_nodes(rng, dim, counts, jitter);
    let cloud = NodeCloud::new(dim, nodes.clone()).unwrap();
    let mut cells = [1usize; 3];
    for a in 0..dim {
        cells[a] = counts[a] - 1;
    }
    let grid = BackgroundGrid::new(dim, [0.0; 3], [1.0; 3], cells, Domain::default()).unwrap();
    let mode = if dim == 2 {
        ElasticityMode::PlaneStress
    } else {
        ElasticityMode::Solid3d
    };
    let mat = MaterialModel::new(1000.0, 0.3, mode).unwrap();
    let mut bc = BoundaryConditions::default();
    for (id, x) in &nodes {
        if x[0] == 0.0 {
            for a in 0..dim {
                bc.fixed.insert((*id, a));
            }
        }
    }
    let far = nodes
        .iter()
        .max_by(|a, b| (a.1[0] - 1e-3 * a.1[1]).total_cmp(&(b.1[0] - 1e-3 * b.1[1])))
        .unwrap()
        .0;
    bc.point_loads.push((far, 1, -1.0));
    Model::new(cloud, grid, mat, bc, InterpSettings::default()).unwrap()
}

/// Uniform random point inside the box spanned by `counts` unit cells.
pub fn random_point(rng: &mut ChaCha8Rng, dim: usize, counts: [usize; 3]) -> Point<f64> {
    let mut x = [0.0; 3];
    for a in 0..dim {
        x[a] = rng.gen_range(0.0..(counts[a] - 1) as f64);
    }
    x
}

/// Isotropic elasticity matrix, engineering shear, order xx yy (zz yz zx) xy.
pub fn elasticity(e: f64, nu: f64, dim: usize) -> nalgebra::DMatrix<f64> {
    if dim == 2 {
        let c = e / (1.0 - nu * nu);
        nalgebra::DMatrix::from_row_slice(3, 3, &[c, c * nu, 0.0, c * nu, c, 0.0, 0.0, 0.0, c * (1.0 - nu) / 2.0])
    } else {
        let c = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
        let mut d = nalgebra::DMatrix::zeros(6, 6);
        for i in 0..3 {
            for j in 0..3 {
                d[(i, j)] = if i == j { c * (1.0 - nu) } else { c * nu };
            }
            d[(i + 3, i + 3)] = c * (1.0 - 2.0 * nu) / 2.0;
        }
        d
    }
}
