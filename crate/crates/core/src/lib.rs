//! Meshless linear elastostatics with Moving-Kriging shape functions and
//! fast reanalysis after structural modifications.

pub mod analysis;
pub mod assembly;
pub mod bench;
pub mod ca;
pub mod demo;
pub mod error;
pub mod full_solver;
pub mod ifu;
pub mod local_update;
pub mod mk_interp;
pub mod model;
pub mod ordering;
pub mod recovery;
pub mod scalar;
pub mod sparse;
pub mod spatial;

/// Coordinates padded to three components; unused axes are zero.
pub type Point<T> = [T; 3];

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision aliases of the generic types.
pub type Model = model::Model<f64>;
pub type NodeCloud = model::NodeCloud<f64>;
pub type Modification = model::Modification<f64>;
pub type Baseline = analysis::Baseline<f64>;
pub type Reanalysis = analysis::Reanalysis<f64>;
pub type FieldSolution = recovery::FieldSolution<f64>;
pub type CsrMatrix = sparse::CsrMatrix<f64>;
pub type CholeskyFactor = full_solver::CholeskyFactor<f64>;
