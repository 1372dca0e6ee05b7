//! End-to-end workflows: baseline solve, full re-solve of a modified model,
//! and CA or IFU reanalysis from the baseline.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::assembly::{Config, StiffnessSystem};
use crate::ca::{ca_reanalyze, DEFAULT_BASIS};
use crate::error::{Error, Result};
use crate::full_solver::{factorize_with, relative_residual, CholeskyFactor};
use crate::ifu::ifu_reanalyze;
use crate::local_update::{update_stiffness, InfluenceSummary, UpdateStrategy};
use crate::model::{DofMap, Model, Modification};
use crate::ordering::Ordering;
use crate::recovery::{recover_fields, FieldSolution};
use crate::scalar::Real;
use crate::sparse::CsrMatrix;

/// Solution procedure for a modified model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Factorize and solve the modified system from scratch.
    Full,
    /// Combined Approximations.
    Ca,
    /// Indirect Factorization Updating.
    Ifu,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Full => "full",
            Method::Ca => "ca",
            Method::Ifu => "ifu",
        })
    }
}

/// Wall-clock seconds per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    /// Assembly, or stiffness update for a reanalysis.
    pub stiffness: f64,
    /// Factorization and solution, or the reanalysis proper.
    pub solve: f64,
    /// Strain and stress recovery.
    pub recovery: f64,
}

/// Solved initial model with the artifacts reanalysis starts from.
#[derive(Debug, Clone)]
pub struct Baseline<T: Real> {
    pub model: Model<T>,
    pub system: StiffnessSystem<T>,
    pub factor: CholeskyFactor<T>,
    pub u: DVector<T>,
    pub relative_residual: f64,
    pub timings: Timings,
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

impl<T: Real> Baseline<T> {
    /// Assembles, factorizes with reverse Cuthill–McKee and solves.
    pub fn solve(model: Model<T>) -> Result<Self> {
        Self::solve_with(model, &Ordering::Rcm)
    }

    pub fn solve_with(model: Model<T>, ordering: &Ordering) -> Result<Self> {
        let t = Instant::now();
        let system = StiffnessSystem::single(&model)?;
        let stiffness = secs(t);
        let t = Instant::now();
        let factor = factorize_with(&system.k, ordering)?;
        let u = factor.solve(&system.f);
        let solve = secs(t);
        let relative_residual = relative_residual(&system.k, &u, &system.f);
        Ok(Baseline {
            model,
            system,
            factor,
            u,
            relative_residual,
            timings: Timings {
                stiffness,
                solve,
                recovery: 0.0,
            },
        })
    }

    /// Recovered fields of the baseline.
    pub fn fields(&self) -> Result<FieldSolution<T>> {
        recover_fields(&self.u, &self.model, &self.system.dof_map)
    }

    /// Baseline system, factor and solution on a union DOF map.
    pub fn embed(&self, map: &DofMap) -> Result<(StiffnessSystem<T>, CholeskyFactor<T>, DVector<T>)> {
        if map == &self.system.dof_map {
            return Ok((self.system.clone(), self.factor.clone(), self.u.clone()));
        }
        let emb = self.system.dof_embedding(map);
        let system = self.system.embed(&self.model, map)?;
        let factor = self.factor.embed(map.num_dofs(), &emb);
        let mut u = DVector::zeros(map.num_dofs());
        for (old, &new) in emb.iter().enumerate() {
            u[new] = self.u[old];
        }
        Ok((system, factor, u))
    }
}

/// Reanalysis settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReanalysisOptions {
    pub method: Method,
    /// Number of CA basis vectors.
    pub basis: usize,
    pub update: UpdateStrategy,
}

impl Default for ReanalysisOptions {
    fn default() -> Self {
        ReanalysisOptions {
            method: Method::Ifu,
            basis: DEFAULT_BASIS,
            update: UpdateStrategy::Local,
        }
    }
}

/// Method-specific diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Diagnostics {
    Full,
    Ca { basis: usize, rank: usize },
    Ifu { unbalanced: usize, fundamental_residual: f64, refactorized: bool },
}

/// Solution of a modified model.
#[derive(Debug, Clone)]
pub struct Reanalysis<T: Real> {
    pub method: Method,
    pub model: Model<T>,
    pub map: DofMap,
    /// Displacements on the union DOF space.
    pub u: DVector<T>,
    pub fields: FieldSolution<T>,
    /// Modified constrained stiffness and load.
    pub k_m: CsrMatrix<T>,
    pub f_m: DVector<T>,
    pub relative_residual: f64,
    pub update_path: UpdateStrategy,
    pub update_fallback: Option<String>,
    pub influence: Option<InfluenceSummary>,
    pub diagnostics: Diagnostics,
    pub timings: Timings,
}

/// Prepared modified system, shared by every method.
#[derive(Debug, Clone)]
pub struct ModifiedSystem<T: Real> {
    pub model: Model<T>,
    pub map: DofMap,
    /// Baseline on the union map.
    pub base: StiffnessSystem<T>,
    pub base_factor: CholeskyFactor<T>,
    pub u_star: DVector<T>,
    pub system: StiffnessSystem<T>,
    /// `K_m − K*`.
    pub delta: CsrMatrix<T>,
    pub update_path: UpdateStrategy,
    pub update_fallback: Option<String>,
    pub influence: Option<InfluenceSummary>,
    /// Seconds spent updating the stiffness.
    pub update_seconds: f64,
}

/// Builds the modified model and its stiffness by the requested strategy.
pub fn prepare<T: Real>(
    baseline: &Baseline<T>,
    modification: &Modification<T>,
    update: UpdateStrategy,
) -> Result<ModifiedSystem<T>> {
    let (model, map) = baseline.model.apply_modification(modification)?;
    let (base, base_factor, u_star) = baseline.embed(&map)?;
    let t = Instant::now();
    let out = update_stiffness(&baseline.model, &model, modification, &base, update)?;
    let update_seconds = secs(t);
    Ok(ModifiedSystem {
        model,
        map,
        base,
        base_factor,
        u_star,
        system: out.system,
        delta: out.delta,
        update_path: out.path,
        update_fallback: out.fallback,
        influence: out.influence,
        update_seconds,
    })
}

fn structural(e: Error) -> Error {
    match e {
        Error::RigidBody { .. } => Error::Structural(e.to_string()),
        other => other,
    }
}

/// Solves a prepared modified system with the given method; the stiffness
/// timing is taken from the preparation.
pub fn solve_prepared<T: Real>(prep: &ModifiedSystem<T>, method: Method, basis: usize) -> Result<Reanalysis<T>> {
    let k_m = &prep.system.k;
    let f_m = &prep.system.f;
    let t = Instant::now();
    let (u, diagnostics) = match method {
        Method::Full => {
            let fac = factorize_with(k_m, &Ordering::Rcm).map_err(structural)?;
            (fac.solve(f_m), Diagnostics::Full)
        }
        Method::Ca => {
            let sol = ca_reanalyze(&prep.base_factor, &prep.delta, k_m, f_m, basis)?;
            let d = Diagnostics::Ca {
                basis,
                rank: sol.reduced.rank,
            };
            (sol.u, d)
        }
        Method::Ifu => {
            let sol = ifu_reanalyze(&prep.base_factor, &prep.base.k, &prep.delta, k_m, f_m, &prep.u_star)?;
            let d = Diagnostics::Ifu {
                unbalanced: sol.s_d.len(),
                fundamental_residual: sol.fundamental_residual,
                refactorized: sol.refactorized,
            };
            (sol.u, d)
        }
    };
    let solve = secs(t);
    let t = Instant::now();
    let fields = recover_fields(&u, &prep.model, &prep.map)?;
    let recovery = secs(t);
    Ok(Reanalysis {
        method,
        model: prep.model.clone(),
        map: prep.map.clone(),
        relative_residual: relative_residual(k_m, &u, f_m),
        u,
        fields,
        k_m: k_m.clone(),
        f_m: f_m.clone(),
        update_path: prep.update_path,
        update_fallback: prep.update_fallback.clone(),
        influence: prep.influence.clone(),
        diagnostics,
        timings: Timings {
            stiffness: prep.update_seconds,
            solve,
            recovery,
        },
    })
}

/// Reanalysis of `baseline` under `modification`.
pub fn reanalyze<T: Real>(
    baseline: &Baseline<T>,
    modification: &Modification<T>,
    opts: &ReanalysisOptions,
) -> Result<Reanalysis<T>> {
    let prep = prepare(baseline, modification, opts.update)?;
    solve_prepared(&prep, opts.method, opts.basis)
}

/// From-scratch solution of the modified model (global assembly, fresh
/// factorization), used as the reference for error measures.
pub fn full_reference<T: Real>(baseline: &Baseline<T>, modification: &Modification<T>) -> Result<Reanalysis<T>> {
    let (model, map) = baseline.model.apply_modification(modification)?;
    let t = Instant::now();
    let system = StiffnessSystem::assemble(&model, &map, Config::Modified)?;
    let stiffness = secs(t);
    let t = Instant::now();
    let fac = factorize_with(&system.k, &Ordering::Rcm).map_err(structural)?;
    let u = fac.solve(&system.f);
    let solve = secs(t);
    let t = Instant::now();
    let fields = recover_fields(&u, &model, &map)?;
    let recovery = secs(t);
    Ok(Reanalysis {
        method: Method::Full,
        relative_residual: relative_residual(&system.k, &u, &system.f),
        model,
        map,
        u,
        fields,
        k_m: system.k,
        f_m: system.f,
        update_path: UpdateStrategy::Global,
        update_fallback: None,
        influence: None,
        diagnostics: Diagnostics::Full,
        timings: Timings {
            stiffness,
            solve,
            recovery,
        },
    })
}
