//! Timing benchmarks over families of plate models of increasing size.
//!
//! Each point is timed with one untimed warmup run followed by `repeats`
//! timed runs; the median of every phase is reported.

use serde::{Deserialize, Serialize};

use crate::analysis::{full_reference, prepare, solve_prepared, Baseline, Method};
use crate::ca::DEFAULT_BASIS;
use crate::demo::{bench_plate, BenchKind};
use crate::error::{Error, Result};
use crate::local_update::UpdateStrategy;
use crate::recovery::error_metrics;

fn default_repeats() -> usize {
    3
}

fn default_true() -> bool {
    true
}

fn default_basis() -> usize {
    DEFAULT_BASIS
}

/// One benchmark family: a modification kind applied to plates of the
/// listed `[nx, ny]` cell counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchFamily {
    pub name: String,
    pub kind: BenchKind,
    pub sizes: Vec<[usize; 2]>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_true")]
    pub warmup: bool,
    #[serde(default = "default_basis")]
    pub basis: usize,
}

/// Contents of a family file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub families: Vec<BenchFamily>,
}

impl BenchSpec {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: BenchSpec = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        for f in &spec.families {
            if f.repeats == 0 {
                return Err(Error::Validation(format!("family {}: repeats must be positive", f.name)));
            }
            if f.sizes.iter().any(|s| s[0] < 2 || s[1] < 2) {
                return Err(Error::Validation(format!("family {}: sizes need at least 2 cells per axis", f.name)));
            }
        }
        Ok(spec)
    }
}

/// Median timings of one family point, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub family: String,
    pub kind: BenchKind,
    pub size: [usize; 2],
    /// DOFs of the initial model.
    pub dofs: usize,
    /// Fraction of the initial nodes removed.
    pub modified_fraction: f64,
    pub full_stiffness: f64,
    pub full_solve: f64,
    pub local_update: f64,
    pub global_update: f64,
    pub ca_solve: f64,
    pub ifu_solve: f64,
    /// Displacement errors in percent against the full solution.
    pub e_u_ca: f64,
    pub e_u_ifu: f64,
}

impl BenchPoint {
    /// Full analysis: global assembly plus factorization and solution.
    pub fn full_total(&self) -> f64 {
        self.full_stiffness + self.full_solve
    }

    /// Local stiffness update plus the CA solution.
    pub fn ca_total(&self) -> f64 {
        self.local_update + self.ca_solve
    }

    /// Local stiffness update plus the IFU solution.
    pub fn ifu_total(&self) -> f64 {
        self.local_update + self.ifu_solve
    }

    /// Flat rows `(dofs, method, phase, seconds, E_u)`.
    pub fn rows(&self) -> Vec<BenchRow> {
        let row = |method: &str, phase: &str, seconds: f64, e_u: Option<f64>| BenchRow {
            family: self.family.clone(),
            dofs: self.dofs,
            method: method.to_string(),
            phase: phase.to_string(),
            seconds,
            e_u,
        };
        vec![
            row("full", "stiffness", self.full_stiffness, None),
            row("full", "solve", self.full_solve, None),
            row("full", "total", self.full_total(), Some(0.0)),
            row("local_update", "stiffness", self.local_update, None),
            row("global_update", "stiffness", self.global_update, None),
            row("ca", "solve", self.ca_solve, None),
            row("ca", "total", self.ca_total(), Some(self.e_u_ca)),
            row("ifu", "solve", self.ifu_solve, None),
            row("ifu", "total", self.ifu_total(), Some(self.e_u_ifu)),
        ]
    }
}

/// One CSV record of the bench output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub family: String,
    pub dofs: usize,
    pub method: String,
    pub phase: String,
    pub seconds: f64,
    #[serde(rename = "E_u")]
    pub e_u: Option<f64>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Default)]
struct Samples {
    full_stiffness: Vec<f64>,
    full_solve: Vec<f64>,
    local: Vec<f64>,
    global: Vec<f64>,
    ca: Vec<f64>,
    ifu: Vec<f64>,
    e_u_ca: f64,
    e_u_ifu: f64,
}

/// Times one plate of `size` cells with a modification of `kind`.
pub fn bench_point(family: &str, kind: BenchKind, size: [usize; 2], repeats: usize, warmup: bool, basis: usize) -> Result<BenchPoint> {
    let (model, modification) = bench_plate(size[0], size[1], kind)?;
    let nodes = model.cloud.len();
    let baseline = Baseline::solve(model)?;
    let dofs = baseline.u.len();
    let mut s = Samples::default();
    let runs = repeats + usize::from(warmup);
    for run in 0..runs {
        let timed = !warmup || run > 0;
        let reference = full_reference(&baseline, &modification)?;
        let global = prepare(&baseline, &modification, UpdateStrategy::Global)?;
        let local = prepare(&baseline, &modification, UpdateStrategy::Local)?;
        let ca = solve_prepared(&local, Method::Ca, basis)?;
        let ifu = solve_prepared(&local, Method::Ifu, basis)?;
        if !timed {
            continue;
        }
        s.full_stiffness.push(reference.timings.stiffness);
        s.full_solve.push(reference.timings.solve);
        s.global.push(global.update_seconds);
        s.local.push(local.update_seconds);
        s.ca.push(ca.timings.solve);
        s.ifu.push(ifu.timings.solve);
        s.e_u_ca = error_metrics(&ca.fields, &reference.fields)?.e_u;
        s.e_u_ifu = error_metrics(&ifu.fields, &reference.fields)?.e_u;
    }
    Ok(BenchPoint {
        family: family.to_string(),
        kind,
        size,
        dofs,
        modified_fraction: modification.removed.len() as f64 / nodes as f64,
        full_stiffness: median(s.full_stiffness),
        full_solve: median(s.full_solve),
        local_update: median(s.local),
        global_update: median(s.global),
        ca_solve: median(s.ca),
        ifu_solve: median(s.ifu),
        e_u_ca: s.e_u_ca,
        e_u_ifu: s.e_u_ifu,
    })
}

/// Runs every point of a family; a failing point is returned as an error in
/// its slot and does not stop the others.
pub fn run_family(f: &BenchFamily) -> Vec<Result<BenchPoint>> {
    f.sizes
        .iter()
        .map(|&size| bench_point(&f.name, f.kind, size, f.repeats, f.warmup, f.basis))
        .collect()
}
