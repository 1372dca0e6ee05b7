//! Command implementations behind the `meshless` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use meshless::analysis::{
    full_reference, prepare, reanalyze, solve_prepared, Baseline, Diagnostics, Method, ReanalysisOptions, Timings,
};
use meshless::bench::{BenchPoint, BenchSpec};
use meshless::ca::DEFAULT_BASIS;
use meshless::demo;
use meshless::local_update::{InfluenceSummary, UpdateStrategy};
use meshless::model::{load_model, load_modification, save_model, Model, Modification};
use meshless::recovery::{error_metrics, ErrorMetrics, FieldSolution};
use meshless::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "meshless", version, about = "Moving-Kriging meshless elastostatics with fast reanalysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Full,
    Ca,
    Ifu,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Full => Method::Full,
            MethodArg::Ca => Method::Ca,
            MethodArg::Ifu => Method::Ifu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UpdateArg {
    Local,
    Global,
}

impl From<UpdateArg> for UpdateStrategy {
    fn from(u: UpdateArg) -> Self {
        match u {
            UpdateArg::Local => UpdateStrategy::Local,
            UpdateArg::Global => UpdateStrategy::Global,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoName {
    Patch,
    Cantilever,
    Plate,
    TaperedPlate,
    Bracket,
    LFrame,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a model and write displacements and recovered fields.
    Solve {
        model: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Solve a modified model by reanalysis from the initial solution.
    Reanalyze {
        model: PathBuf,
        modification: PathBuf,
        #[arg(long, value_enum, default_value = "ifu")]
        method: MethodArg,
        #[arg(long, default_value_t = DEFAULT_BASIS)]
        basis: usize,
        #[arg(long, value_enum, default_value = "local")]
        update: UpdateArg,
        /// Also run a from-scratch solution and report relative errors.
        #[arg(long)]
        compare: bool,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// CA errors against a full re-solve for a range of basis sizes.
    Sweep {
        model: PathBuf,
        modification: PathBuf,
        /// Inclusive range `A..B`.
        #[arg(long)]
        basis_range: String,
        #[arg(long, value_enum, default_value = "local")]
        update: UpdateArg,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Time full analysis, CA, IFU and both stiffness updates over model families.
    Bench {
        family: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write a bundled demo model (and its modification) as JSON.
    Demo {
        #[arg(value_enum)]
        name: DemoName,
        #[arg(short, long)]
        out: PathBuf,
    },
}

/// Summary of one command, written as `report.json` and echoed to stdout.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    pub dofs: usize,
    pub relative_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub errors: Option<ErrorMetrics>,
    pub timings: Timings,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub update_path: Option<UpdateStrategy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub update_fallback: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub influence: Option<InfluenceSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
    /// Displacement of every point-loaded node.
    pub loaded_displacements: Vec<LoadedDisplacement>,
    /// Largest displacement component in magnitude.
    pub peak_displacement: Option<LoadedDisplacement>,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LoadedDisplacement {
    pub node_id: u64,
    pub axis: usize,
    pub value: f64,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        other => Error::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(format!("{other:?}")),
        },
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

/// `node_id, axis, value` rows.
pub fn write_displacements(path: &Path, f: &FieldSolution<f64>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["node_id", "axis", "value"]).map_err(|e| csv_err(path, e))?;
    for (i, id) in f.node_ids.iter().enumerate() {
        for k in 0..f.dim {
            let v = f.displacement[i * f.dim + k];
            w.write_record([id.to_string(), k.to_string(), format!("{v:e}")])
                .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn component_names(dim: usize) -> &'static [&'static str] {
    if dim == 2 {
        &["xx", "yy", "xy"]
    } else {
        &["xx", "yy", "zz", "yz", "zx", "xy"]
    }
}

/// `node_id, eps_*, sig_*, vm_strain, vm_stress` rows.
pub fn write_fields(path: &Path, f: &FieldSolution<f64>) -> Result<()> {
    let mut w = writer(path)?;
    let names = component_names(f.dim);
    let mut header = vec!["node_id".to_string()];
    header.extend(names.iter().map(|c| format!("eps_{c}")));
    header.extend(names.iter().map(|c| format!("sig_{c}")));
    header.push("vm_strain".into());
    header.push("vm_stress".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, id) in f.node_ids.iter().enumerate() {
        let mut rec = vec![id.to_string()];
        rec.extend(f.strain.row(i).iter().map(|v| format!("{v:e}")));
        rec.extend(f.stress.row(i).iter().map(|v| format!("{v:e}")));
        rec.push(format!("{:e}", f.von_mises_strain[i]));
        rec.push(format!("{:e}", f.von_mises_stress[i]));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn loaded(model: &Model<f64>, f: &FieldSolution<f64>) -> Vec<LoadedDisplacement> {
    model
        .bc
        .point_loads
        .iter()
        .filter_map(|&(id, axis, _)| {
            let i = model.cloud.position(id)?;
            Some(LoadedDisplacement {
                node_id: id,
                axis,
                value: f.displacement[i * f.dim + axis],
            })
        })
        .collect()
}

fn peak(f: &FieldSolution<f64>) -> Option<LoadedDisplacement> {
    let (i, v) = f.displacement.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))?;
    Some(LoadedDisplacement {
        node_id: f.node_ids[i / f.dim],
        axis: i % f.dim,
        value: *v,
    })
}

fn write_outputs(dir: &Path, f: &FieldSolution<f64>, report: &mut RunReport) -> Result<()> {
    create_dir(dir)?;
    let d = dir.join("displacements.csv");
    write_displacements(&d, f)?;
    let fl = dir.join("fields.csv");
    write_fields(&fl, f)?;
    let r = dir.join("report.json");
    report.outputs = vec![d, fl, r.clone()];
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&r, json).map_err(|e| io_err(&r, e))
}

pub fn cmd_solve(model: &Path, out: &Path) -> Result<RunReport> {
    let model: Model<f64> = load_model(model)?;
    let base = Baseline::solve(model)?;
    let t = std::time::Instant::now();
    let fields = base.fields()?;
    let mut timings = base.timings;
    timings.recovery = t.elapsed().as_secs_f64();
    let mut report = RunReport {
        command: "solve".into(),
        method: Some(Method::Full),
        dofs: base.u.len(),
        relative_residual: base.relative_residual,
        errors: None,
        timings,
        update_path: None,
        update_fallback: None,
        influence: None,
        diagnostics: None,
        loaded_displacements: loaded(&base.model, &fields),
        peak_displacement: peak(&fields),
        outputs: Vec::new(),
    };
    write_outputs(out, &fields, &mut report)?;
    Ok(report)
}

fn load_pair(model: &Path, modification: &Path) -> Result<(Model<f64>, Modification<f64>)> {
    let m: Model<f64> = load_model(model)?;
    let dim = m.dim();
    Ok((m, load_modification(modification, dim)?))
}

pub fn cmd_reanalyze(
    model: &Path,
    modification: &Path,
    opts: &ReanalysisOptions,
    compare: bool,
    out: &Path,
) -> Result<RunReport> {
    let (m, modif) = load_pair(model, modification)?;
    let base = Baseline::solve(m)?;
    let r = reanalyze(&base, &modif, opts)?;
    let errors = if compare {
        let reference = full_reference(&base, &modif)?;
        Some(error_metrics(&r.fields, &reference.fields)?)
    } else {
        None
    };
    let mut report = RunReport {
        command: "reanalyze".into(),
        method: Some(r.method),
        dofs: r.u.len(),
        relative_residual: r.relative_residual,
        errors,
        timings: r.timings,
        update_path: Some(r.update_path),
        update_fallback: r.update_fallback.clone(),
        influence: r.influence.clone(),
        diagnostics: Some(r.diagnostics.clone()),
        loaded_displacements: loaded(&r.model, &r.fields),
        peak_displacement: peak(&r.fields),
        outputs: Vec::new(),
    };
    write_outputs(out, &r.fields, &mut report)?;
    Ok(report)
}

/// Parses an inclusive `A..B` range with `1 <= A <= B`.
pub fn parse_range(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Validation(format!("basis range `{s}` is not of the form A..B with 1 <= A <= B"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
    if a == 0 || a > b {
        return Err(bad());
    }
    Ok((a, b))
}

/// One row of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub s: usize,
    #[serde(rename = "E_u")]
    pub e_u: f64,
    #[serde(rename = "E_eps")]
    pub e_eps: f64,
    #[serde(rename = "E_sigma")]
    pub e_sigma: f64,
}

pub fn cmd_sweep(model: &Path, modification: &Path, range: &str, update: UpdateStrategy, out: &Path) -> Result<Vec<SweepRow>> {
    let (a, b) = parse_range(range)?;
    let (m, modif) = load_pair(model, modification)?;
    let base = Baseline::solve(m)?;
    let reference = full_reference(&base, &modif)?;
    let prep = prepare(&base, &modif, update)?;
    let mut rows = Vec::new();
    for s in a..=b {
        let r = solve_prepared(&prep, Method::Ca, s)?;
        let e = error_metrics(&r.fields, &reference.fields)?;
        rows.push(SweepRow {
            s,
            e_u: e.e_u,
            e_eps: e.e_eps,
            e_sigma: e.e_sigma,
        });
    }
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut w = writer(out)?;
    for r in &rows {
        w.serialize(r).map_err(|e| csv_err(out, e))?;
    }
    w.flush().map_err(|e| io_err(out, e))?;
    Ok(rows)
}

/// Runs every family; failing points are reported on stderr and skipped.
pub fn cmd_bench(family: &Path, out: &Path) -> Result<Vec<BenchPoint>> {
    let text = fs::read_to_string(family).map_err(|e| io_err(family, e))?;
    let spec = BenchSpec::from_json_str(&text)?;
    let mut points = Vec::new();
    for f in &spec.families {
        for (size, p) in f.sizes.iter().zip(meshless::bench::run_family(f)) {
            match p {
                Ok(p) => {
                    eprintln!(
                        "{} {:?}: {} dofs, full {:.3}s, ca {:.3}s, ifu {:.3}s, local {:.3}s, global {:.3}s",
                        f.name,
                        size,
                        p.dofs,
                        p.full_total(),
                        p.ca_total(),
                        p.ifu_total(),
                        p.local_update,
                        p.global_update
                    );
                    points.push(p);
                }
                Err(e) => eprintln!("{} {:?}: failed: {e}", f.name, size),
            }
        }
    }
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut w = writer(out)?;
    for p in &points {
        for r in p.rows() {
            w.serialize(r).map_err(|e| csv_err(out, e))?;
        }
    }
    w.flush().map_err(|e| io_err(out, e))?;
    Ok(points)
}

fn save_pair(dir: &Path, name: &str, m: &Model<f64>, modif: Option<&Modification<f64>>) -> Result<Vec<PathBuf>> {
    let mp = dir.join(format!("{name}.json"));
    save_model(m, &mp)?;
    let mut paths = vec![mp];
    if let Some(modif) = modif {
        let p = dir.join(format!("{name}_mod.json"));
        fs::write(&p, modif.to_json_string(m.dim())).map_err(|e| io_err(&p, e))?;
        paths.push(p);
    }
    Ok(paths)
}

/// Writes the requested bundled demos into `dir`.
pub fn cmd_demo(name: DemoName, dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let names = match name {
        DemoName::All => vec![
            DemoName::Patch,
            DemoName::Cantilever,
            DemoName::Plate,
            DemoName::TaperedPlate,
            DemoName::Bracket,
            DemoName::LFrame,
        ],
        n => vec![n],
    };
    let mut out = Vec::new();
    for n in names {
        let paths = match n {
            DemoName::Patch => save_pair(dir, "patch", &demo::unit_patch(3, 1.0, 1.0)?, None)?,
            DemoName::Cantilever => save_pair(dir, "cantilever", &demo::cantilever(demo::Beam::default(), 33, 9)?, None)?,
            DemoName::Plate => {
                let (m, d) = demo::plate_with_holes(2.0)?;
                save_pair(dir, "plate", &m, Some(&d))?
            }
            DemoName::TaperedPlate => {
                let (m, d) = demo::tapered_plate(2.0)?;
                save_pair(dir, "tapered_plate", &m, Some(&d))?
            }
            DemoName::Bracket => {
                let (m, d) = demo::support_bracket(2.0)?;
                save_pair(dir, "bracket", &m, Some(&d))?
            }
            DemoName::LFrame => {
                let (m, d) = demo::l_frame(1.0)?;
                save_pair(dir, "l_frame", &m, Some(&d))?
            }
            DemoName::All => unreachable!(),
        };
        out.extend(paths);
    }
    Ok(out)
}

/// Caps the global worker pool from `MESHLESS_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("MESHLESS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Validation(format!("MESHLESS_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Validation(format!("thread pool: {e}")))
}

/// Prints to stdout, ignoring a closed pipe.
fn say(s: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{s}");
}

fn print_report(r: &RunReport) {
    say(&serde_json::to_string_pretty(r).expect("report serializes"));
}

/// Executes a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Solve { model, out } => cmd_solve(&model, &out).map(|r| {
            print_report(&r);
            eprintln!("relative residual {:e}", r.relative_residual);
            if let Some(p) = &r.peak_displacement {
                eprintln!("peak displacement {:e} at node {} axis {}", p.value, p.node_id, p.axis);
            }
        }),
        Command::Reanalyze {
            model,
            modification,
            method,
            basis,
            update,
            compare,
            out,
        } => {
            let opts = ReanalysisOptions {
                method: method.into(),
                basis,
                update: update.into(),
            };
            cmd_reanalyze(&model, &modification, &opts, compare, &out).map(|r| {
                print_report(&r);
                if let Some(why) = &r.update_fallback {
                    eprintln!("local update not used: {why}");
                }
            })
        }
        Command::Sweep {
            model,
            modification,
            basis_range,
            update,
            out,
        } => cmd_sweep(&model, &modification, &basis_range, update.into(), &out).map(|rows| {
            for r in rows {
                say(&format!("s={:>2}  E_u={:.6}%  E_eps={:.6}%  E_sigma={:.6}%", r.s, r.e_u, r.e_eps, r.e_sigma));
            }
        }),
        Command::Bench { family, out } => cmd_bench(&family, &out).map(|p| say(&format!("{} bench points written to {}", p.len(), out.display()))),
        Command::Demo { name, out } => cmd_demo(name, &out).map(|paths| {
            for p in paths {
                say(&p.display().to_string());
            }
        }),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
