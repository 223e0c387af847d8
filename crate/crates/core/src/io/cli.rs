//! `chemoflow` command-line driver.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::io::check::{run_suite, CheckOutcome};
use crate::io::config::{parse_config, InitialKind, Preset, RunConfig};
use crate::io::output::{write_csv_tables, write_vtk, DiagnosticsWriter, FieldSnapshot};
use crate::manufactured::{
    convergence_study, observed_orders, ErrorReport, ExactSolution, StudyConfig,
};
use crate::mesh::build_rect_mesh;
use crate::scheme::{Forcing, InitMode, Scheme};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "chemoflow",
    version,
    about = "Chemotaxis-Navier-Stokes finite-element solver"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write snapshots and diagnostics.
    Run(CommonArgs),
    /// Run the manufactured-solution convergence study and write CSV tables.
    Converge(CommonArgs),
    /// Run the invariant suite.
    Check,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// test1, test2 or custom.
    #[arg(long)]
    pub preset: Option<Preset>,
    /// TOML configuration file; command-line flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `run`: cells per unit length (or `kx,ky`). `converge`: comma-separated mesh sizes.
    #[arg(long)]
    pub meshes: Option<String>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub tfinal: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// elliptic or nodal.
    #[arg(long)]
    pub init_mode: Option<InitMode>,
    #[arg(long)]
    pub quadrature_degree: Option<usize>,
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::config("meshes", format!("`{p}` is not a mesh size")))
        })
        .collect()
}

/// Resolve the configuration from a file or preset plus flag overrides.
pub fn resolve_config(args: &CommonArgs, default: Preset) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut cfg = parse_config(&text)?;
            if let Some(p) = args.preset {
                if p != cfg.preset {
                    return Err(Error::config(
                        "preset",
                        "--preset conflicts with the configuration file",
                    ));
                }
            }
            cfg.output.dir = args.out.clone().unwrap_or(cfg.output.dir);
            cfg
        }
        None => RunConfig::preset(args.preset.unwrap_or(default)),
    };
    if let Some(dt) = args.dt {
        cfg.time.dt = dt;
    }
    if let Some(t) = args.tfinal {
        cfg.time.t_final = t;
        // snapshots beyond the new final time are dropped; keep the last level
        cfg.output
            .snapshot_times
            .retain(|&s| s <= t * (1.0 + 1e-12));
        if !cfg.output.snapshot_times.contains(&t) {
            cfg.output.snapshot_times.push(t);
        }
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    if let Some(m) = args.init_mode {
        cfg.init_mode = m;
    }
    if let Some(q) = args.quadrature_degree {
        cfg.quadrature_degree = q;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub n_steps: usize,
    pub t_final: f64,
    pub initial_mass: f64,
    pub max_mass_drift: f64,
    pub max_div_residual: f64,
    pub max_relative_residual: f64,
    pub all_finite: bool,
    /// Soft diagnostic: `max c_h` never increases after the first step.
    pub c_max_nonincreasing: bool,
    pub snapshots: Vec<PathBuf>,
}

/// Execute a run configuration, writing outputs below `cfg.output.dir`.
pub fn execute_run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let grid = cfg.time_grid()?;
    let snaps = cfg.snapshot_indices()?;
    let mesh = build_rect_mesh(cfg.domain.lx, cfg.domain.ly, cfg.mesh.kx, cfg.mesh.ky)?;
    let scheme = Scheme::with_quadrature(&mesh, cfg.params, grid.dt, cfg.quadrature_degree)?;
    let data = cfg.initial_data()?;
    let exact = ExactSolution::new(cfg.params);
    let forcing: Option<&dyn Forcing> = match cfg.initial.kind {
        InitialKind::Test2 => Some(&exact),
        _ => None,
    };
    let init = scheme.init_state(data.as_ref(), cfg.init_mode)?;
    let mass0 = scheme.mass_of_eta(&init);
    let alpha0 = init.alpha;
    let area = mesh.domain_area();
    let dir = &cfg.output.dir;
    let mut writer = if cfg.output.diagnostics {
        Some(DiagnosticsWriter::create(dir)?)
    } else {
        None
    };
    let mut summary = RunSummary {
        n_steps: grid.n_steps,
        t_final: grid.t_final(),
        initial_mass: mass0,
        max_mass_drift: 0.0,
        max_div_residual: 0.0,
        max_relative_residual: 0.0,
        all_finite: true,
        c_max_nonincreasing: true,
        snapshots: Vec::new(),
    };
    let mut prev_cmax = f64::INFINITY;
    scheme.run(init, grid.n_steps, forcing, |s, d| {
        let budget = mass0 + (s.alpha - alpha0) * area;
        let drift = (d.mass - budget).abs() / mass0.abs().max(f64::MIN_POSITIVE);
        summary.max_mass_drift = summary.max_mass_drift.max(drift);
        summary.max_div_residual = summary.max_div_residual.max(d.div_residual);
        if let Some(r) = &d.reports {
            summary.max_relative_residual =
                summary.max_relative_residual.max(r.max_relative_residual());
        }
        if s.m >= 1 {
            if d.c.max > prev_cmax {
                summary.c_max_nonincreasing = false;
            }
            prev_cmax = d.c.max;
        }
        if let Some(w) = writer.as_mut() {
            w.record(d, drift)?;
        }
        let snap = FieldSnapshot::from_state(&mesh, scheme.layouts(), s);
        summary.all_finite &= snap.is_finite();
        if cfg.output.vtk && snaps.contains(&s.m) {
            let path = dir.join(format!("snapshot_m{:06}.vtk", s.m));
            write_vtk(&snap, &path)?;
            summary.snapshots.push(path);
        }
        Ok(())
    })?;
    if !summary.all_finite {
        return Err(Error::Solver {
            what: "run".into(),
            detail: "non-finite field values".into(),
        });
    }
    Ok(summary)
}

/// Run the manufactured study and write one CSV table per variable.
pub fn execute_converge(meshes: &[usize], study: &StudyConfig, out: &Path) -> Result<ErrorReport> {
    let (report, _) = convergence_study(meshes, study)?;
    write_csv_tables(&report, out)?;
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let path = out.join("report.json");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

fn print_report(report: &ErrorReport) {
    println!(
        "dt = {}, T = {}, init mode = {}",
        report.dt, report.t_final, report.init_mode
    );
    for v in &report.variables {
        let o = observed_orders(&v.linf_l2, &report.h);
        let o1 = observed_orders(&v.l2_h1, &report.h);
        println!("{}:", v.variable.name());
        for (i, k) in report.mesh_sizes.iter().enumerate() {
            let fo = |x: &[Option<f64>]| {
                if i == 0 {
                    "      ".to_string()
                } else {
                    x[i - 1].map(|v| format!("{v:.4}")).unwrap_or_default()
                }
            };
            let mut line = format!(
                "  k={k:<3} linf(L2) {:.4e} ({})  l2(H1) {:.4e} ({})",
                v.linf_l2[i],
                fo(&o),
                v.l2_h1[i],
                fo(&o1)
            );
            if let Some(e) = &v.linf_h1 {
                let oi = observed_orders(e, &report.h);
                line.push_str(&format!("  linf(H1) {:.4e} ({})", e[i], fo(&oi)));
            }
            println!("{line}");
        }
    }
}

#[derive(Serialize)]
struct Failure<'a> {
    status: &'a str,
    command: &'a str,
    error_kind: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    failed_checks: Vec<CheckOutcome>,
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidArgument(_) => "invalid_argument",
        Error::DegenerateElement { .. } => "degenerate_element",
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::IndexOutOfRange { .. } => "index_out_of_range",
        Error::Singular { .. } => "singular",
        Error::Solver { .. } => "solver",
        Error::Config { .. } => "config",
        Error::GridMismatch(_) => "grid_mismatch",
        Error::Io { .. } => "io",
    }
}

fn report_failure(command: &str, kind: &str, message: String, failed: Vec<CheckOutcome>) -> i32 {
    let f = Failure {
        status: "failed",
        command,
        error_kind: kind,
        message,
        failed_checks: failed,
    };
    eprintln!(
        "{}",
        serde_json::to_string(&f).unwrap_or_else(|_| "{\"status\":\"failed\"}".into())
    );
    1
}

fn cmd_run(args: &CommonArgs) -> Result<()> {
    let mut cfg = resolve_config(args, Preset::Test1)?;
    if let Some(m) = &args.meshes {
        let v = parse_list(m)?;
        match v.as_slice() {
            [k] => {
                cfg.mesh.kx = ((*k as f64) * cfg.domain.lx).round().max(1.0) as usize;
                cfg.mesh.ky = ((*k as f64) * cfg.domain.ly).round().max(1.0) as usize;
            }
            [kx, ky] => {
                cfg.mesh.kx = *kx;
                cfg.mesh.ky = *ky;
            }
            _ => return Err(Error::config("meshes", "`run` takes `k` or `kx,ky`")),
        }
        cfg.validate()?;
    }
    let s = execute_run(&cfg)?;
    println!(
        "run: {} steps to t = {}, mesh {}x{}, init mode {}",
        s.n_steps, s.t_final, cfg.mesh.kx, cfg.mesh.ky, cfg.init_mode
    );
    println!("  max relative mass drift  {:e}", s.max_mass_drift);
    println!("  max divergence residual  {:e}", s.max_div_residual);
    println!("  max solve residual       {:e}", s.max_relative_residual);
    println!("  max c non-increasing     {}", s.c_max_nonincreasing);
    for p in &s.snapshots {
        println!("  wrote {}", p.display());
    }
    Ok(())
}

fn cmd_converge(args: &CommonArgs) -> Result<()> {
    let cfg = resolve_config(args, Preset::Test2)?;
    if cfg.initial.kind != InitialKind::Test2 {
        return Err(Error::config(
            "preset",
            "the convergence study needs the manufactured (test2) setup",
        ));
    }
    let meshes = parse_list(args.meshes.as_deref().unwrap_or("10,20,30,40,50"))?;
    let study = StudyConfig {
        dt: cfg.time.dt,
        t_final: cfg.time.t_final,
        init_mode: cfg.init_mode,
        quadrature_degree: cfg.quadrature_degree,
    };
    let report = execute_converge(&meshes, &study, &cfg.output.dir)?;
    print_report(&report);
    println!("wrote tables to {}", cfg.output.dir.display());
    Ok(())
}

/// Entry point; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (name, result) = match &cli.command {
        Command::Run(a) => ("run", cmd_run(a)),
        Command::Converge(a) => ("converge", cmd_converge(a)),
        Command::Check => {
            return match run_suite() {
                Ok(outcomes) => {
                    for c in &outcomes {
                        println!(
                            "{} {}: {:e} (tolerance {:e})",
                            if c.passed { "PASS" } else { "FAIL" },
                            c.name,
                            c.value,
                            c.tolerance
                        );
                    }
                    let failed: Vec<CheckOutcome> =
                        outcomes.into_iter().filter(|c| !c.passed).collect();
                    if failed.is_empty() {
                        0
                    } else {
                        let msg = format!("{} check(s) failed", failed.len());
                        report_failure("check", "invariant", msg, failed)
                    }
                }
                Err(e) => report_failure("check", error_kind(&e), e.to_string(), Vec::new()),
            };
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => report_failure(name, error_kind(&e), e.to_string(), Vec::new()),
    }
}
