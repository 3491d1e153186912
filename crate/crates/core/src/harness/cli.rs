//! Command-line subcommands.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::conditions::{audit_growth_with, GrowthParams};
use crate::control::{distance, ControlField};
use crate::error::{Error, Result};
use crate::fem::Norm;
use crate::harness::config::{Check, OutputDir, RunConfig, Summary};
use crate::harness::eoc::{eoc_study, project_exact, Scheme};
use crate::harness::oracle::{convex_instance, gap_at, grid_gap_bound, oracle_global_min};
use crate::mesh::Mesh;
use crate::optimizer::{frank_wolfe, variational_fixed_point, SolveConfig};
use crate::perturbation::stability_sweep;
use crate::semilinear::Discretization;

#[derive(Debug, Parser)]
#[command(
    name = "bangbang",
    version,
    about = "Discretization and stability studies for bang-bang control of semilinear elliptic equations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides output.dir from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the discrete problem on mesh.n.
    Solve(Common),
    /// Convergence study over eoc.levels.
    Eoc(Common),
    /// Perturbation sweep around the discrete solution.
    Stability(Common),
    /// Sample-based growth-condition audit at the discrete solution.
    Audit(Common),
    /// Compare the optimizer against exhaustive search on a tiny mesh.
    OracleCompare {
        #[command(flatten)]
        common: Common,
        /// Number of cells (2 or 4); overrides oracle.cells.
        #[arg(long)]
        cells: Option<usize>,
    },
    /// Write state, adjoint, switching function and control as VTK.
    ExportFields(Common),
}

fn load(common: &Common) -> Result<(RunConfig, OutputDir)> {
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::parse("")?,
    };
    let dir = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let out = OutputDir::create(&dir)?;
    Ok((cfg, out))
}

/// Runs a command and writes summary.json; returns the summary.
pub fn run(cli: &Cli) -> Result<Summary> {
    let (name, common) = match &cli.command {
        Command::Solve(c) => ("solve", c),
        Command::Eoc(c) => ("eoc", c),
        Command::Stability(c) => ("stability", c),
        Command::Audit(c) => ("audit", c),
        Command::OracleCompare { common, .. } => ("oracle-compare", common),
        Command::ExportFields(c) => ("export-fields", c),
    };
    let (mut cfg, out) = load(common)?;
    if let Command::OracleCompare { cells: Some(c), .. } = &cli.command {
        cfg.oracle.cells = *c;
    }
    let summary = match &cli.command {
        Command::Solve(_) => solve(&cfg, &out)?,
        Command::Eoc(_) => eoc(&cfg, &out)?,
        Command::Stability(_) => stability(&cfg, &out)?,
        Command::Audit(_) => audit(&cfg, &out)?,
        Command::OracleCompare { .. } => oracle_compare(&cfg, &out)?,
        Command::ExportFields(_) => export_fields(&cfg, &out)?,
    };
    debug_assert_eq!(summary.command, name);
    out.write_json("summary.json", &summary)?;
    Ok(summary)
}

fn mesh_of(cfg: &RunConfig) -> Result<Arc<Mesh>> {
    Ok(Arc::new(Mesh::uniform(cfg.mesh.n)?))
}

fn gap_checks(cfg: &RunConfig, gap: f64) -> Vec<Check> {
    cfg.thresholds
        .max_gap
        .map(|t| Check::at_most("gap", gap, t))
        .into_iter()
        .collect()
}

fn solve(cfg: &RunConfig, out: &OutputDir) -> Result<Summary> {
    let mp = cfg.manufactured()?;
    let mesh = mesh_of(cfg)?;
    let disc = Discretization::new(&mp.problem, mesh.clone())?;
    let reference = project_exact(&mp, &disc)?;
    let (report, u) = match cfg.eoc.scheme {
        Scheme::Full => {
            let sol = frank_wolfe(&disc, disc.midpoint_control(), &cfg.solver)?;
            out.write_with("control.csv", |b| sol.u.write_csv(b))?;
            (sol.report, sol.u)
        }
        Scheme::Variational => {
            let sol = variational_fixed_point(&disc, &cfg.solver)?;
            let u = sol.u.to_cell_average()?;
            out.write_with("control.csv", |b| u.write_csv(b))?;
            (sol.report, u)
        }
    };
    out.write_with("report.json", |b| {
        b.extend(report.to_json()?.bytes());
        Ok(())
    })?;
    let values = json!({
        "j": report.final_j(),
        "gap": report.final_gap,
        "iterations": report.iterations,
        "converged": report.converged,
        "distance_to_projection_l1": distance(&u, &reference, Norm::L1)?,
    });
    Ok(Summary::new(
        "solve",
        cfg,
        gap_checks(cfg, report.final_gap),
        values,
    ))
}

fn eoc(cfg: &RunConfig, out: &OutputDir) -> Result<Summary> {
    let mp = cfg.manufactured()?;
    let table = eoc_study(
        &mp,
        cfg.eoc.scheme,
        &cfg.eoc.levels,
        &cfg.solver,
        cfg.eoc.c_gap,
    )?;
    let file = match cfg.eoc.scheme {
        Scheme::Full => "eoc_full.csv",
        Scheme::Variational => "eoc_variational.csv",
    };
    out.write_with(file, |b| table.write_csv(b))?;
    out.write_json("eoc.json", &table)?;
    let t = &cfg.thresholds;
    let k = t.last_pairs.unwrap_or(3);
    let mut checks = Vec::new();
    let oc = table.min_control_order_last(k);
    if let Some(v) = t.min_control_order {
        checks.push(Check::at_least("control_order", oc, v));
    }
    if let Some(v) = t.max_control_order {
        checks.push(Check::at_most("control_order", oc, v));
    }
    if let Some(v) = t.min_state_order {
        checks.push(Check::at_least(
            "state_order",
            table.min_state_order_last(k),
            v,
        ));
    }
    if let Some(v) = t.min_log_slope {
        checks.push(Check::at_least("log_slope", table.slope_control_log, v));
    }
    let values = json!({
        "slope_control": table.slope_control,
        "slope_state": table.slope_state,
        "slope_control_log": table.slope_control_log,
        "min_control_order_last": oc,
    });
    Ok(Summary::new("eoc", cfg, checks, values))
}

fn stability(cfg: &RunConfig, out: &OutputDir) -> Result<Summary> {
    let mp = cfg.manufactured()?;
    let mesh = mesh_of(cfg)?;
    let family = cfg.stability.family.unit();
    let scales = cfg.stability.scales();
    if let Some(&d) = scales
        .iter()
        .find(|&&d| family.scaled(d).size() > cfg.stability.bound)
    {
        return Err(Error::PerturbationTooLarge {
            size: family.scaled(d).size(),
            bound: cfg.stability.bound,
        });
    }
    let mut table = stability_sweep(&mp.problem, &mesh, &family, &scales, &cfg.solver, None)?;
    table
        .metadata
        .insert("config_hash".into(), cfg.hash.clone());
    table
        .metadata
        .insert("family".into(), format!("{:?}", cfg.stability.family));
    out.write_with("stability.csv", |b| table.write_csv(b))?;
    out.write_json("stability.json", &table)?;
    let slope = table.slope.unwrap_or(f64::NAN);
    let checks = cfg
        .thresholds
        .min_stability_slope
        .map(|v| Check::at_least("stability_slope", slope, v))
        .into_iter()
        .collect();
    let values = json!({ "slope": table.slope, "floor": table.floor, "fitted_rows": table.rows.iter().filter(|r| r.fitted).count() });
    Ok(Summary::new("stability", cfg, checks, values))
}

fn audit(cfg: &RunConfig, out: &OutputDir) -> Result<Summary> {
    let mp = cfg.manufactured()?;
    let mesh = mesh_of(cfg)?;
    let disc = Discretization::new(&mp.problem, mesh.clone())?;
    let sol = frank_wolfe(&disc, disc.midpoint_control(), &cfg.solver)?;
    let a = &cfg.audit;
    let params = GrowthParams {
        gamma: a.gamma,
        beta: a.beta,
        tau: a.tau,
        alpha: a.alpha,
        c: a.c,
    };
    let report = audit_growth_with(&disc, &sol.u, &params, a.samples, a.seed)?;
    out.write_with("audit.json", |b| {
        b.extend(report.to_json()?.bytes());
        Ok(())
    })?;
    for (rank, &i) in report.worst(a.worst).iter().enumerate() {
        let u = crate::conditions::replay_sample(&sol.u, a.alpha, a.seed, report.samples[i].index);
        let field = ControlField::new(mesh.clone(), u, sol.u.bounds().clone())?;
        out.write_with(&format!("worst_{rank}.csv"), |b| field.write_csv(b))?;
    }
    let t = &cfg.thresholds;
    let mut checks = Vec::new();
    if let Some(v) = t.max_violations {
        checks.push(Check::at_most(
            "violations",
            report.violations as f64,
            v as f64,
        ));
    }
    if let Some(v) = t.min_c_hat {
        checks.push(Check::at_least("c_hat", report.c_hat, v));
    }
    checks.extend(gap_checks(cfg, sol.report.final_gap));
    let values = json!({
        "c_hat": report.c_hat,
        "c_hat_z2": report.c_hat_z2,
        "c_hat_mixed": report.c_hat_mixed,
        "violations": report.violations,
        "label": report.label,
        "gap": sol.report.final_gap,
    });
    Ok(Summary::new("audit", cfg, checks, values))
}

/// Result of comparing the optimizer with exhaustive search.
#[derive(Debug, Clone, serde::Serialize)]
pub struct OracleComparison {
    pub cells: usize,
    pub grid: usize,
    pub oracle_u: Vec<f64>,
    pub oracle_j: f64,
    pub optimizer_u: Vec<f64>,
    pub optimizer_j: f64,
    pub max_cell_distance_in_steps: f64,
    pub gap_at_oracle: f64,
    pub gap_bound: f64,
}

impl OracleComparison {
    pub fn passed(&self) -> bool {
        self.max_cell_distance_in_steps <= 1.0 + 1e-9 && self.gap_at_oracle <= self.gap_bound
    }
}

pub fn compare_with_oracle(
    cells: usize,
    grid: usize,
    solver: &SolveConfig,
) -> Result<OracleComparison> {
    let (problem, mesh) = convex_instance(cells)?;
    let oracle = oracle_global_min(&problem, &mesh, grid)?;
    let disc = Discretization::new(&problem, mesh.clone())?;
    let sol = frank_wolfe(&disc, disc.midpoint_control(), solver)?;
    let steps = sol
        .u
        .values()
        .iter()
        .zip(oracle.u.values())
        .zip(&oracle.step)
        .map(|((a, b), s)| (a - b).abs() / s)
        .fold(0.0, f64::max);
    Ok(OracleComparison {
        cells,
        grid,
        oracle_u: oracle.u.values().to_vec(),
        oracle_j: oracle.j,
        optimizer_u: sol.u.values().to_vec(),
        optimizer_j: sol.report.final_j(),
        max_cell_distance_in_steps: steps,
        gap_at_oracle: gap_at(&problem, &mesh, &oracle.u)?,
        gap_bound: grid_gap_bound(&problem, &mesh, &oracle.u, &oracle.step)?,
    })
}

fn oracle_compare(cfg: &RunConfig, out: &OutputDir) -> Result<Summary> {
    let mut solver = cfg.solver.clone();
    solver.fw_gap_tolerance = solver.fw_gap_tolerance.min(1e-12);
    let cmp = compare_with_oracle(cfg.oracle.cells, cfg.oracle.grid, &solver)?;
    out.write_json("oracle.json", &cmp)?;
    let checks = vec![
        Check::at_most(
            "cell_distance_in_steps",
            cmp.max_cell_distance_in_steps,
            1.0 + 1e-9,
        ),
        Check::at_most(
            "gap_at_oracle_minus_bound",
            cmp.gap_at_oracle - cmp.gap_bound,
            0.0,
        ),
    ];
    Ok(Summary::new(
        "oracle-compare",
        cfg,
        checks,
        serde_json::to_value(&cmp)?,
    ))
}

fn export_fields(cfg: &RunConfig, out: &OutputDir) -> Result<Summary> {
    let mp = cfg.manufactured()?;
    let mesh = mesh_of(cfg)?;
    let disc = Discretization::new(&mp.problem, mesh.clone())?;
    let sol = frank_wolfe(&disc, disc.midpoint_control(), &cfg.solver)?;
    let exact = project_exact(&mp, &disc)?;
    let y_bar: Vec<f64> = mesh.vertices().iter().map(|&p| (mp.y_bar)(p)).collect();
    let path = out.write_with("fields.vtk", |b| {
        mesh.write_vtk(
            b,
            &[
                ("y", sol.y.values()),
                ("p", sol.p.values()),
                ("sigma", sol.sigma.nodal().values()),
                ("y_exact", &y_bar),
            ],
            &[
                ("u", sol.u.values()),
                ("u_exact_projected", exact.values()),
                ("sigma_mean", sol.sigma.cell_means()),
            ],
        )
    })?;
    let values = json!({ "file": path.display().to_string(), "gap": sol.report.final_gap });
    Ok(Summary::new(
        "export-fields",
        cfg,
        gap_checks(cfg, sol.report.final_gap),
        values,
    ))
}
