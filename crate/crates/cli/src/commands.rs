//! Subcommand implementations: each one solves as far as it needs, writes
//! its CSV artifacts into the output directory and returns a one-page
//! summary for stdout.

use crate::config::RunConfig;
use mf_stackelberg_core::analysis::{
    convergence_study, optimality_probe, solve_system, SlopeFit, SolvedSystem,
};
use mf_stackelberg_core::assembly::{assemble_blocks, solvability_scan, DET_THRESHOLD};
use mf_stackelberg_core::model::{compute_xi_terms, validate_params, DEFAULT_DELTA};
use mf_stackelberg_core::numerics::TimeGrid;
use mf_stackelberg_core::simulate::rng::derive_run_seed;
use mf_stackelberg_core::simulate::{
    compute_errors, evaluate_social_cost, sample_mean_field_path, simulate_population,
    write_costs_csv, ErrorReport,
};
use mf_stackelberg_core::Error as CoreError;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Check,
    Solve,
    Simulate,
    Converge,
    Probe,
}

impl Command {
    pub fn parse(name: &str) -> Option<Command> {
        match name {
            "check" => Some(Command::Check),
            "solve" => Some(Command::Solve),
            "simulate" => Some(Command::Simulate),
            "converge" => Some(Command::Converge),
            "probe" => Some(Command::Probe),
            _ => None,
        }
    }
}

/// Errors carrying their process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Solvability(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Solvability(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m)
            | CliError::Config(m)
            | CliError::Solvability(m)
            | CliError::Numerical(m) => m,
        }
    }
}

/// Classifies core errors by exit code: data problems are config errors, a
/// failed determinant gate is a solvability failure, everything downstream
/// is a numerical failure.
pub fn classify(err: CoreError) -> CliError {
    match &err {
        CoreError::NotSolvable { .. } => {
            CliError::Solvability(format!("system not solvable on [0,T]: {err}"))
        }
        CoreError::Shape(_)
        | CoreError::Dimension(_)
        | CoreError::NotSymmetric(_)
        | CoreError::NotUniformlyPositive { .. }
        | CoreError::NotPsd { .. }
        | CoreError::InvalidArgument(_)
        | CoreError::NotFinite { .. } => CliError::Config(err.to_string()),
        _ => CliError::Numerical(err.to_string()),
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Numerical(format!("io failure: {e}"))
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err)?;
    fs::write(dir.join(name), contents).map_err(io_err)
}

fn solved(cfg: &RunConfig) -> Result<SolvedSystem, CliError> {
    let grid = TimeGrid::new(cfg.params.horizon, cfg.steps).map_err(classify)?;
    solve_system(cfg.params.clone(), &grid).map_err(classify)
}

/// Runs one subcommand, writing artifacts under `cfg.output_dir`.
/// Returns the human-readable summary.
pub fn run_command(cmd: Command, cfg: &RunConfig, threads: usize) -> Result<String, CliError> {
    match cmd {
        Command::Check => check(cfg),
        Command::Solve => solve(cfg),
        Command::Simulate => simulate(cfg),
        Command::Converge => converge(cfg, threads),
        Command::Probe => probe(cfg, threads),
    }
}

fn check(cfg: &RunConfig) -> Result<String, CliError> {
    let params = validate_params(cfg.params.clone(), DEFAULT_DELTA).map_err(classify)?;
    let xi = compute_xi_terms(&params);
    let bs = assemble_blocks(&params, &xi);
    let grid = TimeGrid::new(params.horizon, cfg.steps).map_err(classify)?;
    let report = solvability_scan(&bs, &grid, DET_THRESHOLD).map_err(classify)?;

    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(io_err)?;
    write_file(&cfg.output_dir, "solvability.csv", &csv)?;

    let mid = grid.steps() / 2;
    let mut s = String::new();
    let _ = writeln!(s, "solvability scan over [0, {}], {} nodes", grid.t1(), grid.nodes());
    let _ = writeln!(s, "  det at t=0      : {}", report.det_values[0]);
    let _ = writeln!(
        s,
        "  det at t={:<6} : {}",
        grid.time(mid),
        report.det_values[mid]
    );
    let _ = writeln!(s, "  min det         : {}", report.min_det);
    let _ = writeln!(s, "  threshold       : {}", report.threshold);
    let _ = writeln!(s, "  passed          : {}", report.passed);
    let _ = writeln!(s, "wrote {}", cfg.output_dir.join("solvability.csv").display());
    if !report.passed {
        return Err(CliError::Solvability(format!(
            "system not solvable on [0,T]: min det {} <= threshold {}",
            report.min_det, report.threshold
        )));
    }
    Ok(s)
}

fn solve(cfg: &RunConfig) -> Result<String, CliError> {
    let sys = solved(cfg)?;
    let mut buf = Vec::new();
    sys.coupling.write_k_csv(&mut buf).map_err(io_err)?;
    write_file(&cfg.output_dir, "k.csv", &buf)?;
    buf.clear();
    sys.coupling.write_kappa_csv(&mut buf).map_err(io_err)?;
    write_file(&cfg.output_dir, "kappa.csv", &buf)?;
    buf.clear();
    sys.follower.write_csv(&mut buf).map_err(io_err)?;
    write_file(&cfg.output_dir, "pbar.csv", &buf)?;

    let last = sys.grid().nodes() - 1;
    let mut s = String::new();
    let _ = writeln!(s, "decoupling solve on {} nodes", sys.grid().nodes());
    let _ = writeln!(s, "  min det              : {}", sys.report.min_det);
    let _ = writeln!(
        s,
        "  Riccati residual     : {}",
        sys.coupling.riccati_residual(&sys.blocks)
    );
    let _ = writeln!(
        s,
        "  K asymmetry (max)    : {}",
        sys.coupling.max_asymmetry()
    );
    let _ = writeln!(
        s,
        "  |K(T)|               : {}",
        sys.coupling.k_at_node(last).max_abs()
    );
    let kt_gap = sys
        .coupling
        .kappa_at_node(last)
        .iter()
        .zip(&sys.blocks.g_vec)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let _ = writeln!(s, "  |kappa(T) - g|       : {kt_gap}");
    let pt_gap = sys
        .follower
        .p_at_node(last)
        .sub(&sys.params.g)
        .max_abs();
    let _ = writeln!(s, "  |P(T) - G|           : {pt_gap}");
    let _ = writeln!(
        s,
        "wrote {}, {}, {}",
        cfg.output_dir.join("k.csv").display(),
        cfg.output_dir.join("kappa.csv").display(),
        cfg.output_dir.join("pbar.csv").display()
    );
    Ok(s)
}

fn simulate(cfg: &RunConfig) -> Result<String, CliError> {
    if cfg.runs == 0 {
        return Err(CliError::Config("simulate needs at least one run".into()));
    }
    let sys = solved(cfg)?;
    let grid = sys.grid();
    let mut errors = Vec::with_capacity(cfg.runs);
    let mut costs = Vec::with_capacity(cfg.runs);
    let mut first_run = None;
    for run_idx in 0..cfg.runs {
        let seed = derive_run_seed(cfg.seed, run_idx as u64);
        let mf = sample_mean_field_path(&sys.blocks, &sys.coupling, &sys.params, &grid, seed)
            .map_err(classify)?;
        let run = simulate_population(
            &mf,
            &sys.follower,
            &sys.coupling,
            &sys.params,
            cfg.n_agents,
            seed,
        )
        .map_err(classify)?;
        errors.push(compute_errors(&run, &mf).map_err(classify)?);
        costs.push(evaluate_social_cost(&run, &sys.params));
        if run_idx == 0 {
            first_run = Some(run);
        }
    }
    let report = ErrorReport::aggregate(cfg.n_agents, errors);

    let mut buf = Vec::new();
    report.write_csv(&mut buf).map_err(io_err)?;
    write_file(&cfg.output_dir, "errors.csv", &buf)?;
    buf.clear();
    write_costs_csv(&mut buf, cfg.n_agents, &costs).map_err(io_err)?;
    write_file(&cfg.output_dir, "costs.csv", &buf)?;
    buf.clear();
    first_run
        .as_ref()
        .expect("at least one run")
        .write_trajectories_csv(&mut buf)
        .map_err(io_err)?;
    write_file(&cfg.output_dir, "trajectories.csv", &buf)?;

    let cost_means: Vec<f64> = costs.iter().map(|c| c.per_agent).collect();
    let (cost_mean, cost_se) = mf_stackelberg_core::numerics::mean_and_se(&cost_means);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "simulated N={} followers, {} runs, seed {}",
        cfg.n_agents, cfg.runs, cfg.seed
    );
    for (name, j) in [("eps1_sq", 0), ("eps2_sq", 1), ("eps3_sq", 2)] {
        let _ = writeln!(
            s,
            "  {name:8}: mean {:>12.6e}  se {:>12.6e}",
            report.mean[j], report.se[j]
        );
    }
    let _ = writeln!(s, "  J_soc/N : mean {cost_mean:>12.6e}  se {cost_se:>12.6e}");
    let _ = writeln!(
        s,
        "wrote {}, {}, {}",
        cfg.output_dir.join("errors.csv").display(),
        cfg.output_dir.join("costs.csv").display(),
        cfg.output_dir.join("trajectories.csv").display()
    );
    Ok(s)
}

fn converge(cfg: &RunConfig, threads: usize) -> Result<String, CliError> {
    let sys = solved(cfg)?;
    let report = convergence_study(&sys, &cfg.n_values, cfg.runs_per_n, cfg.seed, threads)
        .map_err(classify)?;

    let mut buf = Vec::new();
    report.write_csv(&mut buf).map_err(io_err)?;
    write_file(&cfg.output_dir, "convergence.csv", &buf)?;
    buf.clear();
    report.write_slopes_csv(&mut buf).map_err(io_err)?;
    write_file(&cfg.output_dir, "slopes.csv", &buf)?;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "convergence sweep over N = {:?}, {} runs each, master seed {}",
        cfg.n_values, cfg.runs_per_n, cfg.seed
    );
    for (rep, n) in report.reports.iter().zip(&report.n_values) {
        let _ = writeln!(
            s,
            "  N={n:<4} eps1 {:.4e}  eps2 {:.4e}  eps3 {:.4e}",
            rep.mean[0], rep.mean[1], rep.mean[2]
        );
    }
    for (name, fit) in ["eps1_sq", "eps2_sq", "eps3_sq"].iter().zip(&report.slopes) {
        match fit {
            SlopeFit::Fitted { slope, .. } => {
                let _ = writeln!(s, "  slope {name}: {slope:.4}");
            }
            SlopeFit::Unavailable { reason } => {
                let _ = writeln!(s, "  slope {name}: unavailable ({reason})");
            }
        }
    }
    let _ = writeln!(
        s,
        "wrote {}, {}",
        cfg.output_dir.join("convergence.csv").display(),
        cfg.output_dir.join("slopes.csv").display()
    );
    Ok(s)
}

fn probe(cfg: &RunConfig, threads: usize) -> Result<String, CliError> {
    let sys = solved(cfg)?;
    let probe = optimality_probe(
        &sys,
        cfg.n_agents,
        cfg.directions,
        cfg.step,
        cfg.seed,
        threads,
    )
    .map_err(classify)?;

    let mut buf = Vec::new();
    probe.write_csv(&mut buf).map_err(io_err)?;
    write_file(&cfg.output_dir, "probe.csv", &buf)?;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "optimality probe: N={}, {} directions per target, step {}",
        probe.n_agents, probe.directions, probe.step
    );
    let _ = writeln!(s, "  base J_soc/N    : {}", probe.base_per_agent);
    let _ = writeln!(s, "  bound estimate  : {} (per-agent cost / sqrt(N))", probe.bound_estimate);
    let _ = writeln!(s, "  max gain        : {}", probe.max_gain);
    let _ = writeln!(s, "  allowance       : {}", probe.bound_estimate * probe.step);
    let _ = writeln!(s, "  first-order ok  : {}", probe.passed());
    let _ = writeln!(
        s,
        "note: this probes the first-order necessary condition; the exact \
         centralized infimum is not computed"
    );
    let _ = writeln!(s, "wrote {}", cfg.output_dir.join("probe.csv").display());
    Ok(s)
}
