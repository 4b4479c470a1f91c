//! Orchestration: end-to-end solving, population-size sweeps for the
//! mean-field convergence rates, and first-order optimality probes of the
//! decentralized strategies.

use crate::assembly::{assemble_blocks, solvability_scan, BlockSystem, SolvabilityReport,
    DET_THRESHOLD};
use crate::model::{compute_xi_terms, validate_params, ModelParams, XiTerms, DEFAULT_DELTA};
use crate::numerics::{csv_num as fmt, loglog_slope, TimeGrid};
use crate::riccati::{solve_coupling, solve_follower_riccati, CouplingSolution, FollowerSolution};
use crate::simulate::rng::{derive_run_seed, CounterRng, StreamId};
use crate::simulate::{
    compute_errors, evaluate_social_cost, sample_mean_field_path, simulate_population,
    simulate_population_perturbed, ControlPerturbation, ErrorReport, PerturbTarget,
};
use crate::{Error, Result};
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Everything needed downstream of a successful solve: validated params,
/// assembled blocks, the solvability report and both decoupling solutions.
#[derive(Debug, Clone)]
pub struct SolvedSystem {
    pub params: ModelParams,
    pub xi: XiTerms,
    pub blocks: BlockSystem,
    pub report: SolvabilityReport,
    pub coupling: CouplingSolution,
    pub follower: FollowerSolution,
}

impl SolvedSystem {
    pub fn grid(&self) -> TimeGrid {
        self.coupling.grid
    }
}

/// Validates, assembles, scans for solvability and solves the decoupling
/// objects on the given grid. Fails with a solvability error when the
/// determinant scan does not clear [`DET_THRESHOLD`].
pub fn solve_system(params: ModelParams, grid: &TimeGrid) -> Result<SolvedSystem> {
    let params = validate_params(params, DEFAULT_DELTA)?;
    let xi = compute_xi_terms(&params);
    let blocks = assemble_blocks(&params, &xi);
    let report = solvability_scan(&blocks, grid, DET_THRESHOLD)?;
    if !report.passed {
        return Err(Error::NotSolvable {
            min_det: report.min_det,
            threshold: report.threshold,
        });
    }
    let coupling = solve_coupling(&blocks, grid)?;
    let follower = solve_follower_riccati(&params, grid)?;
    Ok(SolvedSystem {
        params,
        xi,
        blocks,
        report,
        coupling,
        follower,
    })
}

/// Runs `count` independent jobs on up to `threads` workers and returns the
/// results in job order. Each job is a pure function of its index, so the
/// output does not depend on scheduling.
fn run_jobs<T, F>(count: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = threads.max(1).min(count.max(1));
    if workers <= 1 || count <= 1 {
        return (0..count).map(&f).collect();
    }
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= count {
                    break;
                }
                let out = f(idx);
                slots.lock().unwrap()[idx] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|s| s.expect("job completed"))
        .collect()
}

/// Error means at or below this are rounding residue, not signal.
const DEGENERATE_ERROR_FLOOR: f64 = 1e-18;

/// Log-log slope fit of one error quantity against `N`, or the reason the
/// fit was not possible.
#[derive(Debug, Clone)]
pub enum SlopeFit {
    Fitted { slope: f64, intercept: f64 },
    Unavailable { reason: String },
}

impl SlopeFit {
    pub fn slope(&self) -> Option<f64> {
        match self {
            SlopeFit::Fitted { slope, .. } => Some(*slope),
            SlopeFit::Unavailable { .. } => None,
        }
    }
}

/// Aggregated convergence study across population sizes.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub n_values: Vec<usize>,
    pub runs_per_n: usize,
    pub master_seed: u64,
    /// One aggregated error report per entry of `n_values`.
    pub reports: Vec<ErrorReport>,
    /// Slope fits for `eps1_sq`, `eps2_sq`, `eps3_sq` against `N`.
    pub slopes: [SlopeFit; 3],
}

impl ConvergenceReport {
    /// CSV: `N,eps1_mean,eps1_se,eps2_mean,eps2_se,eps3_mean,eps3_se`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "N,eps1_mean,eps1_se,eps2_mean,eps2_se,eps3_mean,eps3_se"
        )?;
        for report in &self.reports {
            write!(w, "{}", report.n_agents)?;
            for j in 0..3 {
                write!(w, ",{},{}", fmt(report.mean[j]), fmt(report.se[j]))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// CSV: `quantity,slope,intercept,note`.
    pub fn write_slopes_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "quantity,slope,intercept,note")?;
        for (name, fit) in ["eps1_sq", "eps2_sq", "eps3_sq"].iter().zip(&self.slopes) {
            match fit {
                SlopeFit::Fitted { slope, intercept } => {
                    writeln!(w, "{name},{},{},", fmt(*slope), fmt(*intercept))?
                }
                SlopeFit::Unavailable { reason } => writeln!(w, "{name},,,{reason}")?,
            }
        }
        Ok(())
    }
}

/// For each `N`, runs `runs_per_n` independent population simulations with
/// common random numbers across `N`, aggregates the error functionals and
/// fits log-log decay slopes.
pub fn convergence_study(
    sys: &SolvedSystem,
    n_values: &[usize],
    runs_per_n: usize,
    master_seed: u64,
    threads: usize,
) -> Result<ConvergenceReport> {
    if n_values.is_empty() {
        return Err(Error::InvalidArgument("empty N list".into()));
    }
    if n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "N values must be strictly increasing".into(),
        ));
    }
    if runs_per_n == 0 {
        return Err(Error::InvalidArgument("runs_per_n must be positive".into()));
    }

    let grid = sys.grid();
    let jobs = n_values.len() * runs_per_n;
    let results = run_jobs(jobs, threads, |idx| {
        let n_agents = n_values[idx / runs_per_n];
        let run_idx = (idx % runs_per_n) as u64;
        let seed = derive_run_seed(master_seed, run_idx);
        let attempt = || -> Result<crate::simulate::ErrorFunctionals> {
            let mf = sample_mean_field_path(&sys.blocks, &sys.coupling, &sys.params, &grid, seed)?;
            let run =
                simulate_population(&mf, &sys.follower, &sys.coupling, &sys.params, n_agents, seed)?;
            compute_errors(&run, &mf)
        };
        attempt().map_err(|e| Error::RunFailed {
            n_agents,
            seed,
            message: e.to_string(),
        })
    });

    let mut reports = Vec::with_capacity(n_values.len());
    for (i, &n_agents) in n_values.iter().enumerate() {
        let mut runs = Vec::with_capacity(runs_per_n);
        for r in 0..runs_per_n {
            runs.push(results[i * runs_per_n + r].clone()?);
        }
        reports.push(ErrorReport::aggregate(n_agents, runs));
    }

    let slopes = std::array::from_fn(|j| {
        // means at or below the rounding floor come from exactly collapsing
        // configurations; fitting a rate to that residue is meaningless, so
        // they are zeroed and the fit rejects them as non-positive data
        let pts: Vec<(f64, f64)> = n_values
            .iter()
            .zip(&reports)
            .map(|(n, rep)| {
                let mean = rep.mean[j];
                (*n as f64, if mean <= DEGENERATE_ERROR_FLOOR { 0.0 } else { mean })
            })
            .collect();
        match loglog_slope(&pts) {
            Ok((slope, intercept)) => SlopeFit::Fitted { slope, intercept },
            Err(e) => SlopeFit::Unavailable {
                reason: e.to_string(),
            },
        }
    });

    Ok(ConvergenceReport {
        n_values: n_values.to_vec(),
        runs_per_n,
        master_seed,
        reports,
        slopes,
    })
}

/// One probe entry: the per-agent social cost change of a single perturbed
/// control direction.
#[derive(Debug, Clone, Copy)]
pub struct ProbeEntry {
    pub direction: u32,
    pub target: PerturbTarget,
    pub delta_cost: f64,
}

/// First-order optimality probe of the decentralized strategy profile.
///
/// The exact centralized infimum is out of reach at this scale, so the probe
/// tests the first-order necessary condition instead: no perturbation
/// direction may lower the per-agent social cost faster than the
/// `O(1/sqrt(N))` allowance `bound_estimate * step`.
#[derive(Debug, Clone)]
pub struct OptimalityProbe {
    pub n_agents: usize,
    pub directions: u32,
    pub step: f64,
    pub base_per_agent: f64,
    /// `per-agent cost / sqrt(N)`, the reporting comparator.
    pub bound_estimate: f64,
    pub entries: Vec<ProbeEntry>,
    /// Most negative cost change observed (0 if none improved).
    pub max_gain: f64,
}

impl OptimalityProbe {
    pub fn passed(&self) -> bool {
        self.max_gain >= -self.bound_estimate * self.step
    }

    /// CSV: `direction_id,target,delta`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "direction_id,target,delta")?;
        for e in &self.entries {
            let target = match e.target {
                PerturbTarget::Leader => "leader",
                PerturbTarget::Follower(_) => "follower",
            };
            writeln!(w, "{},{target},{}", e.direction, fmt(e.delta_cost))?;
        }
        Ok(())
    }
}

/// Piecewise-constant random direction with unit L2 norm on `[0, T]`,
/// scaled by `step`, given as one control vector per node.
fn perturbation_direction(
    grid: &TimeGrid,
    control_dim: usize,
    step: f64,
    seed: u64,
    probe_id: u32,
) -> Vec<Vec<f64>> {
    let steps = grid.steps();
    let mut rng = CounterRng::for_stream(seed, 0, StreamId::Probe(probe_id));
    let mut values: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..control_dim).map(|_| rng.normal()).collect())
        .collect();
    let norm_sq: f64 = values
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        * grid.dt();
    let scale = if norm_sq > 0.0 {
        step / norm_sq.sqrt()
    } else {
        0.0
    };
    for v in values.iter_mut() {
        for x in v.iter_mut() {
            *x *= scale;
        }
    }
    // constant extension to the terminal node for the cost quadrature
    let last = values[steps - 1].clone();
    values.push(last);
    values
}

/// Perturbs the leader control and one follower's control along random unit
/// directions, re-simulates with identical noise and records the per-agent
/// social cost changes.
pub fn optimality_probe(
    sys: &SolvedSystem,
    n_agents: usize,
    directions: u32,
    step: f64,
    seed: u64,
    threads: usize,
) -> Result<OptimalityProbe> {
    if !(step.is_finite() && step >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "probe step must be nonnegative, got {step}"
        )));
    }
    let grid = sys.grid();
    let m = sys.params.control_dim();
    let run_seed = derive_run_seed(seed, 0);
    let mf = sample_mean_field_path(&sys.blocks, &sys.coupling, &sys.params, &grid, run_seed)?;
    let base_run =
        simulate_population(&mf, &sys.follower, &sys.coupling, &sys.params, n_agents, run_seed)?;
    let base = evaluate_social_cost(&base_run, &sys.params);
    let bound_estimate = base.per_agent / (n_agents as f64).sqrt();

    let jobs = directions as usize * 2;
    let entries = run_jobs(jobs, threads, |idx| {
        let direction = (idx / 2) as u32;
        let target = if idx % 2 == 0 {
            PerturbTarget::Leader
        } else {
            PerturbTarget::Follower(0)
        };
        let probe_id = direction * 2 + (idx % 2) as u32;
        let delta = perturbation_direction(&grid, m, step, seed, probe_id);
        let pert = ControlPerturbation { target, delta };
        let attempt = || -> Result<f64> {
            let run = simulate_population_perturbed(
                &mf,
                &sys.follower,
                &sys.coupling,
                &sys.params,
                n_agents,
                run_seed,
                Some(&pert),
            )?;
            Ok(evaluate_social_cost(&run, &sys.params).per_agent - base.per_agent)
        };
        attempt().map(|delta_cost| ProbeEntry {
            direction,
            target,
            delta_cost,
        })
    });

    let mut out = Vec::with_capacity(jobs);
    for e in entries {
        out.push(e?);
    }
    let max_gain = out
        .iter()
        .map(|e| e.delta_cost)
        .fold(0.0f64, f64::min);
    Ok(OptimalityProbe {
        n_agents,
        directions,
        step,
        base_per_agent: base.per_agent,
        bound_estimate,
        entries: out,
        max_gain,
    })
}
