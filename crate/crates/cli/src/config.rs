//! Strict JSON run configuration.
//!
//! The document has one mandatory `model` section and optional `grid`,
//! `simulate`, `converge`, `probe` and `output_dir` entries; unknown keys
//! anywhere are rejected. Matrices may be written as plain numbers (meaning
//! `1x1`) or as nested row arrays; vectors as numbers or arrays.

use mf_stackelberg_core::numerics::Matrix;
use mf_stackelberg_core::ModelParams;
use serde::Deserialize;
use std::path::PathBuf;

/// Fully resolved configuration with defaults injected.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: ModelParams,
    pub steps: usize,
    pub n_agents: usize,
    pub runs: usize,
    pub seed: u64,
    pub n_values: Vec<usize>,
    pub runs_per_n: usize,
    pub directions: u32,
    pub step: f64,
    pub output_dir: PathBuf,
}

pub const DEFAULT_STEPS: usize = 2400;
pub const DEFAULT_N_AGENTS: usize = 100;
pub const DEFAULT_RUNS: usize = 200;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_DIRECTIONS: u32 = 50;
pub const DEFAULT_STEP: f64 = 0.05;
pub const DEFAULT_N_VALUES: [usize; 5] = [5, 10, 20, 40, 80];
pub const DEFAULT_RUNS_PER_N: usize = 100;

#[derive(Debug, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum MatrixDef {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum VectorDef {
    Scalar(f64),
    Components(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    state_dim: usize,
    control_dim: usize,
    noise_dim: usize,
    a0: MatrixDef,
    b0: MatrixDef,
    c0: MatrixDef,
    d0: MatrixDef,
    a: MatrixDef,
    b: MatrixDef,
    c: MatrixDef,
    d: MatrixDef,
    f: MatrixDef,
    q0: MatrixDef,
    r0: MatrixDef,
    q: MatrixDef,
    r: MatrixDef,
    #[serde(default)]
    g0: Option<MatrixDef>,
    #[serde(default)]
    g: Option<MatrixDef>,
    #[serde(default)]
    theta0: Option<MatrixDef>,
    #[serde(default)]
    theta_hat0: Option<MatrixDef>,
    #[serde(default)]
    theta: Option<MatrixDef>,
    #[serde(default)]
    theta1: Option<MatrixDef>,
    #[serde(default)]
    theta_hat: Option<MatrixDef>,
    #[serde(default)]
    theta_hat1: Option<MatrixDef>,
    #[serde(default)]
    eta0: Option<VectorDef>,
    #[serde(default)]
    eta_hat0: Option<VectorDef>,
    #[serde(default)]
    eta: Option<VectorDef>,
    #[serde(default)]
    eta_hat: Option<VectorDef>,
    alpha: f64,
    horizon: f64,
    #[serde(default)]
    xi0_mean: Option<VectorDef>,
    #[serde(default)]
    xi0_std: Option<VectorDef>,
    #[serde(default)]
    xi_hat: Option<VectorDef>,
    #[serde(default)]
    xi_std: Option<VectorDef>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    steps: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateSection {
    #[serde(rename = "N", default)]
    n_agents: Option<usize>,
    #[serde(default)]
    runs: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvergeSection {
    #[serde(rename = "N_values", default)]
    n_values: Option<Vec<usize>>,
    #[serde(rename = "runs_per_N", default)]
    runs_per_n: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeSection {
    #[serde(default)]
    directions: Option<u32>,
    #[serde(default)]
    step: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: ModelSection,
    #[serde(default)]
    grid: Option<GridSection>,
    #[serde(default)]
    simulate: Option<SimulateSection>,
    #[serde(default)]
    converge: Option<ConvergeSection>,
    #[serde(default)]
    probe: Option<ProbeSection>,
    #[serde(default)]
    output_dir: Option<String>,
}

fn matrix_from(def: Option<MatrixDef>, name: &str, rows: usize, cols: usize) -> Result<Matrix, String> {
    match def {
        None => Ok(Matrix::zeros(rows, cols)),
        Some(MatrixDef::Scalar(v)) => {
            if rows == 1 && cols == 1 {
                Matrix::new(1, 1, vec![v]).map_err(|e| format!("{name}: {e}"))
            } else {
                Err(format!(
                    "{name}: scalar given but a {rows}x{cols} matrix is required"
                ))
            }
        }
        Some(MatrixDef::Rows(r)) => {
            if r.len() != rows || r.iter().any(|row| row.len() != cols) {
                return Err(format!("{name}: expected {rows}x{cols} rows"));
            }
            Matrix::new(rows, cols, r.into_iter().flatten().collect())
                .map_err(|e| format!("{name}: {e}"))
        }
    }
}

fn vector_from(def: Option<VectorDef>, name: &str, len: usize, fill: f64) -> Result<Vec<f64>, String> {
    let v = match def {
        None => vec![fill; len],
        Some(VectorDef::Scalar(v)) => {
            if len == 1 {
                vec![v]
            } else {
                return Err(format!("{name}: scalar given but {len} components required"));
            }
        }
        Some(VectorDef::Components(v)) => {
            if v.len() != len {
                return Err(format!("{name}: expected {len} components, got {}", v.len()));
            }
            v
        }
    };
    if v.iter().any(|x| !x.is_finite()) {
        return Err(format!("{name}: non-finite component"));
    }
    Ok(v)
}

/// Rewrites serde error messages into the documented vocabulary.
fn humanize(err: serde_json::Error) -> String {
    let msg = err.to_string();
    if msg.contains("missing field `model`") {
        return "model required".into();
    }
    if let Some(rest) = msg.strip_prefix("unknown field ") {
        let key = rest.split(',').next().unwrap_or(rest);
        return format!(
            "unknown key {} at line {} column {}",
            key.trim_matches(|c| c == '`'),
            err.line(),
            err.column()
        );
    }
    if err.is_syntax() || err.is_eof() {
        return format!(
            "syntax error at line {} column {}: {msg}",
            err.line(),
            err.column()
        );
    }
    format!("at line {} column {}: {msg}", err.line(), err.column())
}

/// Strict parse of a configuration document, with defaults injected and
/// every numeric checked finite. Model validation proper (symmetry,
/// definiteness) happens later in the pipeline.
pub fn parse_config(text: &str) -> Result<RunConfig, String> {
    let raw: RawConfig = serde_json::from_str(text).map_err(humanize)?;
    let m = raw.model;
    let (n, mc, d) = (m.state_dim, m.control_dim, m.noise_dim);
    if n == 0 || mc == 0 || d == 0 {
        return Err("model dimensions must be positive".into());
    }

    let params = ModelParams {
        a0: matrix_from(Some(m.a0), "a0", n, n)?,
        b0: matrix_from(Some(m.b0), "b0", n, mc)?,
        c0: matrix_from(Some(m.c0), "c0", n, n)?,
        d0: matrix_from(Some(m.d0), "d0", n, d)?,
        a: matrix_from(Some(m.a), "a", n, n)?,
        b: matrix_from(Some(m.b), "b", n, mc)?,
        c: matrix_from(Some(m.c), "c", n, n)?,
        d: matrix_from(Some(m.d), "d", n, d)?,
        f: matrix_from(Some(m.f), "f", n, n)?,
        q0: matrix_from(Some(m.q0), "q0", n, n)?,
        r0: matrix_from(Some(m.r0), "r0", mc, mc)?,
        g0: matrix_from(m.g0, "g0", n, n)?,
        theta0: matrix_from(m.theta0, "theta0", n, n)?,
        theta_hat0: matrix_from(m.theta_hat0, "theta_hat0", n, n)?,
        eta0: vector_from(m.eta0, "eta0", n, 0.0)?,
        eta_hat0: vector_from(m.eta_hat0, "eta_hat0", n, 0.0)?,
        q: matrix_from(Some(m.q), "q", n, n)?,
        r: matrix_from(Some(m.r), "r", mc, mc)?,
        g: matrix_from(m.g, "g", n, n)?,
        theta: matrix_from(m.theta, "theta", n, n)?,
        theta1: matrix_from(m.theta1, "theta1", n, n)?,
        theta_hat: matrix_from(m.theta_hat, "theta_hat", n, n)?,
        theta_hat1: matrix_from(m.theta_hat1, "theta_hat1", n, n)?,
        eta: vector_from(m.eta, "eta", n, 0.0)?,
        eta_hat: vector_from(m.eta_hat, "eta_hat", n, 0.0)?,
        alpha: m.alpha,
        horizon: m.horizon,
        xi0_mean: vector_from(m.xi0_mean, "xi0_mean", n, 0.0)?,
        xi0_std: vector_from(m.xi0_std, "xi0_std", n, 1.0)?,
        xi_hat: vector_from(m.xi_hat, "xi_hat", n, 0.0)?,
        xi_std: vector_from(m.xi_std, "xi_std", n, 1.0)?,
    };
    if !params.alpha.is_finite() || !params.horizon.is_finite() {
        return Err("alpha and horizon must be finite".into());
    }

    let steps = raw.grid.map(|g| g.steps).unwrap_or(DEFAULT_STEPS);
    if steps < 2 {
        return Err(format!("grid.steps must be at least 2, got {steps}"));
    }
    let sim = raw.simulate.unwrap_or(SimulateSection {
        n_agents: None,
        runs: None,
        seed: None,
    });
    let conv = raw.converge.unwrap_or(ConvergeSection {
        n_values: None,
        runs_per_n: None,
    });
    let probe = raw.probe.unwrap_or(ProbeSection {
        directions: None,
        step: None,
    });
    let step = probe.step.unwrap_or(DEFAULT_STEP);
    if !step.is_finite() || step < 0.0 {
        return Err(format!("probe.step must be nonnegative, got {step}"));
    }

    Ok(RunConfig {
        params,
        steps,
        n_agents: sim.n_agents.unwrap_or(DEFAULT_N_AGENTS),
        runs: sim.runs.unwrap_or(DEFAULT_RUNS),
        seed: sim.seed.unwrap_or(DEFAULT_SEED),
        n_values: conv.n_values.unwrap_or_else(|| DEFAULT_N_VALUES.to_vec()),
        runs_per_n: conv.runs_per_n.unwrap_or(DEFAULT_RUNS_PER_N),
        directions: probe.directions.unwrap_or(DEFAULT_DIRECTIONS),
        step,
        output_dir: PathBuf::from(raw.output_dir.unwrap_or_else(|| "out".into())),
    })
}
