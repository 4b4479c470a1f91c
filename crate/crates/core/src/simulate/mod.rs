//! Sampling of the mean-field limit path, simulation of the realized
//! `N`-agent population under the decentralized controls, and the error and
//! cost functionals measured along those paths.
//!
//! One run proceeds in three stages sharing a single grid and noise plan:
//!
//! 1. Euler-Maruyama march of the decoupled mean-field block
//!    `dX = [(A + B (K + G)) X + B kappa + b] dt + D dW0`, with
//!    `Y = (K + G) X + kappa` recovered node by node,
//! 2. auxiliary follower states `xbar_i` driven by the mean-field
//!    quantities, defining the costates `p_i = P (xbar_i - x_hat) + k2` and
//!    the decentralized controls,
//! 3. the realized coupled population, where the leader and every follower
//!    feed back the empirical average of the realized follower states.
//!
//! Drifts are Lipschitz and the diffusions are constant, so the
//! Euler-Maruyama scheme is exact in the diffusion term and strong order
//! 0.5 overall, which the error functionals tolerate.

pub mod rng;

use crate::assembly::BlockSystem;
use crate::model::ModelParams;
use crate::numerics::{csv_num as fmt, mean_and_se, trapezoid, Matrix, TimeGrid};
use crate::riccati::{CouplingSolution, FollowerSolution};
use crate::{Error, Result};
use rng::{CounterRng, StreamId};
use std::io::Write;

/// Dense `[node][agent][component]` storage for per-agent trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSeries {
    nodes: usize,
    agents: usize,
    dim: usize,
    data: Vec<f64>,
}

impl AgentSeries {
    pub fn zeros(nodes: usize, agents: usize, dim: usize) -> Self {
        Self {
            nodes,
            agents,
            dim,
            data: vec![0.0; nodes * agents * dim],
        }
    }

    #[inline]
    pub fn at(&self, node: usize, agent: usize) -> &[f64] {
        let base = (node * self.agents + agent) * self.dim;
        &self.data[base..base + self.dim]
    }

    #[inline]
    pub fn at_mut(&mut self, node: usize, agent: usize) -> &mut [f64] {
        let base = (node * self.agents + agent) * self.dim;
        &mut self.data[base..base + self.dim]
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Componentwise average over agents at one node, written into `out`.
    pub fn average_into(&self, node: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        out.fill(0.0);
        for agent in 0..self.agents {
            let v = self.at(node, agent);
            for (o, x) in out.iter_mut().zip(v) {
                *o += x;
            }
        }
        let inv = 1.0 / self.agents as f64;
        for o in out.iter_mut() {
            *o *= inv;
        }
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }
}

/// One `W0`-realization of the mean-field pair `(X, Y)` on the grid.
///
/// Block layout of `X`: `(x_hat, xbar0, q*, l1*, l2*)`; of `Y`:
/// `(y*, yhat*, y0*, k1, k2)`. The decoupling identity
/// `Y = (K + G) X + kappa` holds at every node by construction.
#[derive(Debug, Clone)]
pub struct MeanFieldPath {
    pub grid: TimeGrid,
    pub n: usize,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    /// Brownian increments of `W0`, already scaled by `sqrt(dt)`.
    pub w0_increments: Vec<Vec<f64>>,
    pub seed: u64,
}

impl MeanFieldPath {
    pub fn x_hat(&self, node: usize) -> &[f64] {
        &self.x[node][0..self.n]
    }

    pub fn x_bar0(&self, node: usize) -> &[f64] {
        &self.x[node][self.n..2 * self.n]
    }

    pub fn y0_star(&self, node: usize) -> &[f64] {
        &self.y[node][2 * self.n..3 * self.n]
    }

    pub fn k1(&self, node: usize) -> &[f64] {
        &self.y[node][3 * self.n..4 * self.n]
    }

    pub fn k2(&self, node: usize) -> &[f64] {
        &self.y[node][4 * self.n..5 * self.n]
    }
}

#[inline]
fn matvec_into(m: &Matrix, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.cols(), v.len());
    debug_assert_eq!(m.rows(), out.len());
    for (i, o) in out.iter_mut().enumerate() {
        let row = m.row(i);
        let mut acc = 0.0;
        for (a, x) in row.iter().zip(v) {
            acc += a * x;
        }
        *o = acc;
    }
}

/// Samples the mean-field path by an Euler-Maruyama forward march,
/// reproducible from `seed`.
pub fn sample_mean_field_path(
    bs: &BlockSystem,
    cs: &CouplingSolution,
    p: &ModelParams,
    grid: &TimeGrid,
    seed: u64,
) -> Result<MeanFieldPath> {
    if cs.grid != *grid {
        return Err(Error::GridMismatch(
            "coupling solution grid differs from requested grid".into(),
        ));
    }
    let n = p.state_dim();
    let d = p.noise_dim();
    let dim = bs.dim();
    let steps = grid.steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();

    let mut common = CounterRng::for_stream(seed, 0, StreamId::Common);
    let mut x0 = vec![0.0; dim];
    x0[0..n].copy_from_slice(&p.xi_hat);
    for i in 0..n {
        x0[n + i] = p.xi0_mean[i] + p.xi0_std[i] * common.normal();
    }

    let mut w0_increments = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut dw = vec![0.0; d];
        for v in dw.iter_mut() {
            *v = sqrt_dt * common.normal();
        }
        w0_increments.push(dw);
    }

    let mut x = Vec::with_capacity(grid.nodes());
    let mut y = Vec::with_capacity(grid.nodes());
    x.push(x0);

    let mut ybuf = vec![0.0; dim];
    let mut gx = vec![0.0; dim];
    let mut drift = vec![0.0; dim];
    let mut by = vec![0.0; dim];
    let mut noise = vec![0.0; dim];

    for k in 0..steps {
        let xk = x[k].clone();
        matvec_into(cs.k_at_node(k), &xk, &mut ybuf);
        matvec_into(&bs.g_bb, &xk, &mut gx);
        let kap = cs.kappa_at_node(k);
        for i in 0..dim {
            ybuf[i] += gx[i] + kap[i];
        }
        y.push(ybuf.clone());

        matvec_into(&bs.a_bb, &xk, &mut drift);
        matvec_into(&bs.b_bb, &ybuf, &mut by);
        matvec_into(&bs.d_bb, &w0_increments[k], &mut noise);
        let mut next = xk;
        for i in 0..dim {
            next[i] += dt * (drift[i] + by[i] + bs.b_vec[i]) + noise[i];
        }
        x.push(next);
    }

    // terminal node of Y
    let xk = &x[steps];
    matvec_into(cs.k_at_node(steps), xk, &mut ybuf);
    matvec_into(&bs.g_bb, xk, &mut gx);
    let kap = cs.kappa_at_node(steps);
    for i in 0..dim {
        ybuf[i] += gx[i] + kap[i];
    }
    y.push(ybuf);

    Ok(MeanFieldPath {
        grid: *grid,
        n,
        x,
        y,
        w0_increments,
        seed,
    })
}

/// Which control a probe perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbTarget {
    Leader,
    Follower(usize),
}

/// Additive control perturbation, one `m`-vector per grid node.
#[derive(Debug, Clone)]
pub struct ControlPerturbation {
    pub target: PerturbTarget,
    pub delta: Vec<Vec<f64>>,
}

/// Realized population run: states, costates and applied controls per node.
#[derive(Debug, Clone)]
pub struct PopulationRun {
    pub n_agents: usize,
    pub grid: TimeGrid,
    /// Realized leader state per node.
    pub x0_star: Vec<Vec<f64>>,
    /// Realized follower states.
    pub xi_star: AgentSeries,
    /// Auxiliary follower states driven by the mean-field quantities.
    pub xbar: AgentSeries,
    /// Follower costates `p_i = P (xbar_i - x_hat) + k2`.
    pub p: AgentSeries,
    /// Applied leader control per node.
    pub u0_star: Vec<Vec<f64>>,
    /// Applied follower controls.
    pub u: AgentSeries,
    pub seed: u64,
}

/// Simulates the population under the decentralized strategies, using the
/// same `W0` path as `mf` and fresh i.i.d. follower noise streams.
pub fn simulate_population(
    mf: &MeanFieldPath,
    fs: &FollowerSolution,
    cs: &CouplingSolution,
    p: &ModelParams,
    n_agents: usize,
    seed: u64,
) -> Result<PopulationRun> {
    simulate_population_perturbed(mf, fs, cs, p, n_agents, seed, None)
}

/// As [`simulate_population`], optionally adding a control perturbation to
/// the leader or to one follower while every other strategy stays fixed.
/// The auxiliary states (and therefore the strategies `p_i`) are never
/// perturbed; only the applied control and the realized states respond.
pub fn simulate_population_perturbed(
    mf: &MeanFieldPath,
    fs: &FollowerSolution,
    cs: &CouplingSolution,
    p: &ModelParams,
    n_agents: usize,
    seed: u64,
    perturbation: Option<&ControlPerturbation>,
) -> Result<PopulationRun> {
    if n_agents == 0 {
        return Err(Error::InvalidArgument(
            "population needs at least one agent".into(),
        ));
    }
    if fs.grid != mf.grid || cs.grid != mf.grid {
        return Err(Error::GridMismatch(
            "mean-field path, follower solution and coupling must share a grid".into(),
        ));
    }
    if let Some(pert) = perturbation {
        if pert.delta.len() != mf.grid.nodes() {
            return Err(Error::GridMismatch(
                "perturbation must provide one control vector per node".into(),
            ));
        }
        if let PerturbTarget::Follower(i) = pert.target {
            if i >= n_agents {
                return Err(Error::InvalidArgument(format!(
                    "perturbed follower {i} out of range for N={n_agents}"
                )));
            }
        }
    }

    let n = p.state_dim();
    let m = p.control_dim();
    let d = p.noise_dim();
    let grid = mf.grid;
    let steps = grid.steps();
    let nodes = grid.nodes();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();

    // control gains
    let r_lu = p.r.lu()?;
    let r_inv_bt = r_lu.solve_matrix(&p.b.transpose())?; // m x n
    let ar0_lu = p.r0.scale(p.alpha).lu()?;
    let ar0_inv_b0t = ar0_lu.solve_matrix(&p.b0.transpose())?; // m x n

    // follower initial draws and noise
    let mut xi_init = vec![0.0; n_agents * n];
    let mut dw = AgentSeries::zeros(steps, n_agents, d);
    for i in 0..n_agents {
        let mut stream = CounterRng::for_stream(seed, 0, StreamId::Agent(i as u32));
        for c in 0..n {
            xi_init[i * n + c] = p.xi_hat[c] + p.xi_std[c] * stream.normal();
        }
        for k in 0..steps {
            for v in dw.at_mut(k, i) {
                *v = sqrt_dt * stream.normal();
            }
        }
    }

    let mut xbar = AgentSeries::zeros(nodes, n_agents, n);
    let mut p_series = AgentSeries::zeros(nodes, n_agents, n);
    let mut u_series = AgentSeries::zeros(nodes, n_agents, m);
    let mut xi_star = AgentSeries::zeros(nodes, n_agents, n);
    for i in 0..n_agents {
        xbar.at_mut(0, i).copy_from_slice(&xi_init[i * n..(i + 1) * n]);
        xi_star
            .at_mut(0, i)
            .copy_from_slice(&xi_init[i * n..(i + 1) * n]);
    }

    // stage 2: auxiliary states and costates
    let mut diff = vec![0.0; n];
    let mut p_buf = vec![0.0; n];
    let mut u_buf = vec![0.0; m];
    let mut t_a = vec![0.0; n];
    let mut t_b = vec![0.0; n];
    let mut t_c = vec![0.0; n];
    let mut t_f = vec![0.0; n];
    let mut t_d = vec![0.0; n];
    for k in 0..nodes {
        let pk = fs.p_at_node(k);
        let x_hat = mf.x_hat(k);
        let x_bar0 = mf.x_bar0(k);
        let k2 = mf.k2(k);
        for i in 0..n_agents {
            let xb = xbar.at(k, i).to_vec();
            for c in 0..n {
                diff[c] = xb[c] - x_hat[c];
            }
            matvec_into(pk, &diff, &mut p_buf);
            for c in 0..n {
                p_buf[c] += k2[c];
            }
            p_series.at_mut(k, i).copy_from_slice(&p_buf);
            matvec_into(&r_inv_bt, &p_buf, &mut u_buf);
            for v in u_buf.iter_mut() {
                *v = -*v;
            }
            u_series.at_mut(k, i).copy_from_slice(&u_buf);
            if k < steps {
                matvec_into(&p.a, &xb, &mut t_a);
                matvec_into(&p.b, &u_buf, &mut t_b);
                matvec_into(&p.c, x_hat, &mut t_c);
                matvec_into(&p.f, x_bar0, &mut t_f);
                matvec_into(&p.d, dw.at(k, i), &mut t_d);
                let next = xbar.at_mut(k + 1, i);
                for c in 0..n {
                    next[c] = xb[c] + dt * (t_a[c] + t_b[c] + t_c[c] + t_f[c]) + t_d[c];
                }
            }
        }
    }

    // stage 3: realized coupled system
    let mut x0_star = vec![vec![0.0; n]; nodes];
    let mut u0_star = vec![vec![0.0; m]; nodes];
    x0_star[0].copy_from_slice(mf.x_bar0(0));

    let mut xavg = vec![0.0; n];
    let mut u0_buf = vec![0.0; m];
    for k in 0..nodes {
        // leader control from the mean-field costate block
        matvec_into(&ar0_inv_b0t, mf.y0_star(k), &mut u0_buf);
        for v in u0_buf.iter_mut() {
            *v = -*v;
        }
        if let Some(pert) = perturbation {
            if pert.target == PerturbTarget::Leader {
                for (v, dlt) in u0_buf.iter_mut().zip(&pert.delta[k]) {
                    *v += dlt;
                }
            }
        }
        u0_star[k].copy_from_slice(&u0_buf);

        // follower applied controls (law plus optional perturbation)
        if let Some(pert) = perturbation {
            if let PerturbTarget::Follower(j) = pert.target {
                let uj = u_series.at_mut(k, j);
                for (v, dlt) in uj.iter_mut().zip(&pert.delta[k]) {
                    *v += dlt;
                }
            }
        }

        if k < steps {
            xi_star.average_into(k, &mut xavg);
            let x0 = x0_star[k].clone();
            matvec_into(&p.a0, &x0, &mut t_a);
            matvec_into(&p.b0, &u0_buf, &mut t_b);
            matvec_into(&p.c0, &xavg, &mut t_c);
            matvec_into(&p.d0, &mf.w0_increments[k], &mut t_d);
            for c in 0..n {
                x0_star[k + 1][c] = x0[c] + dt * (t_a[c] + t_b[c] + t_c[c]) + t_d[c];
            }
            for i in 0..n_agents {
                let xs = xi_star.at(k, i).to_vec();
                matvec_into(&p.a, &xs, &mut t_a);
                matvec_into(&p.b, u_series.at(k, i), &mut t_b);
                matvec_into(&p.c, &xavg, &mut t_c);
                matvec_into(&p.f, &x0, &mut t_f);
                matvec_into(&p.d, dw.at(k, i), &mut t_d);
                let next = xi_star.at_mut(k + 1, i);
                for c in 0..n {
                    next[c] = xs[c] + dt * (t_a[c] + t_b[c] + t_c[c] + t_f[c]) + t_d[c];
                }
            }
        }
    }

    Ok(PopulationRun {
        n_agents,
        grid,
        x0_star,
        xi_star,
        xbar,
        p: p_series,
        u0_star,
        u: u_series,
        seed,
    })
}

/// Time-integrated squared mean-field approximation errors of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorFunctionals {
    /// Integral of the squared gap between the realized follower average and
    /// the mean-field state.
    pub eps1_sq: f64,
    /// Integral of the squared gap between the realized and mean-field
    /// leader states.
    pub eps2_sq: f64,
    /// Integral of the squared gap between the average costate and `k2`.
    pub eps3_sq: f64,
}

impl ErrorFunctionals {
    pub fn as_array(&self) -> [f64; 3] {
        [self.eps1_sq, self.eps2_sq, self.eps3_sq]
    }
}

fn sq_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Trapezoidal time integration of the three squared error processes.
pub fn compute_errors(run: &PopulationRun, mf: &MeanFieldPath) -> Result<ErrorFunctionals> {
    if run.grid != mf.grid {
        return Err(Error::GridMismatch(
            "population run and mean-field path grids differ".into(),
        ));
    }
    let nodes = run.grid.nodes();
    let n = mf.n;
    let mut avg = vec![0.0; n];
    let mut e1 = vec![0.0; nodes];
    let mut e2 = vec![0.0; nodes];
    let mut e3 = vec![0.0; nodes];
    for k in 0..nodes {
        run.xi_star.average_into(k, &mut avg);
        e1[k] = sq_norm_diff(&avg, mf.x_hat(k));
        e2[k] = sq_norm_diff(&run.x0_star[k], mf.x_bar0(k));
        run.p.average_into(k, &mut avg);
        e3[k] = sq_norm_diff(&avg, mf.k2(k));
    }
    Ok(ErrorFunctionals {
        eps1_sq: trapezoid(&run.grid, &e1),
        eps2_sq: trapezoid(&run.grid, &e2),
        eps3_sq: trapezoid(&run.grid, &e3),
    })
}

/// Monte Carlo aggregate of [`ErrorFunctionals`] over independent runs.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub n_agents: usize,
    pub runs: Vec<ErrorFunctionals>,
    pub mean: [f64; 3],
    pub se: [f64; 3],
}

impl ErrorReport {
    pub fn aggregate(n_agents: usize, runs: Vec<ErrorFunctionals>) -> Self {
        let mut mean = [0.0; 3];
        let mut se = [0.0; 3];
        for j in 0..3 {
            let vals: Vec<f64> = runs.iter().map(|r| r.as_array()[j]).collect();
            let (m, s) = mean_and_se(&vals);
            mean[j] = m;
            se[j] = s;
        }
        Self {
            n_agents,
            runs,
            mean,
            se,
        }
    }

    /// CSV with one row per run: `N,run,eps1_sq,eps2_sq,eps3_sq`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "N,run,eps1_sq,eps2_sq,eps3_sq")?;
        for (r, e) in self.runs.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{}",
                self.n_agents,
                r,
                fmt(e.eps1_sq),
                fmt(e.eps2_sq),
                fmt(e.eps3_sq)
            )?;
        }
        Ok(())
    }
}

/// Social cost decomposition of one run.
#[derive(Debug, Clone, Copy)]
pub struct CostReport {
    pub j0: f64,
    pub ji_sum: f64,
    pub j_soc: f64,
    pub per_agent: f64,
}

fn quad_form(m: &Matrix, v: &[f64]) -> f64 {
    let mv = m.matvec(v);
    v.iter().zip(&mv).map(|(a, b)| a * b).sum()
}

/// Trapezoidal quadrature of the running costs along the realized states and
/// applied controls, plus the terminal terms.
pub fn evaluate_social_cost(run: &PopulationRun, p: &ModelParams) -> CostReport {
    let nodes = run.grid.nodes();
    let n = p.state_dim();
    let n_agents = run.n_agents;
    let mut avg = vec![0.0; n];
    let mut dev = vec![0.0; n];

    let mut j0_samples = vec![0.0; nodes];
    let mut ji_samples = vec![vec![0.0; nodes]; n_agents];

    let leader_dev = |x0: &[f64], avg: &[f64], theta: &Matrix, eta: &[f64], dev: &mut [f64]| {
        let tv = theta.matvec(avg);
        for c in 0..dev.len() {
            dev[c] = x0[c] - tv[c] - eta[c];
        }
    };
    let follower_dev = |xi: &[f64],
                        avg: &[f64],
                        x0: &[f64],
                        theta: &Matrix,
                        theta1: &Matrix,
                        eta: &[f64],
                        dev: &mut [f64]| {
        let tv = theta.matvec(avg);
        let t1v = theta1.matvec(x0);
        for c in 0..dev.len() {
            dev[c] = xi[c] - tv[c] - t1v[c] - eta[c];
        }
    };

    for k in 0..nodes {
        run.xi_star.average_into(k, &mut avg);
        leader_dev(&run.x0_star[k], &avg, &p.theta0, &p.eta0, &mut dev);
        j0_samples[k] = quad_form(&p.q0, &dev) + quad_form(&p.r0, &run.u0_star[k]);
        for (i, samples) in ji_samples.iter_mut().enumerate() {
            follower_dev(
                run.xi_star.at(k, i),
                &avg,
                &run.x0_star[k],
                &p.theta,
                &p.theta1,
                &p.eta,
                &mut dev,
            );
            samples[k] = quad_form(&p.q, &dev) + quad_form(&p.r, run.u.at(k, i));
        }
    }

    let last = nodes - 1;
    run.xi_star.average_into(last, &mut avg);
    leader_dev(
        &run.x0_star[last],
        &avg,
        &p.theta_hat0,
        &p.eta_hat0,
        &mut dev,
    );
    let j0 = trapezoid(&run.grid, &j0_samples) + quad_form(&p.g0, &dev);

    let mut ji_sum = 0.0;
    for (i, samples) in ji_samples.iter().enumerate() {
        follower_dev(
            run.xi_star.at(last, i),
            &avg,
            &run.x0_star[last],
            &p.theta_hat,
            &p.theta_hat1,
            &p.eta_hat,
            &mut dev,
        );
        ji_sum += trapezoid(&run.grid, samples) + quad_form(&p.g, &dev);
    }

    let j_soc = p.alpha * n_agents as f64 * j0 + ji_sum;
    CostReport {
        j0,
        ji_sum,
        j_soc,
        per_agent: j_soc / n_agents as f64,
    }
}

/// CSV with one row per run: `N,J0,Ji_sum,J_soc,per_agent`.
pub fn write_costs_csv<W: Write>(
    mut w: W,
    n_agents: usize,
    costs: &[CostReport],
) -> std::io::Result<()> {
    writeln!(w, "N,J0,Ji_sum,J_soc,per_agent")?;
    for c in costs {
        writeln!(
            w,
            "{},{},{},{},{}",
            n_agents,
            fmt(c.j0),
            fmt(c.ji_sum),
            fmt(c.j_soc),
            fmt(c.per_agent)
        )?;
    }
    Ok(())
}

impl PopulationRun {
    /// Trajectory CSV: `t,agent_id,x_0..`; agent 0 is the leader, agents
    /// `1..=N` are the followers.
    pub fn write_trajectories_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.x0_star[0].len();
        write!(w, "t,agent_id")?;
        for c in 0..n {
            write!(w, ",x_{c}")?;
        }
        writeln!(w)?;
        for k in 0..self.grid.nodes() {
            let t = fmt(self.grid.time(k));
            write!(w, "{t},0")?;
            for v in &self.x0_star[k] {
                write!(w, ",{}", fmt(*v))?;
            }
            writeln!(w)?;
            for i in 0..self.n_agents {
                write!(w, "{t},{}", i + 1)?;
                for v in self.xi_star.at(k, i) {
                    write!(w, ",{}", fmt(*v))?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::solve_system;
    use crate::assembly::assemble_blocks;
    use crate::model::{compute_xi_terms, validate_params, ModelParams, DEFAULT_DELTA};
    use crate::riccati::solve_coupling;

    fn solved(p: ModelParams, steps: usize) -> crate::analysis::SolvedSystem {
        let grid = TimeGrid::new(p.horizon, steps).unwrap();
        solve_system(p, &grid).unwrap()
    }

    #[test]
    fn zero_dynamics_stay_at_zero() {
        let mut p = ModelParams::scalar_benchmark();
        p.d0 = Matrix::scalar(0.0);
        p.xi0_mean = vec![0.0];
        p.xi0_std = vec![0.0];
        p.xi_hat = vec![0.0];
        let sys = solved(p, 60);
        let mf =
            sample_mean_field_path(&sys.blocks, &sys.coupling, &sys.params, &sys.grid(), 7)
                .unwrap();
        for node in &mf.x {
            assert!(node.iter().all(|v| *v == 0.0));
        }
        for node in &mf.y {
            assert!(node.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn decoupling_identity_holds_exactly() {
        let sys = solved(ModelParams::scalar_benchmark(), 80);
        let mf =
            sample_mean_field_path(&sys.blocks, &sys.coupling, &sys.params, &sys.grid(), 123)
                .unwrap();
        for k in 0..sys.grid().nodes() {
            let mut expect = sys.coupling.k_at_node(k).matvec(&mf.x[k]);
            let gx = sys.blocks.g_bb.matvec(&mf.x[k]);
            for (i, e) in expect.iter_mut().enumerate() {
                *e += gx[i] + sys.coupling.kappa_at_node(k)[i];
            }
            assert_eq!(mf.y[k], expect);
        }
    }

    #[test]
    fn mean_of_sampled_paths_matches_deterministic_limit() {
        let p = validate_params(ModelParams::scalar_benchmark(), DEFAULT_DELTA).unwrap();
        let grid = TimeGrid::new(p.horizon, 400).unwrap();
        let xi = compute_xi_terms(&p);
        let bs = assemble_blocks(&p, &xi);
        let cs = solve_coupling(&bs, &grid).unwrap();

        // deterministic limit: same march with all noise sources removed
        let mut det = p.clone();
        det.xi0_std = vec![0.0];
        let xi_d = compute_xi_terms(&det);
        let mut bs_d = assemble_blocks(&det, &xi_d);
        bs_d.d_bb = Matrix::zeros(bs_d.dim(), det.noise_dim());
        let reference = sample_mean_field_path(&bs_d, &cs, &det, &grid, 0).unwrap();

        let paths = 10_000u64;
        let last = grid.nodes() - 1;
        let mut samples: Vec<Vec<f64>> =
            (0..5).map(|_| Vec::with_capacity(paths as usize)).collect();
        for seed in 0..paths {
            let mf = sample_mean_field_path(&bs, &cs, &p, &grid, seed).unwrap();
            for (bucket, value) in samples.iter_mut().zip(&mf.x[last]) {
                bucket.push(*value);
            }
        }
        for (c, bucket) in samples.iter().enumerate() {
            let (mean, se) = mean_and_se(bucket);
            let gap = (mean - reference.x[last][c]).abs();
            assert!(
                gap <= 3.0 * se.max(1e-12),
                "component {c}: gap {gap} exceeds 3 se {se}"
            );
        }
    }

    #[test]
    fn deterministic_followers_collapse_to_the_mean_field() {
        let mut p = ModelParams::scalar_benchmark();
        p.d = Matrix::scalar(0.0);
        p.xi_std = vec![0.0];
        let sys = solved(p, 200);
        let mf =
            sample_mean_field_path(&sys.blocks, &sys.coupling, &sys.params, &sys.grid(), 5)
                .unwrap();
        let run =
            simulate_population(&mf, &sys.follower, &sys.coupling, &sys.params, 7, 5).unwrap();
        let e = compute_errors(&run, &mf).unwrap();
        // identical dynamics expressed through different arithmetic leave
        // only rounding-level residue
        assert!(e.eps1_sq <= 1e-20, "eps1 {}", e.eps1_sq);
        assert!(e.eps2_sq <= 1e-20, "eps2 {}", e.eps2_sq);
        assert!(e.eps3_sq <= 1e-20, "eps3 {}", e.eps3_sq);
    }

    #[test]
    fn single_agent_cannot_average_out_noise() {
        let sys = solved(ModelParams::scalar_benchmark(), 120);
        for seed in 0..100 {
            let mf = sample_mean_field_path(
                &sys.blocks,
                &sys.coupling,
                &sys.params,
                &sys.grid(),
                seed,
            )
            .unwrap();
            let run =
                simulate_population(&mf, &sys.follower, &sys.coupling, &sys.params, 1, seed)
                    .unwrap();
            let e = compute_errors(&run, &mf).unwrap();
            assert!(e.eps1_sq > 0.0, "seed {seed}");
        }
    }

    #[test]
    fn realized_trajectories_stay_bounded() {
        let sys = solved(ModelParams::scalar_benchmark(), 600);
        let mut sups = Vec::new();
        for seed in [1u64, 2, 3] {
            let mf = sample_mean_field_path(
                &sys.blocks,
                &sys.coupling,
                &sys.params,
                &sys.grid(),
                seed,
            )
            .unwrap();
            let run =
                simulate_population(&mf, &sys.follower, &sys.coupling, &sys.params, 100, seed)
                    .unwrap();
            let sup = run
                .xi_star
                .raw()
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(sup.is_finite() && sup < 100.0, "sup {sup}");
            sups.push(sup);
        }
        let lo = sups.iter().fold(f64::INFINITY, |a, b| a.min(*b));
        let hi = sups.iter().fold(0.0f64, |a, b| a.max(*b));
        assert!(hi / lo < 10.0, "seed instability: {sups:?}");
    }

    #[test]
    fn control_identities_hold_at_every_node() {
        let sys = solved(ModelParams::scalar_benchmark(), 100);
        let p = &sys.params;
        let mf =
            sample_mean_field_path(&sys.blocks, &sys.coupling, p, &sys.grid(), 99).unwrap();
        let run = simulate_population(&mf, &sys.follower, &sys.coupling, p, 5, 99).unwrap();
        let r_inv_bt = p.r.lu().unwrap().solve_matrix(&p.b.transpose()).unwrap();
        let ar0_inv_b0t = p
            .r0
            .scale(p.alpha)
            .lu()
            .unwrap()
            .solve_matrix(&p.b0.transpose())
            .unwrap();
        for k in 0..sys.grid().nodes() {
            let expect_u0: Vec<f64> = ar0_inv_b0t
                .matvec(mf.y0_star(k))
                .iter()
                .map(|v| -v)
                .collect();
            assert_eq!(run.u0_star[k], expect_u0);
            for i in 0..run.n_agents {
                let expect_ui: Vec<f64> = r_inv_bt
                    .matvec(run.p.at(k, i))
                    .iter()
                    .map(|v| -v)
                    .collect();
                assert_eq!(run.u.at(k, i), &expect_ui[..]);
            }
        }
    }

    #[test]
    fn runs_are_bitwise_deterministic() {
        let sys = solved(ModelParams::scalar_benchmark(), 150);
        let bits = |seed: u64| -> Vec<u64> {
            let mf = sample_mean_field_path(
                &sys.blocks,
                &sys.coupling,
                &sys.params,
                &sys.grid(),
                seed,
            )
            .unwrap();
            let run =
                simulate_population(&mf, &sys.follower, &sys.coupling, &sys.params, 9, seed)
                    .unwrap();
            run.xi_star
                .raw()
                .iter()
                .chain(run.p.raw())
                .chain(run.u.raw())
                .map(|v| v.to_bits())
                .collect()
        };
        assert_eq!(bits(31), bits(31));
        assert_ne!(bits(31), bits(32));
    }

    #[test]
    fn mean_field_consistency_improves_with_population_size() {
        // E || xbar^(N) - x_hat ||^2 at t = T decreases in N (common random
        // numbers across N by stream construction)
        let sys = solved(ModelParams::scalar_benchmark(), 200);
        let runs = 200u64;
        let last = sys.grid().nodes() - 1;
        let mut prev = f64::INFINITY;
        for n_agents in [10usize, 40, 160] {
            let mut vals = Vec::with_capacity(runs as usize);
            for run_idx in 0..runs {
                let seed = rng::derive_run_seed(4242, run_idx);
                let mf = sample_mean_field_path(
                    &sys.blocks,
                    &sys.coupling,
                    &sys.params,
                    &sys.grid(),
                    seed,
                )
                .unwrap();
                let run = simulate_population(
                    &mf,
                    &sys.follower,
                    &sys.coupling,
                    &sys.params,
                    n_agents,
                    seed,
                )
                .unwrap();
                let mut avg = vec![0.0; 1];
                run.xbar.average_into(last, &mut avg);
                vals.push(sq_norm_diff(&avg, mf.x_hat(last)));
            }
            let (mean, _) = mean_and_se(&vals);
            assert!(mean < prev, "consistency gap grew at N={n_agents}");
            prev = mean;
        }
    }

    #[test]
    fn homogeneous_data_has_zero_social_cost() {
        let mut p = ModelParams::scalar_benchmark();
        p.d = Matrix::scalar(0.0);
        p.d0 = Matrix::scalar(0.0);
        p.xi0_mean = vec![0.0];
        p.xi0_std = vec![0.0];
        p.xi_hat = vec![0.0];
        p.xi_std = vec![0.0];
        let sys = solved(p, 60);
        let mf =
            sample_mean_field_path(&sys.blocks, &sys.coupling, &sys.params, &sys.grid(), 3)
                .unwrap();
        let run =
            simulate_population(&mf, &sys.follower, &sys.coupling, &sys.params, 4, 3).unwrap();
        let cost = evaluate_social_cost(&run, &sys.params);
        assert_eq!(cost.j_soc, 0.0);
        assert_eq!(cost.per_agent, 0.0);
    }

    #[test]
    fn costs_are_nonnegative() {
        let sys = solved(ModelParams::scalar_benchmark(), 150);
        for seed in [11u64, 12, 13] {
            let mf = sample_mean_field_path(
                &sys.blocks,
                &sys.coupling,
                &sys.params,
                &sys.grid(),
                seed,
            )
            .unwrap();
            let run =
                simulate_population(&mf, &sys.follower, &sys.coupling, &sys.params, 8, seed)
                    .unwrap();
            let cost = evaluate_social_cost(&run, &sys.params);
            assert!(cost.j0 >= 0.0);
            assert!(cost.ji_sum >= 0.0);
            assert!(cost.j_soc >= 0.0);
        }
    }

    #[test]
    fn cost_quadrature_matches_hand_computation() {
        // three-step grid, hand-set piecewise-linear states, scalar model
        let p = validate_params(ModelParams::scalar_benchmark(), DEFAULT_DELTA).unwrap();
        let grid = TimeGrid::new(p.horizon, 3).unwrap();
        let nodes = 4;
        let n_agents = 2;
        let mut run = PopulationRun {
            n_agents,
            grid,
            x0_star: vec![vec![0.0]; nodes],
            xi_star: AgentSeries::zeros(nodes, n_agents, 1),
            xbar: AgentSeries::zeros(nodes, n_agents, 1),
            p: AgentSeries::zeros(nodes, n_agents, 1),
            u0_star: vec![vec![0.0]; nodes],
            u: AgentSeries::zeros(nodes, n_agents, 1),
            seed: 0,
        };
        for k in 0..nodes {
            let t = k as f64;
            run.x0_star[k][0] = 1.0 + 0.5 * t;
            run.u0_star[k][0] = 0.25 * t;
            run.xi_star.at_mut(k, 0)[0] = 2.0 - t;
            run.xi_star.at_mut(k, 1)[0] = -1.0 + 0.5 * t;
            run.u.at_mut(k, 0)[0] = 0.1;
            run.u.at_mut(k, 1)[0] = -0.2 * t;
        }
        let got = evaluate_social_cost(&run, &p);

        // direct summation with explicit trapezoid weights
        let dt = grid.dt();
        let w = [0.5 * dt, dt, dt, 0.5 * dt];
        let mut j0 = 0.0;
        let mut ji = [0.0, 0.0];
        for (k, wk) in w.iter().enumerate() {
            let t = k as f64;
            let avg = 0.5 * ((2.0 - t) + (-1.0 + 0.5 * t));
            let x0 = 1.0 + 0.5 * t;
            let dev0 = x0 - 1.0 * avg;
            j0 += wk * (1.0 * dev0 * dev0 + 10.0 * (0.25 * t) * (0.25 * t));
            let xi = [2.0 - t, -1.0 + 0.5 * t];
            let ui = [0.1, -0.2 * t];
            for i in 0..2 {
                let dev = xi[i] - 0.1 * avg - 1.0 * x0;
                ji[i] += wk * (0.9 * dev * dev + 15.0 * ui[i] * ui[i]);
            }
        }
        let expect_j_soc = 1.02 * 2.0 * j0 + ji[0] + ji[1];
        assert!((got.j0 - j0).abs() < 1e-12);
        assert!((got.j_soc - expect_j_soc).abs() < 1e-12);
    }

    #[test]
    fn common_random_numbers_halve_errors_when_n_doubles() {
        let sys = solved(ModelParams::scalar_benchmark(), 300);
        let runs = 50u64;
        let mut means = Vec::new();
        for n_agents in [25usize, 50] {
            let mut triples = Vec::new();
            for run_idx in 0..runs {
                let seed = rng::derive_run_seed(777, run_idx);
                let mf = sample_mean_field_path(
                    &sys.blocks,
                    &sys.coupling,
                    &sys.params,
                    &sys.grid(),
                    seed,
                )
                .unwrap();
                let run = simulate_population(
                    &mf,
                    &sys.follower,
                    &sys.coupling,
                    &sys.params,
                    n_agents,
                    seed,
                )
                .unwrap();
                triples.push(compute_errors(&run, &mf).unwrap());
            }
            let report = ErrorReport::aggregate(n_agents, triples);
            means.push(report.mean);
        }
        for (j, (a, b)) in means[0].iter().zip(&means[1]).enumerate() {
            let ratio = a / b;
            assert!(
                (1.5..=2.8).contains(&ratio),
                "error {j} shrink ratio {ratio}"
            );
        }
    }

    #[test]
    fn mismatched_grids_and_empty_population_are_rejected() {
        let sys = solved(ModelParams::scalar_benchmark(), 100);
        let mf =
            sample_mean_field_path(&sys.blocks, &sys.coupling, &sys.params, &sys.grid(), 1)
                .unwrap();
        assert!(matches!(
            simulate_population(&mf, &sys.follower, &sys.coupling, &sys.params, 0, 1),
            Err(Error::InvalidArgument(_))
        ));
        let other_grid = TimeGrid::new(sys.params.horizon, 50).unwrap();
        let cs2 = solve_coupling(&sys.blocks, &other_grid).unwrap();
        assert!(matches!(
            sample_mean_field_path(&sys.blocks, &cs2, &sys.params, &sys.grid(), 1),
            Err(Error::GridMismatch(_))
        ));
    }
}
