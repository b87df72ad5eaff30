//! Proximal Jacobian ADMM driver.
//!
//! Each iteration updates every block from the previous iterate (so the
//! blocks can run in any order or in parallel), then ascends all multipliers
//! with step `gamma * rho`. Iteration stops once the augmented Lagrangian
//! changes by less than `eta` between consecutive iterates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, DualState, PrimalState, ResidualReport, Scenario};
use crate::subproblems::{self, PowerBandwidthBlock, WorkBuffers};
use crate::tensor::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmParams {
    /// Penalty weight of the augmented Lagrangian.
    pub rho: f64,
    /// Dual step multiplier, in (0, 2).
    pub gamma: f64,
    /// Proximal weight.
    pub tau: f64,
    /// Stop when the augmented Lagrangian changes by less than this.
    pub eta: f64,
    pub max_iter: usize,
    /// Use the literal `(0, 0)` fallback for the power/bandwidth block
    /// instead of the exact `p = 0` restricted minimizer.
    pub strict_paper_problem1: bool,
    /// Additionally require every constraint residual below
    /// `residual_stop_tol` before stopping.
    pub require_feasible_stop: bool,
    pub residual_stop_tol: f64,
    /// Tolerance used for the `feasible` flag of the final report.
    pub report_tol: f64,
    pub root_tol: f64,
    pub root_max_iter: usize,
    /// Run the block updates of a sweep on the rayon pool.
    pub parallel: bool,
}

impl Default for AdmmParams {
    fn default() -> Self {
        AdmmParams {
            rho: 1e-3,
            gamma: 1.0,
            tau: 0.5,
            eta: 1e-6,
            max_iter: 500_000,
            strict_paper_problem1: false,
            require_feasible_stop: false,
            residual_stop_tol: 1e-6,
            report_tol: 1e-3,
            root_tol: 1e-10,
            root_max_iter: 200,
            parallel: false,
        }
    }
}

impl AdmmParams {
    /// The same parameters with the residual gate switched on at `tol`.
    pub fn with_residual_stop(self, tol: f64) -> Self {
        AdmmParams {
            require_feasible_stop: true,
            residual_stop_tol: tol,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidParams(format!("rho = {} must be positive", self.rho)));
        }
        if !(self.gamma > 0.0 && self.gamma < 2.0) {
            return Err(Error::InvalidParams(format!("gamma = {} must lie in (0, 2)", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParams(format!("tau = {} must be positive", self.tau)));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidParams(format!("eta = {} must be positive", self.eta)));
        }
        if self.require_feasible_stop && !(self.residual_stop_tol > 0.0) {
            return Err(Error::InvalidParams(format!(
                "residual_stop_tol = {} must be positive",
                self.residual_stop_tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParams("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// How the bandwidth block is treated.
#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthPolicy {
    /// Optimized jointly with transmit energy.
    Optimize,
    /// Held at the given shares; the bandwidth multiplier is never updated.
    Fixed(Grid),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub theorem1_satisfied: bool,
    pub residuals: ResidualReport,
    pub params: AdmmParams,
    pub primal: PrimalState,
    pub dual: DualState,
    #[serde(default)]
    pub psi_trace: Vec<f64>,
}

/// Sufficient convergence condition `tau > 4 K rho ((9NK + N^2 K)/(2 - gamma) - 1)`.
///
/// A `false` result is only a warning; the condition is not necessary.
pub fn validate_params(params: &AdmmParams, sc: &Scenario) -> bool {
    params.tau > tau_threshold(params, sc)
}

pub fn tau_threshold(params: &AdmmParams, sc: &Scenario) -> f64 {
    let n = sc.n_users as f64;
    let k = sc.n_slots as f64;
    let blocks = 9.0 * n * k + n * n * k;
    4.0 * k * params.rho * (blocks / (2.0 - params.gamma) - 1.0)
}

/// Equality-constraint residuals of the slack-augmented problem.
struct ConstraintResiduals {
    battery_low: Grid,
    battery_high: Grid,
    balance: Grid,
    cap: Grid,
    usage: Grid,
    bandwidth: Vec<f64>,
}

fn constraint_residuals(sc: &Scenario, x: &PrimalState, buf: &WorkBuffers) -> ConstraintResiduals {
    let (nn, kk) = (sc.n_users, sc.n_slots);
    let eff = sc.transfer_efficiency;
    let mut out = ConstraintResiduals {
        battery_low: Grid::zeros(nn, kk),
        battery_high: Grid::zeros(nn, kk),
        balance: Grid::zeros(nn, kk),
        cap: Grid::zeros(nn, kk),
        usage: Grid::zeros(nn, kk),
        bandwidth: buf.bandwidth_total.iter().map(|t| t - 1.0).collect(),
    };
    for n in 0..nn {
        for k in 0..kk {
            let q = buf.residual[(n, k)];
            out.battery_low[(n, k)] = q + x.u1[(n, k)];
            out.battery_high[(n, k)] = q - x.u2[(n, k)] + sc.battery_cap[n];
            out.balance[(n, k)] = x.p[(n, k)] - x.l[(n, k)] - x.s[(n, k)] - x.g[(n, k)];
            out.cap[(n, k)] = x.p[(n, k)] + x.u3[(n, k)] - sc.power_cap[n];
            out.usage[(n, k)] = x.s[(n, k)] + x.u4[(n, k)] - eff * buf.incoming_sum[(n, k)];
        }
    }
    out
}

/// Augmented Lagrangian; `+inf` when any variable is negative.
pub fn augmented_lagrangian(sc: &Scenario, x: &PrimalState, y: &DualState, rho: f64) -> f64 {
    let buf = subproblems::rebuild_buffers(x, sc);
    psi_from(sc, x, y, rho, &constraint_residuals(sc, x, &buf))
}

fn psi_from(sc: &Scenario, x: &PrimalState, y: &DualState, rho: f64, c: &ConstraintResiduals) -> f64 {
    if !x.is_nonnegative() {
        return f64::INFINITY;
    }
    let Ok(utility) = model::objective(sc, x) else {
        return f64::NAN;
    };
    let mut linear = 0.0;
    let mut penalty = 0.0;
    let pairs = [
        (&y.y1, &c.battery_low),
        (&y.y2, &c.battery_high),
        (&y.y3, &c.balance),
        (&y.y4, &c.cap),
        (&y.y5, &c.usage),
    ];
    for (dual, res) in pairs {
        for (yv, rv) in dual.iter().zip(res.iter()) {
            linear += yv * rv;
            penalty += rv * rv;
        }
    }
    for (yv, rv) in y.y6.iter().zip(&c.bandwidth) {
        linear += yv * rv;
        penalty += rv * rv;
    }
    -utility + linear + 0.5 * rho * penalty
}

/// Largest absolute equality residual of the slack-augmented constraints.
pub fn max_equality_residual(sc: &Scenario, x: &PrimalState) -> f64 {
    let buf = subproblems::rebuild_buffers(x, sc);
    constraint_residuals(sc, x, &buf).max_abs()
}

impl ConstraintResiduals {
    fn max_abs(&self) -> f64 {
        [&self.battery_low, &self.battery_high, &self.balance, &self.cap, &self.usage]
            .iter()
            .flat_map(|g| g.iter())
            .chain(self.bandwidth.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// New values for every block owned by one node: its own `(n, k)` variables
/// and the donations it sends.
struct NodeUpdate {
    p: Vec<f64>,
    a: Vec<f64>,
    l: Vec<f64>,
    s: Vec<f64>,
    g: Vec<f64>,
    d: Vec<f64>,
    u: Vec<(f64, f64, f64, f64)>,
    /// `r[n][to][k]` laid out as `to * K + k`.
    r_out: Vec<f64>,
}

fn update_node(
    prev: &PrimalState,
    y: &DualState,
    sc: &Scenario,
    params: &AdmmParams,
    buf: &WorkBuffers,
    policy: &BandwidthPolicy,
    n: usize,
) -> Result<NodeUpdate> {
    let kk = sc.n_slots;
    let mut out = NodeUpdate {
        p: Vec::with_capacity(kk),
        a: Vec::with_capacity(kk),
        l: Vec::with_capacity(kk),
        s: Vec::with_capacity(kk),
        g: Vec::with_capacity(kk),
        d: Vec::with_capacity(kk),
        u: Vec::with_capacity(kk),
        r_out: vec![0.0; sc.n_users * kk],
    };
    for k in 0..kk {
        let (p, a) = match policy {
            BandwidthPolicy::Optimize => subproblems::update_pa(prev, y, sc, params, n, k)?,
            BandwidthPolicy::Fixed(shares) => {
                let blk = PowerBandwidthBlock::assemble(prev, y, sc, params, n, k);
                let a = shares[(n, k)];
                (subproblems::solve_power_fixed_bandwidth(&blk, a), a)
            }
        };
        out.p.push(p);
        out.a.push(a);
        out.l.push(subproblems::update_l(prev, y, sc, params, buf, n, k));
        out.s.push(subproblems::update_s(prev, y, sc, params, buf, n, k));
        out.g.push(subproblems::update_g(prev, y, sc, params, n, k));
        out.d.push(subproblems::update_d(prev, y, sc, params, buf, n, k));
        out.u.push(subproblems::update_u(prev, y, sc, params, buf, n, k));
        for to in (0..sc.n_users).filter(|&to| to != n) {
            out.r_out[to * kk + k] = subproblems::update_r(prev, y, sc, params, buf, n, to, k)?;
        }
    }
    Ok(out)
}

/// One Jacobi sweep over all blocks.
pub fn sweep(prev: &PrimalState, y: &DualState, sc: &Scenario, params: &AdmmParams) -> Result<PrimalState> {
    sweep_with_policy(prev, y, sc, params, &BandwidthPolicy::Optimize)
}

pub fn sweep_with_policy(
    prev: &PrimalState,
    y: &DualState,
    sc: &Scenario,
    params: &AdmmParams,
    policy: &BandwidthPolicy,
) -> Result<PrimalState> {
    let buf = subproblems::rebuild_buffers(prev, sc);
    sweep_buffered(prev, y, sc, params, policy, &buf)
}

fn sweep_buffered(
    prev: &PrimalState,
    y: &DualState,
    sc: &Scenario,
    params: &AdmmParams,
    policy: &BandwidthPolicy,
    buf: &WorkBuffers,
) -> Result<PrimalState> {
    let nodes: Vec<NodeUpdate> = if params.parallel {
        (0..sc.n_users)
            .into_par_iter()
            .map(|n| update_node(prev, y, sc, params, buf, policy, n))
            .collect::<Result<_>>()?
    } else {
        (0..sc.n_users)
            .map(|n| update_node(prev, y, sc, params, buf, policy, n))
            .collect::<Result<_>>()?
    };
    let kk = sc.n_slots;
    let mut next = PrimalState::for_scenario(sc);
    for (n, upd) in nodes.into_iter().enumerate() {
        next.p.row_mut(n).copy_from_slice(&upd.p);
        next.a.row_mut(n).copy_from_slice(&upd.a);
        next.l.row_mut(n).copy_from_slice(&upd.l);
        next.s.row_mut(n).copy_from_slice(&upd.s);
        next.g.row_mut(n).copy_from_slice(&upd.g);
        next.d.row_mut(n).copy_from_slice(&upd.d);
        for (k, &(u1, u2, u3, u4)) in upd.u.iter().enumerate() {
            next.u1[(n, k)] = u1;
            next.u2[(n, k)] = u2;
            next.u3[(n, k)] = u3;
            next.u4[(n, k)] = u4;
        }
        for to in (0..sc.n_users).filter(|&to| to != n) {
            next.r
                .lane_mut(n, to)
                .copy_from_slice(&upd.r_out[to * kk..(to + 1) * kk]);
        }
    }
    Ok(next)
}

/// Multiplier ascent with step `gamma * rho`, evaluated at the new iterate.
pub fn dual_update(y: &DualState, x_next: &PrimalState, sc: &Scenario, params: &AdmmParams) -> DualState {
    let buf = subproblems::rebuild_buffers(x_next, sc);
    let c = constraint_residuals(sc, x_next, &buf);
    ascend_duals(y, &c, params, &BandwidthPolicy::Optimize)
}

fn ascend_duals(y: &DualState, c: &ConstraintResiduals, params: &AdmmParams, policy: &BandwidthPolicy) -> DualState {
    let step = params.gamma * params.rho;
    let ascend = |dual: &Grid, res: &Grid| {
        let mut out = dual.clone();
        for (o, r) in out.as_mut_slice().iter_mut().zip(res.iter()) {
            *o += step * r;
        }
        out
    };
    let y6 = match policy {
        BandwidthPolicy::Optimize => y
            .y6
            .iter()
            .zip(&c.bandwidth)
            .map(|(v, r)| v + step * r)
            .collect(),
        BandwidthPolicy::Fixed(_) => y.y6.clone(),
    };
    DualState {
        y1: ascend(&y.y1, &c.battery_low),
        y2: ascend(&y.y2, &c.battery_high),
        y3: ascend(&y.y3, &c.balance),
        y4: ascend(&y.y4, &c.cap),
        y5: ascend(&y.y5, &c.usage),
        y6,
    }
}

/// Runs the ADMM loop from `init` (all zeros when `None`).
pub fn solve(
    sc: &Scenario,
    params: &AdmmParams,
    init: Option<(PrimalState, DualState)>,
) -> Result<SolveReport> {
    solve_with_policy(sc, params, &BandwidthPolicy::Optimize, init)
}

pub fn solve_with_policy(
    sc: &Scenario,
    params: &AdmmParams,
    policy: &BandwidthPolicy,
    init: Option<(PrimalState, DualState)>,
) -> Result<SolveReport> {
    sc.validate()?;
    params.validate()?;
    let (mut x, mut y) = match init {
        Some((x, y)) => {
            x.check_dims(sc)?;
            if y.y1.shape() != (sc.n_users, sc.n_slots) || y.y6.len() != sc.n_slots {
                return Err(Error::Dimension {
                    what: "initial duals",
                    expected: format!("{}x{}", sc.n_users, sc.n_slots),
                    found: format!("{}x{}", y.y1.rows(), y.y1.cols()),
                });
            }
            (x, y)
        }
        None => (PrimalState::for_scenario(sc), DualState::for_scenario(sc)),
    };
    if let BandwidthPolicy::Fixed(shares) = policy {
        if shares.shape() != (sc.n_users, sc.n_slots) {
            return Err(Error::Dimension {
                what: "fixed bandwidth shares",
                expected: format!("{}x{}", sc.n_users, sc.n_slots),
                found: format!("{}x{}", shares.rows(), shares.cols()),
            });
        }
        x.a = shares.clone();
    }

    let mut buf = subproblems::rebuild_buffers(&x, sc);
    let mut psi_prev = psi_from(sc, &x, &y, params.rho, &constraint_residuals(sc, &x, &buf));
    let mut trace = vec![psi_prev];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iter {
        x = sweep_buffered(&x, &y, sc, params, policy, &buf)?;
        buf = subproblems::rebuild_buffers(&x, sc);
        let c = constraint_residuals(sc, &x, &buf);
        y = ascend_duals(&y, &c, params, policy);
        iterations += 1;
        let psi = psi_from(sc, &x, &y, params.rho, &c);
        trace.push(psi);
        let settled = (psi - psi_prev).abs() < params.eta;
        psi_prev = psi;
        if settled && (!params.require_feasible_stop || c.max_abs() < params.residual_stop_tol) {
            converged = true;
            break;
        }
    }

    Ok(SolveReport {
        objective: model::objective(sc, &x)?,
        iterations,
        converged,
        theorem1_satisfied: validate_params(params, sc),
        residuals: model::feasibility(sc, &x, params.report_tol),
        params: *params,
        primal: x,
        dual: y,
        psi_trace: trace,
    })
}
