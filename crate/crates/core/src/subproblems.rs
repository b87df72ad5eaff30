//! Proximal block updates of one Jacobi sweep.
//!
//! Every update minimizes the augmented Lagrangian restricted to one block
//! plus the proximal term `tau/2 (x - x_prev)^2`, reading all other blocks
//! from the previous iterate. All blocks except `(p, a)` are clipped affine
//! maps; `(p, a)` reduces to a monotone scalar equation in `p`.
//!
//! Notation used below, for node `n` and slot `v`:
//!
//! ```text
//! Q[n][v] = sum_{t<=v} (l + out - eff*in + s + d)[n][t] - E[n][v]
//! ```
//!
//! is the cumulative battery residual, so the battery level is `-Q` and the
//! two battery equality constraints read `Q + u1 = 0`, `Q - u2 + B_max = 0`.
//! The "partial" residuals of the block formulas are `Q` with the updated
//! variable's own contribution removed.

use crate::admm::AdmmParams;
use crate::error::{Error, Result};
use crate::model::{DualState, PrimalState, Scenario};
use crate::tensor::Grid;

/// Per-sweep sums derived from the previous iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkBuffers {
    /// `E[n][k]`, cumulative harvest.
    pub cum_harvest: Grid,
    /// `Q[n][k]`, the cumulative battery residual.
    pub residual: Grid,
    /// `sum_{v >= k} Q[n][v]`.
    pub residual_tail: Grid,
    /// `sum_{v >= k} u1[n][v]`.
    pub u1_tail: Grid,
    /// `sum_{v >= k} u2[n][v]`.
    pub u2_tail: Grid,
    /// `sum_{m != n} r[m][n][k]`.
    pub incoming_sum: Grid,
    /// `sum_{m != n} r[n][m][k]`.
    pub outgoing_sum: Grid,
    /// `sum_n a[n][k]`.
    pub bandwidth_total: Vec<f64>,
}

fn suffix_sums(g: &Grid) -> Grid {
    let mut out = g.clone();
    for n in 0..g.rows() {
        let row = out.row_mut(n);
        for k in (0..row.len().saturating_sub(1)).rev() {
            row[k] += row[k + 1];
        }
    }
    out
}

/// Builds the sweep buffers from `prev`. Cost is `O(N^2 K)`.
pub fn rebuild_buffers(prev: &PrimalState, sc: &Scenario) -> WorkBuffers {
    let (nn, kk) = (sc.n_users, sc.n_slots);
    let eff = sc.transfer_efficiency;
    let cum_harvest = sc.cumulative_harvest();
    let mut incoming_sum = Grid::zeros(nn, kk);
    let mut outgoing_sum = Grid::zeros(nn, kk);
    for m in 0..nn {
        for n in (0..nn).filter(|&n| n != m) {
            for (k, &r) in prev.r.lane(m, n).iter().enumerate() {
                outgoing_sum[(m, k)] += r;
                incoming_sum[(n, k)] += r;
            }
        }
    }
    let mut residual = Grid::zeros(nn, kk);
    for n in 0..nn {
        let mut acc = 0.0;
        for k in 0..kk {
            acc += prev.l[(n, k)] + outgoing_sum[(n, k)] - eff * incoming_sum[(n, k)]
                + prev.s[(n, k)]
                + prev.d[(n, k)];
            residual[(n, k)] = acc - cum_harvest[(n, k)];
        }
    }
    let bandwidth_total = (0..kk).map(|k| prev.a.col_sum(k)).collect();
    WorkBuffers {
        cum_harvest,
        residual_tail: suffix_sums(&residual),
        residual,
        u1_tail: suffix_sums(&prev.u1),
        u2_tail: suffix_sums(&prev.u2),
        incoming_sum,
        outgoing_sum,
        bandwidth_total,
    }
}

impl WorkBuffers {
    /// `sum_{v >= k} (Q[n][v] - own + u1[n][v])` and
    /// `sum_{v >= k} (Q[n][v] - own - u2[n][v] + B_max)`: the battery
    /// constraint residuals from slot `k` on, with a variable of size `own`
    /// that enters every one of them removed.
    fn battery_tails(&self, n: usize, k: usize, own: f64, bmax: f64) -> (f64, f64) {
        let span = (self.residual.cols() - k) as f64;
        let partial = self.residual_tail[(n, k)] - span * own;
        (
            partial + self.u1_tail[(n, k)],
            partial - self.u2_tail[(n, k)] + span * bmax,
        )
    }
}

/// `sum_{v >= k} (y1 + y2)[n][v]`.
fn dual_tail(duals: &DualState, n: usize, k: usize) -> f64 {
    (k..duals.y1.cols())
        .map(|v| duals.y1[(n, v)] + duals.y2[(n, v)])
        .sum()
}

/// Linear coefficients of the `(p, a)` block after expanding the quadratic
/// penalties; the block objective is
/// `-W a ln(1 + pH/a) + c_p p + c_a a + q_p/2 p^2 + q_a/2 a^2 + const`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerBandwidthBlock {
    pub weight: f64,
    pub gain: f64,
    pub c_p: f64,
    pub c_a: f64,
    pub q_p: f64,
    pub q_a: f64,
}

impl PowerBandwidthBlock {
    pub fn assemble(
        prev: &PrimalState,
        duals: &DualState,
        sc: &Scenario,
        params: &AdmmParams,
        n: usize,
        k: usize,
    ) -> Self {
        let (rho, tau) = (params.rho, params.tau);
        let others: f64 = (0..sc.n_users)
            .filter(|&j| j != n)
            .map(|j| prev.a[(j, k)])
            .sum();
        let supply = prev.l[(n, k)] + prev.s[(n, k)] + prev.g[(n, k)];
        PowerBandwidthBlock {
            weight: sc.weight[n],
            gain: sc.gain[(n, k)],
            c_p: duals.y3[(n, k)] + duals.y4[(n, k)] - rho * supply
                + rho * (prev.u3[(n, k)] - sc.power_cap[n])
                - tau * prev.p[(n, k)],
            c_a: duals.y6[k] + rho * (others - 1.0) - tau * prev.a[(n, k)],
            q_p: 2.0 * rho + tau,
            q_a: rho + tau,
        }
    }

    /// Block objective up to an additive constant.
    pub fn value(&self, p: f64, a: f64) -> f64 {
        -crate::model::rate_term(p, a, self.gain, self.weight)
            + self.c_p * p
            + self.c_a * a
            + 0.5 * self.q_p * p * p
            + 0.5 * self.q_a * a * a
    }

    /// Interior stationarity residual in `a` after eliminating `a` through
    /// the `p`-stationarity condition. Strictly increasing on the bracket.
    fn reduced(&self, p: f64) -> (f64, f64, f64) {
        let wh = self.weight * self.gain;
        let denom = self.c_p + self.q_p * p;
        // x = WH/denom - 1, written to avoid cancellation near denom = WH
        let x = (wh - denom) / denom;
        let a = p * self.gain / x;
        let g = -self.weight * snr_excess(x) + self.c_a + self.q_a * a;
        let dx = -wh * self.q_p / (denom * denom);
        let da = self.gain / x - p * self.gain * dx / (x * x);
        let dg = -self.weight * x / ((1.0 + x) * (1.0 + x)) * dx + self.q_a * da;
        (g, dg, a)
    }
}

/// `ln(1+x) - x/(1+x)`, the marginal rate of bandwidth at SNR `x`.
fn snr_excess(x: f64) -> f64 {
    if x < 1e-4 {
        x * x * (0.5 - x * (2.0 / 3.0 - 0.75 * x))
    } else {
        x.ln_1p() - x / (1.0 + x)
    }
}

/// Minimizer of a [`PowerBandwidthBlock`] over `p, a >= 0`. The root search
/// starts from `hint` when it lies inside the bracket.
///
/// On failure returns the last bracket.
pub fn solve_power_bandwidth(
    blk: &PowerBandwidthBlock,
    hint: Option<f64>,
    strict: bool,
    tol: f64,
    max_iter: usize,
) -> std::result::Result<(f64, f64), (f64, f64)> {
    let wh = blk.weight * blk.gain;
    let boundary = |strict: bool| {
        if strict {
            (0.0, 0.0)
        } else {
            (0.0, (-blk.c_a / blk.q_a).max(0.0))
        }
    };
    if wh <= 0.0 {
        if strict {
            return Ok((0.0, 0.0));
        }
        // the rate term vanishes and the block separates
        return Ok(((-blk.c_p / blk.q_p).max(0.0), (-blk.c_a / blk.q_a).max(0.0)));
    }
    if blk.c_p >= wh {
        return Ok(boundary(strict));
    }
    let mut lo = (-blk.c_p / blk.q_p).max(0.0);
    let mut hi = (wh - blk.c_p) / blk.q_p;
    if blk.c_p > 0.0 {
        // at p = 0 the eliminated bandwidth is 0 and the residual is finite
        let x0 = (wh - blk.c_p) / blk.c_p;
        if -blk.weight * snr_excess(x0) + blk.c_a >= 0.0 {
            return Ok(boundary(strict));
        }
    }
    let mut p = match hint {
        Some(h) if h > lo && h < hi => h,
        _ => 0.5 * (lo + hi),
    };
    for _ in 0..max_iter {
        let (g, dg, a) = blk.reduced(p);
        if !g.is_finite() {
            // only possible at the bracket ends
            if g > 0.0 { hi = p } else { lo = p }
            p = 0.5 * (lo + hi);
            continue;
        }
        if g < 0.0 {
            lo = p;
        } else {
            hi = p;
        }
        let newton = p - g / dg;
        let next = if dg > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - p).abs() <= tol || hi - lo <= tol {
            let (_, _, a_next) = blk.reduced(next);
            let (p, a) = if a_next.is_finite() { (next, a_next) } else { (p, a) };
            return Ok((p.max(0.0), a.max(0.0)));
        }
        p = next;
    }
    Err((lo, hi))
}

/// Transmit-energy update when the bandwidth share is held at `a`.
pub fn solve_power_fixed_bandwidth(blk: &PowerBandwidthBlock, a: f64) -> f64 {
    let wh = blk.weight * blk.gain;
    if a <= 0.0 || wh <= 0.0 {
        return (-blk.c_p / blk.q_p).max(0.0);
    }
    if blk.c_p >= wh {
        return 0.0;
    }
    // W H a / (a + pH) = c_p + q_p p  ->  A p^2 + B p + C = 0 with C < 0
    let qa = blk.q_p * blk.gain;
    let qb = blk.q_p * a + blk.c_p * blk.gain;
    let qc = (blk.c_p - wh) * a;
    let disc = (qb * qb - 4.0 * qa * qc).sqrt();
    let p = if qb >= 0.0 {
        -2.0 * qc / (qb + disc)
    } else {
        (disc - qb) / (2.0 * qa)
    };
    p.max(0.0)
}

/// Joint `(p, a)` update for node `n`, slot `k`.
pub fn update_pa(
    prev: &PrimalState,
    duals: &DualState,
    sc: &Scenario,
    params: &AdmmParams,
    n: usize,
    k: usize,
) -> Result<(f64, f64)> {
    let blk = PowerBandwidthBlock::assemble(prev, duals, sc, params, n, k);
    let hint = Some(prev.p[(n, k)]);
    solve_power_bandwidth(&blk, hint, params.strict_paper_problem1, params.root_tol, params.root_max_iter)
        .map_err(|(lo, hi)| Error::RootFinder { n, k, lo, hi })
}

/// Local-harvest draw update.
pub fn update_l(
    prev: &PrimalState,
    duals: &DualState,
    sc: &Scenario,
    params: &AdmmParams,
    buffers: &WorkBuffers,
    n: usize,
    k: usize,
) -> f64 {
    let (rho, tau) = (params.rho, params.tau);
    let kk = sc.n_slots;
    let bmax = sc.battery_cap[n];
    let (lower, upper) = buffers.battery_tails(n, k, prev.l[(n, k)], bmax);
    let linear = dual_tail(duals, n, k) - duals.y3[(n, k)];
    let balance = prev.p[(n, k)] - prev.s[(n, k)] - prev.g[(n, k)];
    let num = tau * prev.l[(n, k)] - (linear + rho * lower + rho * upper - rho * balance);
    let span = (kk - k) as f64;
    num.max(0.0) / (rho * (2.0 * span + 1.0) + tau)
}

/// Donation update for `m -> n`. The diagonal is not a decision variable.
pub fn update_r(
    prev: &PrimalState,
    duals: &DualState,
    sc: &Scenario,
    params: &AdmmParams,
    buffers: &WorkBuffers,
    m: usize,
    n: usize,
    k: usize,
) -> Result<f64> {
    if m == n {
        return Err(Error::Contract(format!(
            "donation update requested on the diagonal (node {n}, slot {k})"
        )));
    }
    let (rho, tau) = (params.rho, params.tau);
    let eff = sc.transfer_efficiency;
    let kk = sc.n_slots;
    let (bm, bn) = (sc.battery_cap[m], sc.battery_cap[n]);
    let r0 = prev.r[(m, n, k)];
    let (s_lo, s_hi) = buffers.battery_tails(m, k, r0, bm);
    let (r_lo, r_hi) = buffers.battery_tails(n, k, -eff * r0, bn);
    let sender = s_lo + s_hi;
    let receiver = r_lo + r_hi;
    let usage = prev.s[(n, k)] + prev.u4[(n, k)] - eff * (buffers.incoming_sum[(n, k)] - r0);
    let linear = sc.coop_cost + dual_tail(duals, m, k)
        - eff * dual_tail(duals, n, k)
        - eff * duals.y5[(n, k)];
    let num = tau * r0 - (linear + rho * sender - eff * rho * receiver - eff * rho * usage);
    let span = (kk - k) as f64;
    let den = 2.0 * rho * span * (1.0 + eff * eff) + rho * eff * eff + tau;
    Ok(num.max(0.0) / den)
}

/// Same-slot donation usage update.
pub fn update_s(
    prev: &PrimalState,
    duals: &DualState,
    sc: &Scenario,
    params: &AdmmParams,
    buffers: &WorkBuffers,
    n: usize,
    k: usize,
) -> f64 {
    let (rho, tau) = (params.rho, params.tau);
    let kk = sc.n_slots;
    let bmax = sc.battery_cap[n];
    let eff = sc.transfer_efficiency;
    let (lo, hi) = buffers.battery_tails(n, k, prev.s[(n, k)], bmax);
    let battery = lo + hi;
    let linear = dual_tail(duals, n, k) - duals.y3[(n, k)] + duals.y5[(n, k)];
    let balance = prev.p[(n, k)] - prev.l[(n, k)] - prev.g[(n, k)];
    let usage = prev.u4[(n, k)] - eff * buffers.incoming_sum[(n, k)];
    let num = tau * prev.s[(n, k)] - (linear + rho * battery - rho * balance + rho * usage);
    let span = (kk - k) as f64;
    num.max(0.0) / (rho * (2.0 * span + 2.0) + tau)
}

/// Grid-energy update.
pub fn update_g(
    prev: &PrimalState,
    duals: &DualState,
    sc: &Scenario,
    params: &AdmmParams,
    n: usize,
    k: usize,
) -> f64 {
    let (rho, tau) = (params.rho, params.tau);
    let num = -sc.grid_cost
        + duals.y3[(n, k)]
        + rho * (prev.p[(n, k)] - prev.l[(n, k)] - prev.s[(n, k)])
        + tau * prev.g[(n, k)];
    num.max(0.0) / (rho + tau)
}

/// Discharge update.
pub fn update_d(
    prev: &PrimalState,
    duals: &DualState,
    sc: &Scenario,
    params: &AdmmParams,
    buffers: &WorkBuffers,
    n: usize,
    k: usize,
) -> f64 {
    let (rho, tau) = (params.rho, params.tau);
    let kk = sc.n_slots;
    let bmax = sc.battery_cap[n];
    let (lo, hi) = buffers.battery_tails(n, k, prev.d[(n, k)], bmax);
    let battery = lo + hi;
    let num = tau * prev.d[(n, k)] - (dual_tail(duals, n, k) + rho * battery);
    let span = (kk - k) as f64;
    num.max(0.0) / (2.0 * rho * span + tau)
}

/// Slack updates `(u1, u2, u3, u4)`.
pub fn update_u(
    prev: &PrimalState,
    duals: &DualState,
    sc: &Scenario,
    params: &AdmmParams,
    buffers: &WorkBuffers,
    n: usize,
    k: usize,
) -> (f64, f64, f64, f64) {
    let (rho, tau) = (params.rho, params.tau);
    let den = rho + tau;
    let q = buffers.residual[(n, k)];
    let u1 = (-duals.y1[(n, k)] - rho * q + tau * prev.u1[(n, k)]).max(0.0) / den;
    let u2 = (duals.y2[(n, k)] + rho * (q + sc.battery_cap[n]) + tau * prev.u2[(n, k)]).max(0.0) / den;
    let u3 = (-duals.y4[(n, k)] - rho * (prev.p[(n, k)] - sc.power_cap[n]) + tau * prev.u3[(n, k)])
        .max(0.0)
        / den;
    let u4 = (-duals.y5[(n, k)]
        - rho * (prev.s[(n, k)] - sc.transfer_efficiency * buffers.incoming_sum[(n, k)])
        + tau * prev.u4[(n, k)])
        .max(0.0)
        / den;
    (u1, u2, u3, u4)
}
