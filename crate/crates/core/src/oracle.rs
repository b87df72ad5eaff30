//! Reference solvers for checking the closed forms and the ADMM output.
//!
//! Nothing here calls into [`crate::subproblems`] or [`crate::admm`]: the
//! augmented Lagrangian is re-derived from the battery recursion, block
//! minimizers are found by bisection on forward-mode derivatives, and tiny
//! instances are solved by nested searches over a lattice.

use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};

use crate::admm::AdmmParams;
use crate::error::{Error, Result};
use crate::model::{self, DualState, PrimalState, Scenario};
use crate::tensor::Grid;

/// A value with one forward-mode derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn var(v: f64) -> Self {
        Dual { v, d: 1.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { v: self.v + o.v, d: self.d + o.d }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual { v: self.v - o.v, d: self.d - o.d }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual {
            v: self.v / o.v,
            d: (self.d * o.v - self.v * o.d) / (o.v * o.v),
        }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual { v: -self.v, d: -self.d }
    }
}

/// Arithmetic needed by the reference Lagrangian.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn ln_1p(self) -> Self;
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
}

impl Scalar for Dual {
    fn cst(v: f64) -> Self {
        Dual { v, d: 0.0 }
    }
    fn value(self) -> f64 {
        self.v
    }
    fn ln_1p(self) -> Self {
        Dual {
            v: self.v.ln_1p(),
            d: self.d / (1.0 + self.v),
        }
    }
}

/// One scalar entry of a [`PrimalState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coord {
    P(usize, usize),
    A(usize, usize),
    L(usize, usize),
    S(usize, usize),
    G(usize, usize),
    D(usize, usize),
    U1(usize, usize),
    U2(usize, usize),
    U3(usize, usize),
    U4(usize, usize),
    /// Donation `(from, to, slot)`.
    R(usize, usize, usize),
}

impl Coord {
    pub fn get(self, x: &PrimalState) -> f64 {
        match self {
            Coord::R(m, n, k) => x.r[(m, n, k)],
            _ => {
                let (grid, n, k) = self.grid(x);
                grid[(n, k)]
            }
        }
    }

    pub fn set(self, x: &mut PrimalState, v: f64) {
        match self {
            Coord::R(m, n, k) => x.r[(m, n, k)] = v,
            Coord::P(n, k) => x.p[(n, k)] = v,
            Coord::A(n, k) => x.a[(n, k)] = v,
            Coord::L(n, k) => x.l[(n, k)] = v,
            Coord::S(n, k) => x.s[(n, k)] = v,
            Coord::G(n, k) => x.g[(n, k)] = v,
            Coord::D(n, k) => x.d[(n, k)] = v,
            Coord::U1(n, k) => x.u1[(n, k)] = v,
            Coord::U2(n, k) => x.u2[(n, k)] = v,
            Coord::U3(n, k) => x.u3[(n, k)] = v,
            Coord::U4(n, k) => x.u4[(n, k)] = v,
        }
    }

    fn grid(self, x: &PrimalState) -> (&Grid, usize, usize) {
        match self {
            Coord::P(n, k) => (&x.p, n, k),
            Coord::A(n, k) => (&x.a, n, k),
            Coord::L(n, k) => (&x.l, n, k),
            Coord::S(n, k) => (&x.s, n, k),
            Coord::G(n, k) => (&x.g, n, k),
            Coord::D(n, k) => (&x.d, n, k),
            Coord::U1(n, k) => (&x.u1, n, k),
            Coord::U2(n, k) => (&x.u2, n, k),
            Coord::U3(n, k) => (&x.u3, n, k),
            Coord::U4(n, k) => (&x.u4, n, k),
            Coord::R(..) => unreachable!("donations live in a cube"),
        }
    }

    /// Every decision and slack coordinate; the donation diagonal is skipped.
    pub fn all(n_users: usize, n_slots: usize) -> Vec<Coord> {
        let mut out = Vec::new();
        let per_node: [fn(usize, usize) -> Coord; 10] = [
            Coord::P,
            Coord::A,
            Coord::L,
            Coord::S,
            Coord::G,
            Coord::D,
            Coord::U1,
            Coord::U2,
            Coord::U3,
            Coord::U4,
        ];
        for make in per_node {
            for n in 0..n_users {
                for k in 0..n_slots {
                    out.push(make(n, k));
                }
            }
        }
        for m in 0..n_users {
            for n in (0..n_users).filter(|&n| n != m) {
                for k in 0..n_slots {
                    out.push(Coord::R(m, n, k));
                }
            }
        }
        out
    }
}

/// A primal point lifted to scalar type `T`, flat `n * K + k` layout.
struct Point<T> {
    k: usize,
    n: usize,
    p: Vec<T>,
    a: Vec<T>,
    l: Vec<T>,
    s: Vec<T>,
    g: Vec<T>,
    d: Vec<T>,
    u1: Vec<T>,
    u2: Vec<T>,
    u3: Vec<T>,
    u4: Vec<T>,
    /// `(m * N + n) * K + k`.
    r: Vec<T>,
}

impl<T: Scalar> Point<T> {
    fn lift(x: &PrimalState, seed: Option<(Coord, T)>) -> Self {
        let lift = |g: &Grid| g.iter().map(|&v| T::cst(v)).collect::<Vec<T>>();
        let mut pt = Point {
            k: x.slots(),
            n: x.nodes(),
            p: lift(&x.p),
            a: lift(&x.a),
            l: lift(&x.l),
            s: lift(&x.s),
            g: lift(&x.g),
            d: lift(&x.d),
            u1: lift(&x.u1),
            u2: lift(&x.u2),
            u3: lift(&x.u3),
            u4: lift(&x.u4),
            r: x.r.iter().map(|&v| T::cst(v)).collect(),
        };
        if let Some((c, v)) = seed {
            let kk = pt.k;
            let nn = pt.n;
            match c {
                Coord::P(n, k) => pt.p[n * kk + k] = v,
                Coord::A(n, k) => pt.a[n * kk + k] = v,
                Coord::L(n, k) => pt.l[n * kk + k] = v,
                Coord::S(n, k) => pt.s[n * kk + k] = v,
                Coord::G(n, k) => pt.g[n * kk + k] = v,
                Coord::D(n, k) => pt.d[n * kk + k] = v,
                Coord::U1(n, k) => pt.u1[n * kk + k] = v,
                Coord::U2(n, k) => pt.u2[n * kk + k] = v,
                Coord::U3(n, k) => pt.u3[n * kk + k] = v,
                Coord::U4(n, k) => pt.u4[n * kk + k] = v,
                Coord::R(m, n, k) => pt.r[(m * nn + n) * kk + k] = v,
            }
        }
        pt
    }

    fn donation(&self, m: usize, n: usize, k: usize) -> T {
        self.r[(m * self.n + n) * self.k + k]
    }
}

fn utility<T: Scalar>(sc: &Scenario, x: &Point<T>) -> T {
    let kk = sc.n_slots;
    let mut total = T::cst(0.0);
    for n in 0..sc.n_users {
        for k in 0..kk {
            let a = x.a[n * kk + k];
            if a.value() > 0.0 {
                let snr = x.p[n * kk + k] * T::cst(sc.gain[(n, k)]) / a;
                total = total + T::cst(sc.weight[n]) * a * snr.ln_1p();
            }
            total = total - T::cst(sc.grid_cost) * x.g[n * kk + k];
            for m in (0..sc.n_users).filter(|&m| m != n) {
                total = total - T::cst(sc.coop_cost) * x.donation(n, m, k);
            }
        }
    }
    total
}

/// Equality constraint values in the order battery-lower, battery-upper,
/// balance, cap, usage (each node-major) followed by the per-slot bandwidth
/// sums.
fn constraints<T: Scalar>(sc: &Scenario, x: &Point<T>) -> Vec<T> {
    let (nn, kk) = (sc.n_users, sc.n_slots);
    let eff = T::cst(sc.transfer_efficiency);
    let mut c = vec![T::cst(0.0); 5 * nn * kk + kk];
    for n in 0..nn {
        let mut battery = T::cst(0.0);
        for k in 0..kk {
            let i = n * kk + k;
            let mut inflow = T::cst(0.0);
            let mut outflow = T::cst(0.0);
            for m in (0..nn).filter(|&m| m != n) {
                inflow = inflow + x.donation(m, n, k);
                outflow = outflow + x.donation(n, m, k);
            }
            battery = battery + T::cst(sc.harvest[(n, k)]) - x.l[i] - outflow + eff * inflow - x.s[i] - x.d[i];
            c[i] = x.u1[i] - battery;
            c[nn * kk + i] = T::cst(sc.battery_cap[n]) - battery - x.u2[i];
            c[2 * nn * kk + i] = x.p[i] - x.l[i] - x.s[i] - x.g[i];
            c[3 * nn * kk + i] = x.p[i] + x.u3[i] - T::cst(sc.power_cap[n]);
            c[4 * nn * kk + i] = x.s[i] + x.u4[i] - eff * inflow;
        }
    }
    for k in 0..kk {
        let mut total = T::cst(-1.0);
        for n in 0..nn {
            total = total + x.a[n * kk + k];
        }
        c[5 * nn * kk + k] = total;
    }
    c
}

fn flat_duals(y: &DualState) -> Vec<f64> {
    [&y.y1, &y.y2, &y.y3, &y.y4, &y.y5]
        .iter()
        .flat_map(|g| g.iter().copied())
        .chain(y.y6.iter().copied())
        .collect()
}

fn psi_generic<T: Scalar>(sc: &Scenario, x: &Point<T>, y: &[f64], rho: f64) -> T {
    let mut total = -utility(sc, x);
    for (ci, &yi) in constraints(sc, x).into_iter().zip(y) {
        total = total + T::cst(yi) * ci + T::cst(0.5 * rho) * ci * ci;
    }
    total
}

/// Augmented Lagrangian evaluated from scratch; `+inf` off the nonnegative
/// orthant.
pub fn augmented_lagrangian(sc: &Scenario, x: &PrimalState, y: &DualState, rho: f64) -> f64 {
    if !x.is_nonnegative() {
        return f64::INFINITY;
    }
    psi_generic(sc, &Point::<f64>::lift(x, None), &flat_duals(y), rho)
}

/// Plain Lagrangian of the slack-augmented problem.
pub fn lagrangian(sc: &Scenario, x: &PrimalState, y: &DualState) -> f64 {
    psi_generic(sc, &Point::<f64>::lift(x, None), &flat_duals(y), 0.0)
}

/// Everything a block minimization reads.
#[derive(Debug, Clone, Copy)]
pub struct ProxInputs<'a> {
    pub sc: &'a Scenario,
    pub prev: &'a PrimalState,
    pub duals: &'a DualState,
    pub params: &'a AdmmParams,
}

impl ProxInputs<'_> {
    /// Augmented Lagrangian with one coordinate replaced, plus the proximal
    /// term around the previous value.
    pub fn objective(&self, coord: Coord, t: f64) -> f64 {
        let mut x = self.prev.clone();
        coord.set(&mut x, t);
        let t0 = coord.get(self.prev);
        augmented_lagrangian(self.sc, &x, self.duals, self.params.rho) + 0.5 * self.params.tau * (t - t0).powi(2)
    }

    fn slope(&self, coord: Coord, y: &[f64], t: f64) -> f64 {
        let pt = Point::lift(self.prev, Some((coord, Dual::var(t))));
        let t0 = coord.get(self.prev);
        psi_generic(self.sc, &pt, y, self.params.rho).d + self.params.tau * (t - t0)
    }

    /// Two-coordinate `(p, a)` version of [`ProxInputs::objective`].
    pub fn objective_pa(&self, n: usize, k: usize, p: f64, a: f64) -> f64 {
        let mut x = self.prev.clone();
        x.p[(n, k)] = p;
        x.a[(n, k)] = a;
        let (p0, a0) = (self.prev.p[(n, k)], self.prev.a[(n, k)]);
        augmented_lagrangian(self.sc, &x, self.duals, self.params.rho)
            + 0.5 * self.params.tau * ((p - p0).powi(2) + (a - a0).powi(2))
    }
}

/// Minimizer of the single-coordinate prox objective over `bracket`,
/// located by bisection on its exact derivative.
pub fn numeric_prox(coord: Coord, inputs: &ProxInputs, bracket: (f64, f64)) -> Result<f64> {
    let (mut lo, mut hi) = bracket;
    if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
        return Err(Error::Bracket(format!("[{lo}, {hi}] is not a nonnegative interval")));
    }
    let y = flat_duals(inputs.duals);
    let slope = |t: f64| inputs.slope(coord, &y, t);
    if slope(lo) >= 0.0 {
        return Ok(lo);
    }
    let at_hi = slope(hi);
    if at_hi < 0.0 {
        return Err(Error::Bracket(format!(
            "{coord:?}: objective still decreasing at {hi} (slope {at_hi})"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Minimizer of the joint `(p, a)` prox objective by successive grid
/// refinement, stopping once the grid spacing is below `tol` in both axes.
pub fn numeric_prox_pa(
    inputs: &ProxInputs,
    n: usize,
    k: usize,
    p_bracket: (f64, f64),
    a_bracket: (f64, f64),
    tol: f64,
) -> Result<(f64, f64)> {
    const CELLS: usize = 32;
    let valid = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi;
    if !(valid(p_bracket) && valid(a_bracket)) || !(tol > 0.0) {
        return Err(Error::Bracket(format!("{p_bracket:?} x {a_bracket:?} with tol {tol}")));
    }
    let (mut p_box, mut a_box) = (p_bracket, a_bracket);
    let mut best = (p_box.0, a_box.0);
    loop {
        let dp = (p_box.1 - p_box.0) / CELLS as f64;
        let da = (a_box.1 - a_box.0) / CELLS as f64;
        let mut best_val = f64::INFINITY;
        for i in 0..=CELLS {
            for j in 0..=CELLS {
                let (p, a) = (p_box.0 + i as f64 * dp, a_box.0 + j as f64 * da);
                let v = inputs.objective_pa(n, k, p, a);
                if v < best_val {
                    best_val = v;
                    best = (p, a);
                }
            }
        }
        if dp <= tol && da <= tol {
            return Ok(best);
        }
        let shrink = |centre: f64, step: f64, outer: (f64, f64)| {
            ((centre - 3.0 * step).max(outer.0), (centre + 3.0 * step).min(outer.1))
        };
        p_box = shrink(best.0, dp, p_bracket);
        a_box = shrink(best.1, da, a_bracket);
    }
}

/// Exhaustive optimum of an instance with at most two users and two slots.
///
/// The search space is reduced without loss: donated energy is routed
/// through the battery (`s = 0`), at most one direction of donation is
/// active per slot, renewable energy is spent before grid energy, discharge
/// only removes what cannot be stored or sent, and the grid top-up for a
/// given bandwidth share is the stationary point of a concave scalar
/// function. The remaining coordinates (battery carry-over, net donation,
/// bandwidth split) are searched on the lattice `resolution * Z` plus the
/// interval ends; each is a concave maximization, so a discrete ternary
/// search finds the best lattice point.
pub fn grid_search(sc: &Scenario, resolution: f64) -> Result<(f64, PrimalState)> {
    sc.validate()?;
    if sc.n_users > 2 || sc.n_slots > 2 {
        return Err(Error::TooLarge(format!(
            "{} users x {} slots (limit 2 x 2)",
            sc.n_users, sc.n_slots
        )));
    }
    if !(resolution.is_finite() && resolution > 0.0) {
        return Err(Error::InvalidParams(format!("resolution {resolution} must be positive")));
    }
    let search = TinySearch { sc, res: resolution };
    let plans = if sc.n_slots == 1 {
        let avail = [sc.harvest[(0, 0)], search.harvest(1, 0)];
        vec![search.slot(0, avail, None).expect("zero carry is always reachable")]
    } else {
        search.two_slots()
    };

    let mut x = PrimalState::for_scenario(sc);
    for (k, plan) in plans.iter().enumerate() {
        for n in 0..sc.n_users {
            x.p[(n, k)] = plan.local[n] + plan.grid[n];
            x.l[(n, k)] = plan.local[n];
            x.g[(n, k)] = plan.grid[n];
            x.d[(n, k)] = plan.discharge[n];
            x.a[(n, k)] = plan.share[n];
        }
        if plan.transfer > 0.0 {
            x.r[(0, 1, k)] = plan.transfer;
        } else if plan.transfer < 0.0 {
            x.r[(1, 0, k)] = -plan.transfer;
        }
    }
    x.fill_slacks(sc);
    let report = model::feasibility(sc, &x, 1e-9);
    if !report.feasible {
        return Err(Error::Contract(format!("exhaustive search produced an infeasible point: {report:?}")));
    }
    Ok((model::objective(sc, &x)?, x))
}

#[derive(Debug, Clone, Copy, Default)]
struct SlotPlan {
    value: f64,
    /// Net donation from node 0 to node 1 (negative: the other way).
    transfer: f64,
    share: [f64; 2],
    local: [f64; 2],
    grid: [f64; 2],
    discharge: [f64; 2],
}

struct TinySearch<'a> {
    sc: &'a Scenario,
    res: f64,
}

impl TinySearch<'_> {
    fn harvest(&self, n: usize, k: usize) -> f64 {
        if n < self.sc.n_users {
            self.sc.harvest[(n, k)]
        } else {
            0.0
        }
    }

    fn two_slots(&self) -> Vec<SlotPlan> {
        let sc = self.sc;
        let eff = sc.transfer_efficiency;
        let e0 = [self.harvest(0, 0), self.harvest(1, 0)];
        let e1 = [self.harvest(0, 1), self.harvest(1, 1)];
        let pair = sc.n_users == 2;
        let evaluate = |carry: [f64; 2]| -> Option<(f64, SlotPlan, SlotPlan)> {
            let first = self.slot(0, e0, Some(carry))?;
            let second = self.slot(1, [carry[0] + e1[0], carry[1] + e1[1]], None)?;
            Some((first.value + second.value, first, second))
        };
        let c0_hi = sc.battery_cap[0].min(if pair { e0[0] + eff * e0[1] } else { e0[0] });
        let (_, _, best) = argmax_concave(&lattice(0.0, c0_hi, self.res, &[]), |c0| {
            if !pair {
                return evaluate([c0, 0.0]).map(|(v, a, b)| (v, (a, b)));
            }
            // most node 1 can keep while node 0 keeps c0
            let t_max = self.transfer_range(e0, [c0, 0.0])?.1;
            let c1_hi = sc.battery_cap[1].min(self.after_transfer(e0, t_max)[1]);
            let (v, _, plans) = argmax_concave(&lattice(0.0, c1_hi.max(0.0), self.res, &[]), |c1| {
                evaluate([c0, c1]).map(|(v, a, b)| (v, (a, b)))
            })?;
            Some((v, plans))
        })
        .expect("an empty battery is always reachable");
        vec![best.0, best.1]
    }

    /// Renewable energy available to each node after a net transfer `t`.
    fn after_transfer(&self, avail: [f64; 2], t: f64) -> [f64; 2] {
        let eff = self.sc.transfer_efficiency;
        if t >= 0.0 {
            [avail[0] - t, avail[1] + eff * t]
        } else {
            [avail[0] - eff * t, avail[1] + t]
        }
    }

    /// Net transfers that leave each node at least `keep`.
    fn transfer_range(&self, avail: [f64; 2], keep: [f64; 2]) -> Option<(f64, f64)> {
        let eff = self.sc.transfer_efficiency;
        let hi = if avail[0] >= keep[0] {
            avail[0] - keep[0]
        } else if eff > 0.0 {
            -(keep[0] - avail[0]) / eff
        } else {
            return None;
        };
        let lo = if avail[1] >= keep[1] {
            -(avail[1] - keep[1])
        } else if eff > 0.0 {
            (keep[1] - avail[1]) / eff
        } else {
            return None;
        };
        (lo <= hi).then_some((lo, hi))
    }

    /// Best use of one slot. With `carry`, exactly that much must remain in
    /// each battery; without it (last slot) leftovers may stay up to the cap.
    fn slot(&self, k: usize, avail: [f64; 2], carry: Option<[f64; 2]>) -> Option<SlotPlan> {
        let sc = self.sc;
        let keep = carry.unwrap_or([0.0; 2]);
        let with_transfer = |t: f64| -> Option<(f64, SlotPlan)> {
            let held = self.after_transfer(avail, t);
            let mut plan = SlotPlan {
                transfer: t,
                ..Default::default()
            };
            for n in 0..sc.n_users {
                let usable = (held[n] - keep[n]).max(0.0);
                plan.local[n] = usable.min(sc.power_cap[n]);
                let spare = usable - plan.local[n];
                plan.discharge[n] = match carry {
                    Some(_) => spare,
                    None => (spare - sc.battery_cap[n]).max(0.0),
                };
            }
            let (value, share, grid) = self.best_split(k, plan.local);
            plan.value = value - sc.coop_cost * t.abs();
            plan.share = share;
            plan.grid = grid;
            Some((plan.value, plan))
        };
        if sc.n_users == 1 {
            if avail[0] < keep[0] {
                return None;
            }
            return with_transfer(0.0).map(|(_, plan)| plan);
        }
        let (lo, hi) = self.transfer_range(avail, keep)?;
        argmax_concave(&lattice(lo, hi, self.res, &[0.0]), with_transfer).map(|(_, _, plan)| plan)
    }

    /// Best bandwidth split given the renewable energy each node spends.
    fn best_split(&self, k: usize, local: [f64; 2]) -> (f64, [f64; 2], [f64; 2]) {
        let sc = self.sc;
        if sc.n_users == 1 {
            let (v, g) = self.link_value(0, k, 1.0, local[0]);
            return (v, [1.0, 0.0], [g, 0.0]);
        }
        let (value, a0, grid) = argmax_concave(&lattice(0.0, 1.0, self.res, &[]), |a0| {
            let (v0, g0) = self.link_value(0, k, a0, local[0]);
            let (v1, g1) = self.link_value(1, k, 1.0 - a0, local[1]);
            Some((v0 + v1, [g0, g1]))
        })
        .expect("the bandwidth simplex is nonempty");
        (value, [a0, 1.0 - a0], grid)
    }

    /// Throughput minus grid cost of one link with bandwidth `a` and free
    /// energy `local`, with the optimal grid top-up.
    fn link_value(&self, n: usize, k: usize, a: f64, local: f64) -> (f64, f64) {
        let sc = self.sc;
        let (w, h, cap) = (sc.weight[n], sc.gain[(n, k)], sc.power_cap[n]);
        if a <= 0.0 || w * h <= 0.0 {
            return (0.0, 0.0);
        }
        let room = cap - local;
        let g = if sc.grid_cost <= 0.0 {
            room
        } else {
            (w * a / sc.grid_cost - a / h - local).clamp(0.0, room)
        };
        (model::rate_term(local + g, a, h, w) - sc.grid_cost * g, g)
    }
}

/// Lattice points `res * i` inside `[lo, hi]`, both ends, and any `extra`
/// points inside, sorted.
fn lattice(lo: f64, hi: f64, res: f64, extra: &[f64]) -> Vec<f64> {
    let mut pts = vec![lo];
    let first = (lo / res).ceil() as i64;
    let last = (hi / res).floor() as i64;
    for i in first..=last {
        let v = i as f64 * res;
        if v > lo && v < hi {
            pts.push(v);
        }
    }
    pts.extend(extra.iter().copied().filter(|&v| v > lo && v < hi));
    if hi > lo {
        pts.push(hi);
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Maximum of a concave function sampled on sorted points. Points where `f`
/// returns `None` must form a suffix or prefix of the domain and are skipped.
fn argmax_concave<T>(pts: &[f64], mut f: impl FnMut(f64) -> Option<(f64, T)>) -> Option<(f64, f64, T)> {
    let mut eval = |i: usize| f(pts[i]).map(|(v, t)| (v, t));
    let (mut lo, mut hi) = (0usize, pts.len().checked_sub(1)?);
    let score = |r: &Option<(f64, T)>| r.as_ref().map_or(f64::NEG_INFINITY, |(v, _)| *v);
    while hi - lo > 2 {
        let m1 = lo + (hi - lo) / 3;
        let m2 = hi - (hi - lo) / 3;
        if score(&eval(m1)) < score(&eval(m2)) {
            lo = m1 + 1;
        } else {
            hi = m2;
        }
    }
    (lo..=hi)
        .filter_map(|i| eval(i).map(|(v, t)| (v, pts[i], t)))
        .max_by(|a, b| a.0.total_cmp(&b.0))
}

const FD_STEP: f64 = 1e-6;

/// Finite-difference gradient, central where the coordinate can move both
/// ways and forward at the boundary.
fn fd_gradient(x: &PrimalState, coords: &[Coord], f: impl Fn(&PrimalState) -> f64) -> Vec<f64> {
    let mut work = x.clone();
    coords
        .iter()
        .map(|&c| {
            let v = c.get(x);
            let (lo, hi) = if v >= FD_STEP { (v - FD_STEP, v + FD_STEP) } else { (v, v + FD_STEP) };
            c.set(&mut work, hi);
            let up = f(&work);
            c.set(&mut work, lo);
            let down = f(&work);
            c.set(&mut work, v);
            (up - down) / (hi - lo)
        })
        .collect()
}

fn check_domain(sc: &Scenario, x: &PrimalState) -> Result<()> {
    x.check_dims(sc)?;
    for n in 0..sc.n_users {
        for k in 0..sc.n_slots {
            let live = sc.gain[(n, k)] * sc.weight[n] > 0.0;
            if live && x.a[(n, k)] <= 0.0 && x.p[(n, k)] > 0.0 {
                return Err(Error::Domain(format!(
                    "rate is not differentiable at node {n}, slot {k}: a = {}, p = {}",
                    x.a[(n, k)],
                    x.p[(n, k)]
                )));
            }
        }
    }
    Ok(())
}

/// Largest first-order optimality violation at `(x, y)`: projected-gradient
/// stationarity of the Lagrangian over the nonnegative orthant, and the
/// equality residuals.
pub fn kkt_residual(sc: &Scenario, x: &PrimalState, y: &DualState) -> Result<f64> {
    check_domain(sc, x)?;
    let coords = Coord::all(sc.n_users, sc.n_slots);
    let grad = fd_gradient(x, &coords, |z| lagrangian(sc, z, y));
    let stationarity = coords
        .iter()
        .zip(&grad)
        .map(|(&c, g)| {
            let v = c.get(x);
            (v - (v - g).max(0.0)).abs()
        })
        .fold(0.0_f64, f64::max);
    let primal = constraints(sc, &Point::<f64>::lift(x, None))
        .into_iter()
        .fold(0.0_f64, |m, c| m.max(c.abs()));
    Ok(stationarity.max(primal))
}

/// Multipliers making the Lagrangian stationary at `x`.
///
/// Starts from the least-squares fit over the strictly positive
/// coordinates. A coordinate sitting at zero whose Lagrangian slope comes
/// out negative is then added to the stationary set (slope zero is
/// complementary at a bound) and the fit is repeated, until every bound
/// coordinate has a nonnegative slope or none is left to add.
pub fn fit_multipliers(sc: &Scenario, x: &PrimalState) -> Result<DualState> {
    check_domain(sc, x)?;
    let (nn, kk) = (sc.n_users, sc.n_slots);
    let coords = Coord::all(nn, kk);
    let zero = DualState::for_scenario(sc);
    let cost_grad = fd_gradient(x, &coords, |z| lagrangian(sc, z, &zero));
    let n_cons = 5 * nn * kk + kk;
    // constraints are affine, so a unit step gives exact columns
    let base = constraints(sc, &Point::<f64>::lift(x, None));
    let mut jac = DMatrix::<f64>::zeros(coords.len(), n_cons);
    for (row, &c) in coords.iter().enumerate() {
        let mut z = x.clone();
        c.set(&mut z, c.get(x) + 1.0);
        for (col, (hi, lo)) in constraints(sc, &Point::<f64>::lift(&z, None)).iter().zip(&base).enumerate() {
            jac[(row, col)] = hi - lo;
        }
    }
    let mut stationary: Vec<bool> = coords.iter().map(|c| c.get(x) > 1e-9).collect();
    let flat = loop {
        let rows: Vec<usize> = (0..coords.len()).filter(|&i| stationary[i]).collect();
        let flat = if rows.is_empty() {
            DVector::zeros(n_cons)
        } else {
            let a = DMatrix::from_fn(rows.len(), n_cons, |i, j| jac[(rows[i], j)]);
            let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|&i| -cost_grad[i]));
            a.svd(true, true)
                .solve(&rhs, 1e-12)
                .map_err(|e| Error::Domain(format!("multiplier fit failed: {e}")))?
        };
        let slope = |i: usize| cost_grad[i] + jac.row(i).transpose().dot(&flat);
        let worst = (0..coords.len())
            .filter(|&i| !stationary[i])
            .map(|i| (i, slope(i)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match worst {
            Some((i, g)) if g < -1e-9 => stationary[i] = true,
            _ => break flat,
        }
    };
    let block = |i: usize| Grid::from_fn(nn, kk, |n, k| flat[i * nn * kk + n * kk + k]);
    Ok(DualState {
        y1: block(0),
        y2: block(1),
        y3: block(2),
        y4: block(3),
        y5: block(4),
        y6: (0..kk).map(|k| flat[5 * nn * kk + k]).collect(),
    })
}
