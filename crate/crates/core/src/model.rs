//! Problem instances, decision variables and the primal-side evaluators:
//! weighted-throughput objective, battery dynamics and constraint residuals.
//!
//! Indexing is zero-based throughout: `[n][k]` is node `n`, slot `k`, and
//! donations are `r[from][to][slot]`. Harvest is stored per slot; the
//! cumulative harvest `E[n][k]` is a prefix sum computed on demand.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenarios::Provenance;
use crate::tensor::{Cube, Grid};

fn default_efficiency() -> f64 {
    1.0
}

/// One problem instance: `N` transmitters scheduled over `K` slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n_users: usize,
    pub n_slots: usize,
    /// Channel power gain `H[n][k]`.
    pub gain: Grid,
    /// Energy harvested during slot `k` (not cumulative).
    pub harvest: Grid,
    pub battery_cap: Vec<f64>,
    /// Per-slot transmit energy cap.
    pub power_cap: Vec<f64>,
    pub weight: Vec<f64>,
    /// Price per Joule of grid energy.
    pub grid_cost: f64,
    /// Price per Joule donated between nodes.
    pub coop_cost: f64,
    /// Fraction of a donation that reaches the receiver.
    #[serde(default = "default_efficiency")]
    pub transfer_efficiency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<Provenance>,
}

impl Scenario {
    /// Unit gains and weights, no harvest, 20 J caps, free grid and cooperation.
    pub fn uniform(n_users: usize, n_slots: usize) -> Self {
        Scenario {
            n_users,
            n_slots,
            gain: Grid::filled(n_users, n_slots, 1.0),
            harvest: Grid::zeros(n_users, n_slots),
            battery_cap: vec![20.0; n_users],
            power_cap: vec![20.0; n_users],
            weight: vec![1.0; n_users],
            grid_cost: 0.0,
            coop_cost: 0.0,
            transfer_efficiency: 1.0,
            seed: None,
            generator: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, k) = (self.n_users, self.n_slots);
        if n == 0 || k == 0 {
            return Err(Error::InvalidScenario(format!(
                "n_users and n_slots must be positive (got {n} x {k})"
            )));
        }
        for (name, g) in [("gain", &self.gain), ("harvest", &self.harvest)] {
            if g.shape() != (n, k) {
                return Err(Error::Dimension {
                    what: name,
                    expected: format!("{n}x{k}"),
                    found: format!("{}x{}", g.rows(), g.cols()),
                });
            }
            if let Some((i, v)) = g.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
                return Err(Error::InvalidScenario(format!(
                    "{name}[{}][{}] = {v} must be finite and nonnegative",
                    i / k,
                    i % k
                )));
            }
        }
        for (name, v) in [
            ("battery_cap", &self.battery_cap),
            ("power_cap", &self.power_cap),
            ("weight", &self.weight),
        ] {
            if v.len() != n {
                return Err(Error::Dimension {
                    what: name,
                    expected: n.to_string(),
                    found: v.len().to_string(),
                });
            }
            if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !x.is_finite() || **x < 0.0) {
                return Err(Error::InvalidScenario(format!(
                    "{name}[{i}] = {x} must be finite and nonnegative"
                )));
            }
        }
        if let Some((i, x)) = self.power_cap.iter().enumerate().find(|(_, x)| **x <= 0.0) {
            return Err(Error::InvalidScenario(format!("power_cap[{i}] = {x} must be positive")));
        }
        for (name, x) in [("grid_cost", self.grid_cost), ("coop_cost", self.coop_cost)] {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::InvalidScenario(format!(
                    "{name} = {x} must be finite and nonnegative"
                )));
            }
        }
        let eff = self.transfer_efficiency;
        if !(eff > 0.0 && eff <= 1.0) {
            return Err(Error::InvalidScenario(format!(
                "transfer_efficiency = {eff} must lie in (0, 1]"
            )));
        }
        Ok(())
    }

    /// Cumulative harvest `E[n][k] = sum_{t <= k} e[n][t]`.
    pub fn cumulative_harvest(&self) -> Grid {
        let mut out = self.harvest.clone();
        for n in 0..self.n_users {
            let row = out.row_mut(n);
            for k in 1..row.len() {
                row[k] += row[k - 1];
            }
        }
        out
    }

    /// The sub-instance covering slots `start..end`.
    pub fn window(&self, start: usize, end: usize) -> Scenario {
        Scenario {
            n_slots: end - start,
            gain: self.gain.slice_cols(start, end),
            harvest: self.harvest.slice_cols(start, end),
            generator: None,
            ..self.clone()
        }
    }
}

/// The seven decision-variable families plus the four slack families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalState {
    /// Transmit energy.
    pub p: Grid,
    /// Bandwidth fraction.
    pub a: Grid,
    /// Harvested energy drawn from the local battery.
    pub l: Grid,
    /// Donations `r[from][to][slot]`; the diagonal stays zero.
    pub r: Cube,
    /// Received donation consumed in the same slot.
    pub s: Grid,
    /// Grid energy.
    pub g: Grid,
    /// Discharged (wasted) energy.
    pub d: Grid,
    pub u1: Grid,
    pub u2: Grid,
    pub u3: Grid,
    pub u4: Grid,
}

impl PrimalState {
    pub fn zeros(n: usize, k: usize) -> Self {
        PrimalState {
            p: Grid::zeros(n, k),
            a: Grid::zeros(n, k),
            l: Grid::zeros(n, k),
            r: Cube::zeros(n, k),
            s: Grid::zeros(n, k),
            g: Grid::zeros(n, k),
            d: Grid::zeros(n, k),
            u1: Grid::zeros(n, k),
            u2: Grid::zeros(n, k),
            u3: Grid::zeros(n, k),
            u4: Grid::zeros(n, k),
        }
    }

    pub fn for_scenario(sc: &Scenario) -> Self {
        Self::zeros(sc.n_users, sc.n_slots)
    }

    pub fn nodes(&self) -> usize {
        self.p.rows()
    }

    pub fn slots(&self) -> usize {
        self.p.cols()
    }

    fn grids(&self) -> [(&'static str, &Grid); 10] {
        [
            ("p", &self.p),
            ("a", &self.a),
            ("l", &self.l),
            ("s", &self.s),
            ("g", &self.g),
            ("d", &self.d),
            ("u1", &self.u1),
            ("u2", &self.u2),
            ("u3", &self.u3),
            ("u4", &self.u4),
        ]
    }

    pub fn check_dims(&self, sc: &Scenario) -> Result<()> {
        let (n, k) = (sc.n_users, sc.n_slots);
        for (name, g) in self.grids() {
            if g.shape() != (n, k) {
                return Err(Error::Dimension {
                    what: name,
                    expected: format!("{n}x{k}"),
                    found: format!("{}x{}", g.rows(), g.cols()),
                });
            }
        }
        if self.r.nodes() != n || self.r.slots() != k {
            return Err(Error::Dimension {
                what: "r",
                expected: format!("{n}x{n}x{k}"),
                found: format!("{0}x{0}x{1}", self.r.nodes(), self.r.slots()),
            });
        }
        Ok(())
    }

    /// Every entry nonnegative (and finite).
    pub fn is_nonnegative(&self) -> bool {
        let ok = |s: &[f64]| s.iter().all(|v| *v >= 0.0 && v.is_finite());
        self.grids().iter().all(|(_, g)| ok(g.as_slice())) && ok(self.r.as_slice())
    }

    /// `sum_{m != n} r[m][n][k]` (raw, before transfer losses).
    pub fn incoming(&self, n: usize, k: usize) -> f64 {
        (0..self.nodes())
            .filter(|&m| m != n)
            .map(|m| self.r[(m, n, k)])
            .sum()
    }

    /// `sum_{m != n} r[n][m][k]`.
    pub fn outgoing(&self, n: usize, k: usize) -> f64 {
        (0..self.nodes())
            .filter(|&m| m != n)
            .map(|m| self.r[(n, m, k)])
            .sum()
    }

    /// Restriction to slots `start..end`.
    pub fn slice_slots(&self, start: usize, end: usize) -> PrimalState {
        PrimalState {
            p: self.p.slice_cols(start, end),
            a: self.a.slice_cols(start, end),
            l: self.l.slice_cols(start, end),
            r: self.r.slice_slots(start, end),
            s: self.s.slice_cols(start, end),
            g: self.g.slice_cols(start, end),
            d: self.d.slice_cols(start, end),
            u1: self.u1.slice_cols(start, end),
            u2: self.u2.slice_cols(start, end),
            u3: self.u3.slice_cols(start, end),
            u4: self.u4.slice_cols(start, end),
        }
    }

    /// Sets the slack families to the exact nonnegative slacks implied by the
    /// other variables (`u1 = B`, `u2 = B_max - B`, `u3 = P_max - p`,
    /// `u4 = eff * incoming - s`, each clipped at zero).
    pub fn fill_slacks(&mut self, sc: &Scenario) {
        let battery = battery_trajectory(sc, self);
        let eff = sc.transfer_efficiency;
        for n in 0..sc.n_users {
            for k in 0..sc.n_slots {
                let b = battery[(n, k)];
                self.u1[(n, k)] = b.max(0.0);
                self.u2[(n, k)] = (sc.battery_cap[n] - b).max(0.0);
                self.u3[(n, k)] = (sc.power_cap[n] - self.p[(n, k)]).max(0.0);
                self.u4[(n, k)] = (eff * self.incoming(n, k) - self.s[(n, k)]).max(0.0);
            }
        }
    }
}

/// Lagrange multipliers of the five per-(node, slot) equality families and
/// the per-slot bandwidth constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub y1: Grid,
    pub y2: Grid,
    pub y3: Grid,
    pub y4: Grid,
    pub y5: Grid,
    pub y6: Vec<f64>,
}

impl DualState {
    pub fn zeros(n: usize, k: usize) -> Self {
        DualState {
            y1: Grid::zeros(n, k),
            y2: Grid::zeros(n, k),
            y3: Grid::zeros(n, k),
            y4: Grid::zeros(n, k),
            y5: Grid::zeros(n, k),
            y6: vec![0.0; k],
        }
    }

    pub fn for_scenario(sc: &Scenario) -> Self {
        Self::zeros(sc.n_users, sc.n_slots)
    }

    pub fn is_finite(&self) -> bool {
        [&self.y1, &self.y2, &self.y3, &self.y4, &self.y5]
            .iter()
            .flat_map(|g| g.iter())
            .chain(self.y6.iter())
            .all(|v| v.is_finite())
    }
}

/// Worst violation of each constraint family, in the family's own units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub battery_lower: f64,
    pub battery_upper: f64,
    pub power_balance: f64,
    pub power_cap: f64,
    pub donation_usage: f64,
    pub bandwidth_sum: f64,
    pub nonnegativity: f64,
    pub tolerance: f64,
    pub feasible: bool,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        [
            self.battery_lower,
            self.battery_upper,
            self.power_balance,
            self.power_cap,
            self.donation_usage,
            self.bandwidth_sum,
            self.nonnegativity,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// `W a ln(1 + p H / a)`, with the value at `a = 0` defined as zero.
pub fn rate_term(p: f64, a: f64, gain: f64, weight: f64) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    let snr = p * gain / a;
    let v = if snr.is_finite() {
        a * snr.ln_1p()
    } else {
        // a is tiny relative to pH; a ln(pH/a) is still finite
        a * ((p * gain).ln() - a.ln())
    };
    weight * v
}

/// Weighted sum throughput minus grid and cooperation costs.
pub fn objective(sc: &Scenario, x: &PrimalState) -> Result<f64> {
    x.check_dims(sc)?;
    let mut rate = 0.0;
    for n in 0..sc.n_users {
        for k in 0..sc.n_slots {
            rate += rate_term(x.p[(n, k)], x.a[(n, k)], sc.gain[(n, k)], sc.weight[n]);
        }
    }
    let mut donated = 0.0;
    for m in 0..sc.n_users {
        for n in (0..sc.n_users).filter(|&n| n != m) {
            donated += x.r.lane(m, n).iter().sum::<f64>();
        }
    }
    Ok(rate - sc.grid_cost * x.g.sum() - sc.coop_cost * donated)
}

/// Battery level at the end of every slot, starting from an empty battery.
pub fn battery_trajectory(sc: &Scenario, x: &PrimalState) -> Grid {
    let eff = sc.transfer_efficiency;
    let mut b = Grid::zeros(sc.n_users, sc.n_slots);
    for n in 0..sc.n_users {
        let mut level = 0.0;
        for k in 0..sc.n_slots {
            level += sc.harvest[(n, k)] - x.l[(n, k)] - x.outgoing(n, k) + eff * x.incoming(n, k)
                - x.s[(n, k)]
                - x.d[(n, k)];
            b[(n, k)] = level;
        }
    }
    b
}

/// Constraint residuals of `x`; feasible iff every family is within `tol`.
pub fn feasibility(sc: &Scenario, x: &PrimalState, tol: f64) -> ResidualReport {
    let battery = battery_trajectory(sc, x);
    let eff = sc.transfer_efficiency;
    let mut rep = ResidualReport {
        tolerance: tol,
        ..Default::default()
    };
    for n in 0..sc.n_users {
        for k in 0..sc.n_slots {
            let b = battery[(n, k)];
            rep.battery_lower = rep.battery_lower.max(-b);
            rep.battery_upper = rep.battery_upper.max(b - sc.battery_cap[n]);
            let balance = x.p[(n, k)] - x.l[(n, k)] - x.s[(n, k)] - x.g[(n, k)];
            rep.power_balance = rep.power_balance.max(balance.abs());
            rep.power_cap = rep.power_cap.max(x.p[(n, k)] - sc.power_cap[n]);
            rep.donation_usage = rep
                .donation_usage
                .max(x.s[(n, k)] - eff * x.incoming(n, k));
            rep.nonnegativity = rep.nonnegativity.max(x.r[(n, n, k)].abs());
        }
    }
    for k in 0..sc.n_slots {
        rep.bandwidth_sum = rep.bandwidth_sum.max((x.a.col_sum(k) - 1.0).abs());
    }
    let most_negative = [&x.p, &x.a, &x.l, &x.s, &x.g, &x.d, &x.u1, &x.u2, &x.u3, &x.u4]
        .iter()
        .flat_map(|g| g.iter())
        .chain(x.r.iter())
        .fold(0.0_f64, |acc, v| acc.max(-v));
    rep.nonnegativity = rep.nonnegativity.max(most_negative);
    rep.feasible = rep.max() <= tol;
    rep
}
