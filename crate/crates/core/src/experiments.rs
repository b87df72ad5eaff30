//! Parameter sweeps, energy-flow breakdowns, baseline comparisons and the
//! scaling study. Independent solves run on the rayon pool; results come
//! back in job order, so output never depends on scheduling.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{self, AdmmParams, SolveReport};
use crate::baselines;
use crate::error::Result;
use crate::model::{self, Scenario};
use crate::scenarios::{self, GenConfig};

/// Totals of one solved repeat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub repeat: u64,
    pub objective: f64,
    pub grid_energy: f64,
    pub coop_energy: f64,
    pub discharge: f64,
    pub iterations: usize,
    pub converged: bool,
    pub max_residual: f64,
}

impl RunSummary {
    pub fn new(repeat: u64, sc: &Scenario, rep: &SolveReport) -> Self {
        let x = &rep.primal;
        let coop = (0..sc.n_users)
            .flat_map(|n| (0..sc.n_slots).map(move |k| (n, k)))
            .map(|(n, k)| x.outgoing(n, k))
            .sum();
        RunSummary {
            repeat,
            objective: rep.objective,
            grid_energy: x.g.sum(),
            coop_energy: coop,
            discharge: x.d.sum(),
            iterations: rep.iterations,
            converged: rep.converged,
            max_residual: rep.residuals.max(),
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Which cost a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    GridCost,
    CoopCost,
}

impl SweepParam {
    pub fn apply(self, cfg: &GenConfig, value: f64) -> GenConfig {
        let mut cfg = cfg.clone();
        match self {
            SweepParam::GridCost => cfg.grid_cost = value,
            SweepParam::CoopCost => cfg.coop_cost = value,
        }
        cfg
    }
}

/// All repeats at one sweep value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub runs: Vec<RunSummary>,
}

impl SweepPoint {
    pub fn column(&self, f: impl Fn(&RunSummary) -> f64) -> Vec<f64> {
        self.runs.iter().map(f).collect()
    }
}

/// One output line of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param_value: f64,
    pub mean_objective: f64,
    pub std: f64,
    pub mean_grid_energy: f64,
    pub mean_coop_energy: f64,
    pub mean_discharge: f64,
}

impl From<&SweepPoint> for SweepRow {
    fn from(pt: &SweepPoint) -> Self {
        let objective = pt.column(|r| r.objective);
        SweepRow {
            param_value: pt.value,
            mean_objective: mean(&objective),
            std: std_dev(&objective),
            mean_grid_energy: mean(&pt.column(|r| r.grid_energy)),
            mean_coop_energy: mean(&pt.column(|r| r.coop_energy)),
            mean_discharge: mean(&pt.column(|r| r.discharge)),
        }
    }
}

/// Solves every repeat of `cfg` at every value of `param`. Repeats share
/// their random draws across values, so differences are matched by seed.
pub fn sweep(cfg: &GenConfig, param: SweepParam, values: &[f64], params: &AdmmParams) -> Result<Vec<SweepPoint>> {
    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|i| (0..cfg.repeats as u64).map(move |r| (i, r)))
        .collect();
    let runs: Vec<RunSummary> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let sc = scenarios::generate_repeat(&param.apply(cfg, values[i]), r)?;
            let rep = admm::solve(&sc, params, None)?;
            Ok(RunSummary::new(r, &sc, &rep))
        })
        .collect::<Result<_>>()?;
    Ok(values
        .iter()
        .zip(runs.chunks(cfg.repeats.max(1)))
        .map(|(&value, chunk)| SweepPoint {
            value,
            runs: chunk.to_vec(),
        })
        .collect())
}

/// Per-node energy totals over the horizon, averaged over repeats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeFlows {
    pub node: usize,
    pub harvested_used: f64,
    pub donated_in: f64,
    pub donated_out: f64,
    pub grid: f64,
    pub transmit: f64,
    pub discharged: f64,
    pub battery_residual: f64,
}

fn node_flows(sc: &Scenario, rep: &SolveReport) -> Vec<NodeFlows> {
    let x = &rep.primal;
    let battery = model::battery_trajectory(sc, x);
    let last = sc.n_slots - 1;
    (0..sc.n_users)
        .map(|n| NodeFlows {
            node: n,
            harvested_used: x.l.row_sum(n),
            donated_in: (0..sc.n_slots).map(|k| x.incoming(n, k)).sum(),
            donated_out: (0..sc.n_slots).map(|k| x.outgoing(n, k)).sum(),
            grid: x.g.row_sum(n),
            transmit: x.p.row_sum(n),
            discharged: x.d.row_sum(n),
            battery_residual: battery[(n, last)],
        })
        .collect()
}

/// Energy flows per node, averaged over the repeats of `cfg`.
pub fn flows(cfg: &GenConfig, params: &AdmmParams) -> Result<Vec<NodeFlows>> {
    let per_repeat: Vec<Vec<NodeFlows>> = (0..cfg.repeats as u64)
        .into_par_iter()
        .map(|r| {
            let sc = scenarios::generate_repeat(cfg, r)?;
            Ok(node_flows(&sc, &admm::solve(&sc, params, None)?))
        })
        .collect::<Result<_>>()?;
    let count = per_repeat.len().max(1) as f64;
    Ok((0..cfg.n_users)
        .map(|n| {
            let avg = |f: fn(&NodeFlows) -> f64| per_repeat.iter().map(|v| f(&v[n])).sum::<f64>() / count;
            NodeFlows {
                node: n,
                harvested_used: avg(|f| f.harvested_used),
                donated_in: avg(|f| f.donated_in),
                donated_out: avg(|f| f.donated_out),
                grid: avg(|f| f.grid),
                transmit: avg(|f| f.transmit),
                discharged: avg(|f| f.discharged),
                battery_residual: avg(|f| f.battery_residual),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Proposed,
    EqualBandwidth,
    Greedy,
    /// Sliding window with the given lookahead.
    Window(usize),
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::EqualBandwidth => "equal_bandwidth",
            Scheme::Greedy => "greedy",
            Scheme::Window(_) => "window",
        }
    }

    pub fn run(self, sc: &Scenario, params: &AdmmParams) -> Result<SolveReport> {
        match self {
            Scheme::Proposed => admm::solve(sc, params, None),
            Scheme::EqualBandwidth => baselines::solve_equal_bandwidth(sc, params),
            Scheme::Greedy => baselines::solve_greedy_bandwidth(sc, params),
            Scheme::Window(t) => baselines::solve_window(sc, t, params),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselinePoint {
    pub lambda: f64,
    pub scheme: Scheme,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineRow {
    pub lambda: f64,
    pub scheme: &'static str,
    pub window: Option<usize>,
    pub mean_objective: f64,
    pub std: f64,
}

impl From<&BaselinePoint> for BaselineRow {
    fn from(pt: &BaselinePoint) -> Self {
        let objective: Vec<f64> = pt.runs.iter().map(|r| r.objective).collect();
        BaselineRow {
            lambda: pt.lambda,
            scheme: pt.scheme.name(),
            window: match pt.scheme {
                Scheme::Window(t) => Some(t),
                _ => None,
            },
            mean_objective: mean(&objective),
            std: std_dev(&objective),
        }
    }
}

/// Every scheme at every grid cost, on matched repeats.
pub fn compare_baselines(
    cfg: &GenConfig,
    lambdas: &[f64],
    schemes: &[Scheme],
    params: &AdmmParams,
) -> Result<Vec<BaselinePoint>> {
    let mut jobs = Vec::new();
    for &lambda in lambdas {
        for &scheme in schemes {
            for r in 0..cfg.repeats as u64 {
                jobs.push((lambda, scheme, r));
            }
        }
    }
    let runs: Vec<RunSummary> = jobs
        .par_iter()
        .map(|&(lambda, scheme, r)| {
            let sc = scenarios::generate_repeat(&SweepParam::GridCost.apply(cfg, lambda), r)?;
            Ok(RunSummary::new(r, &sc, &scheme.run(&sc, params)?))
        })
        .collect::<Result<_>>()?;
    let per = cfg.repeats.max(1);
    Ok(jobs
        .chunks(per)
        .zip(runs.chunks(per))
        .map(|(job, chunk)| BaselinePoint {
            lambda: job[0].0,
            scheme: job[0].1,
            runs: chunk.to_vec(),
        })
        .collect())
}

/// Mean cost and work of solving instances with `n_users` users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    #[serde(rename = "N")]
    pub n_users: usize,
    pub iterations: f64,
    pub objective: f64,
    pub time_per_iter_ms: f64,
}

/// Solves every repeat at each user count one after another, so that the
/// timings do not compete for cores.
pub fn scaling(cfg: &GenConfig, user_counts: &[usize], params: &AdmmParams) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::with_capacity(user_counts.len());
    for &n in user_counts {
        let cfg = GenConfig { n_users: n, ..cfg.clone() };
        let (mut iters, mut objective, mut per_iter) = (Vec::new(), Vec::new(), Vec::new());
        for r in 0..cfg.repeats as u64 {
            let sc = scenarios::generate_repeat(&cfg, r)?;
            let start = Instant::now();
            let rep = admm::solve(&sc, params, None)?;
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            iters.push(rep.iterations as f64);
            objective.push(rep.objective);
            per_iter.push(elapsed / rep.iterations.max(1) as f64);
        }
        rows.push(ScalingRow {
            n_users: n,
            iterations: mean(&iters),
            objective: mean(&objective),
            time_per_iter_ms: mean(&per_iter),
        });
    }
    Ok(rows)
}
