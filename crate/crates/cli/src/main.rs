//! `ehshare`: generate instances, solve them, and run the parameter studies.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ehshare_core::admm::{self, AdmmParams};
use ehshare_core::experiments::{self, BaselineRow, Scheme, SweepParam, SweepRow};
use ehshare_core::report::{self, Format};
use ehshare_core::scenarios::{self, GainModel, GenConfig, PerNode};
use ehshare_core::{Error, Result, Scenario};

#[derive(Parser)]
#[command(name = "ehshare", version, about = "Energy/bandwidth allocation with energy cooperation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random instance as JSON.
    Generate {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Which repeat of the seed to draw.
        #[arg(long, default_value_t = 0)]
        repeat: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Solve one instance and write the allocation (csv) or full report (json).
    Solve {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Solve this saved instance instead of generating one.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        repeat: u64,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Also write the augmented-Lagrangian trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Mean objective and energy use over a grid of grid-energy prices.
    SweepLambda {
        #[command(flatten)]
        instance: InstanceArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Mean objective and energy use over a grid of cooperation prices.
    SweepMu {
        #[command(flatten)]
        instance: InstanceArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Per-node energy sources and sinks, averaged over repeats.
    Flows {
        #[command(flatten)]
        instance: InstanceArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Proposed scheme against fixed-bandwidth and sliding-window schemes.
    Baselines {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Window lookaheads to evaluate (comma list).
        #[arg(long, default_value = "0,1", value_parser = parse_usize_list)]
        window: UsizeList,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Iterations and time per iteration as the number of users grows.
    Scaling {
        #[command(flatten)]
        instance: InstanceArgs,
        /// User counts to run (comma list).
        #[arg(long = "user-counts", default_value = "5,10,15,20", value_parser = parse_usize_list)]
        user_counts: UsizeList,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Debug, Clone)]
struct FloatList(Vec<f64>);

#[derive(Debug, Clone)]
struct UsizeList(Vec<usize>);

fn parse_float_list(s: &str) -> std::result::Result<FloatList, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(FloatList)
}

fn parse_usize_list(s: &str) -> std::result::Result<UsizeList, String> {
    s.split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(UsizeList)
}

#[derive(Args, Clone)]
struct InstanceArgs {
    #[arg(long, default_value_t = 5)]
    users: usize,
    #[arg(long, default_value_t = 5)]
    slots: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 12)]
    repeats: usize,
    /// Mean harvest per slot: one value, or one per node.
    #[arg(long, default_value = "10", value_parser = parse_float_list)]
    delta: FloatList,
    /// Variance of the harvest distribution.
    #[arg(long, default_value_t = 4.0)]
    variance: f64,
    /// Use this channel gain everywhere instead of unit-mean exponential draws.
    #[arg(long)]
    constant_gain: Option<f64>,
    #[arg(long, default_value_t = 20.0)]
    bmax: f64,
    #[arg(long, default_value_t = 20.0)]
    pmax: f64,
    #[arg(long, default_value_t = 1.0)]
    weight: f64,
    /// Grid-energy price; a comma list for sweep-lambda and baselines.
    #[arg(long, value_parser = parse_float_list)]
    lambda: Option<FloatList>,
    /// Cooperation price; a comma list for sweep-mu.
    #[arg(long, value_parser = parse_float_list)]
    mu: Option<FloatList>,
    /// Fraction of donated energy that arrives.
    #[arg(long, default_value_t = 1.0)]
    efficiency: f64,
}

fn first(list: &Option<FloatList>, default: f64) -> f64 {
    list.as_ref().and_then(|l| l.0.first().copied()).unwrap_or(default)
}

const DEFAULT_GRID: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

impl InstanceArgs {
    /// The generator configuration. List-valued price flags are only
    /// accepted for the parameter being swept.
    fn config(&self, swept: Option<SweepParam>) -> Result<GenConfig> {
        for (list, name, param) in [
            (&self.lambda, "--lambda", SweepParam::GridCost),
            (&self.mu, "--mu", SweepParam::CoopCost),
        ] {
            if swept != Some(param) && list.as_ref().is_some_and(|l| l.0.len() > 1) {
                return Err(Error::InvalidParams(format!("{name} takes a single value for this command")));
            }
        }
        let delta = match self.delta.0.as_slice() {
            [one] => PerNode::Same(*one),
            many => PerNode::Each(many.to_vec()),
        };
        let base = GenConfig::default();
        Ok(GenConfig {
            n_users: self.users,
            n_slots: self.slots,
            delta,
            harvest_variance: self.variance,
            gain_model: self.constant_gain.map_or(GainModel::ExponentialUnit, GainModel::Constant),
            battery_cap: self.bmax.into(),
            power_cap: self.pmax.into(),
            weight: self.weight.into(),
            grid_cost: first(&self.lambda, base.grid_cost),
            coop_cost: first(&self.mu, base.coop_cost),
            transfer_efficiency: self.efficiency,
            seed: self.seed,
            repeats: self.repeats,
        })
    }

    /// The swept values in ascending order, so output rows are too.
    fn grid(list: &Option<FloatList>) -> Vec<f64> {
        let mut grid = list.as_ref().map_or_else(|| DEFAULT_GRID.to_vec(), |l| l.0.clone());
        grid.sort_by(f64::total_cmp);
        grid
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StopRule {
    /// Stop once the augmented Lagrangian settles and every constraint
    /// residual is below --residual-tol.
    Feasible,
    /// Stop once the augmented Lagrangian changes by less than --eta.
    Psi,
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-3)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 1e-6)]
    eta: f64,
    #[arg(long = "max-iter", default_value_t = 500_000)]
    max_iter: usize,
    /// Use the literal (0, 0) fallback in the power/bandwidth update.
    #[arg(long = "strict-paper")]
    strict_paper: bool,
    #[arg(long, value_enum, default_value_t = StopRule::Feasible)]
    stop: StopRule,
    #[arg(long = "residual-tol", default_value_t = 1e-4)]
    residual_tol: f64,
}

impl SolverArgs {
    fn params(&self) -> AdmmParams {
        let p = AdmmParams {
            rho: self.rho,
            gamma: self.gamma,
            tau: self.tau,
            eta: self.eta,
            max_iter: self.max_iter,
            strict_paper_problem1: self.strict_paper,
            ..AdmmParams::default()
        };
        match self.stop {
            StopRule::Feasible => p.with_residual_stop(self.residual_tol),
            StopRule::Psi => p,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Args, Clone)]
struct OutputArgs {
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
}

impl OutputArgs {
    fn sink(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(path) => Box::new(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?)),
            None => Box::new(io::stdout().lock()),
        })
    }

    fn write_rows<T: Serialize>(&self, rows: &[T]) -> Result<()> {
        let mut out = self.sink()?;
        match self.format {
            OutFormat::Csv => report::write_rows_csv(rows, &mut out)?,
            OutFormat::Json => {
                serde_json::to_writer_pretty(&mut out, rows)?;
                writeln!(out).map_err(|e| Error::io(self.display_path(), e))?;
            }
        }
        out.flush().map_err(|e| Error::io(self.display_path(), e))
    }

    fn display_path(&self) -> &Path {
        self.out.as_deref().unwrap_or(Path::new("<stdout>"))
    }
}

fn warn_tau(params: &AdmmParams, sc: &Scenario) {
    if !admm::validate_params(params, sc) {
        eprintln!(
            "warning: tau = {} is below the sufficient convergence threshold {:.4}",
            params.tau,
            admm::tau_threshold(params, sc)
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { instance, repeat, output } => {
            let sc = scenarios::generate_repeat(&instance.config(None)?, repeat)?;
            let mut out = output.sink()?;
            writeln!(out, "{}", scenarios::to_json(&sc)?).map_err(|e| Error::io(output.display_path(), e))?;
            out.flush().map_err(|e| Error::io(output.display_path(), e))
        }
        Command::Solve {
            instance,
            scenario,
            repeat,
            solver,
            output,
            trace,
        } => {
            let sc = match scenario {
                Some(path) => scenarios::load(path)?,
                None => scenarios::generate_repeat(&instance.config(None)?, repeat)?,
            };
            let params = solver.params();
            warn_tau(&params, &sc);
            let rep = admm::solve(&sc, &params, None)?;
            eprintln!(
                "objective {:.6} after {} iterations (converged: {}, max residual {:.2e})",
                rep.objective,
                rep.iterations,
                rep.converged,
                rep.residuals.max()
            );
            if let Some(path) = trace {
                report::emit_trace(&rep, path)?;
            }
            match (&output.out, output.format) {
                (Some(path), OutFormat::Csv) => report::emit_report(&sc, &rep, Format::Csv, path),
                (Some(path), OutFormat::Json) => report::emit_report(&sc, &rep, Format::Json, path),
                (None, OutFormat::Csv) => report::write_allocation_csv(&sc, &rep.primal, io::stdout().lock()),
                (None, OutFormat::Json) => {
                    let mut out = io::stdout().lock();
                    serde_json::to_writer_pretty(&mut out, &rep)?;
                    writeln!(out).map_err(|e| Error::io("<stdout>", e))
                }
            }
        }
        Command::SweepLambda { instance, solver, output } => {
            let points = experiments::sweep(
                &instance.config(Some(SweepParam::GridCost))?,
                SweepParam::GridCost,
                &InstanceArgs::grid(&instance.lambda),
                &solver.params(),
            )?;
            output.write_rows(&points.iter().map(SweepRow::from).collect::<Vec<_>>())
        }
        Command::SweepMu { instance, solver, output } => {
            let points = experiments::sweep(
                &instance.config(Some(SweepParam::CoopCost))?,
                SweepParam::CoopCost,
                &InstanceArgs::grid(&instance.mu),
                &solver.params(),
            )?;
            output.write_rows(&points.iter().map(SweepRow::from).collect::<Vec<_>>())
        }
        Command::Flows { instance, solver, output } => {
            output.write_rows(&experiments::flows(&instance.config(None)?, &solver.params())?)
        }
        Command::Baselines {
            instance,
            window,
            solver,
            output,
        } => {
            let mut schemes = vec![Scheme::Proposed, Scheme::EqualBandwidth, Scheme::Greedy];
            schemes.extend(window.0.iter().map(|&t| Scheme::Window(t)));
            let points = experiments::compare_baselines(
                &instance.config(Some(SweepParam::GridCost))?,
                &InstanceArgs::grid(&instance.lambda),
                &schemes,
                &solver.params(),
            )?;
            output.write_rows(&points.iter().map(BaselineRow::from).collect::<Vec<_>>())
        }
        Command::Scaling {
            instance,
            user_counts,
            solver,
            output,
        } => output.write_rows(&experiments::scaling(
            &instance.config(None)?,
            &user_counts.0,
            &solver.params(),
        )?),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("EHSHARE_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .map_err(|_| Error::InvalidParams(format!("EHSHARE_THREADS = `{value}` is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidParams(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
