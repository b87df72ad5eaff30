//! Comparison schemes: fixed bandwidth splits and a sliding-window planner.

use crate::admm::{self, AdmmParams, BandwidthPolicy, SolveReport};
use crate::error::{Error, Result};
use crate::model::{self, DualState, PrimalState, Scenario};
use crate::tensor::Grid;

/// Every link gets `1/N` of the band in every slot.
pub fn solve_equal_bandwidth(sc: &Scenario, params: &AdmmParams) -> Result<SolveReport> {
    let share = 1.0 / sc.n_users as f64;
    let shares = Grid::filled(sc.n_users, sc.n_slots, share);
    admm::solve_with_policy(sc, params, &BandwidthPolicy::Fixed(shares), None)
}

/// Per-slot shares that give the whole band to the strongest link, ties
/// going to the lowest index.
pub fn greedy_shares(sc: &Scenario) -> Grid {
    let mut shares = Grid::zeros(sc.n_users, sc.n_slots);
    for k in 0..sc.n_slots {
        let mut best = 0;
        for n in 1..sc.n_users {
            if sc.gain[(n, k)] > sc.gain[(best, k)] {
                best = n;
            }
        }
        shares[(best, k)] = 1.0;
    }
    shares
}

pub fn solve_greedy_bandwidth(sc: &Scenario, params: &AdmmParams) -> Result<SolveReport> {
    admm::solve_with_policy(sc, params, &BandwidthPolicy::Fixed(greedy_shares(sc)), None)
}

/// Online planner that sees `lookahead` slots beyond the current one.
///
/// At slot `i` the instance restricted to slots `i..=min(i + lookahead, K - 1)`
/// is solved from scratch, with the battery level carried from slot `i - 1`
/// added to the first slot's harvest; only the slot-`i` decisions are kept.
pub fn solve_window(sc: &Scenario, lookahead: usize, params: &AdmmParams) -> Result<SolveReport> {
    sc.validate()?;
    let (nn, kk) = (sc.n_users, sc.n_slots);
    if lookahead >= kk {
        return Err(Error::InvalidParams(format!(
            "lookahead {lookahead} must be below the horizon {kk}"
        )));
    }
    let eff = sc.transfer_efficiency;
    let mut x = PrimalState::for_scenario(sc);
    let mut y = DualState::for_scenario(sc);
    let mut carried = vec![0.0_f64; nn];
    let mut iterations = 0;
    let mut converged = true;
    let mut trace = Vec::new();

    for i in 0..kk {
        let end = (i + lookahead + 1).min(kk);
        let mut sub = sc.window(i, end);
        for (n, b) in carried.iter().enumerate() {
            sub.harvest[(n, 0)] += b.max(0.0);
        }
        let rep = admm::solve(&sub, params, None).map_err(|e| Error::Window {
            context: format!("window starting at slot {i}"),
            source: Box::new(e),
        })?;
        iterations += rep.iterations;
        converged &= rep.converged;
        trace.extend_from_slice(&rep.psi_trace);

        let w = &rep.primal;
        for n in 0..nn {
            x.p[(n, i)] = w.p[(n, 0)];
            x.a[(n, i)] = w.a[(n, 0)];
            x.l[(n, i)] = w.l[(n, 0)];
            x.s[(n, i)] = w.s[(n, 0)];
            x.g[(n, i)] = w.g[(n, 0)];
            x.d[(n, i)] = w.d[(n, 0)];
            for m in (0..nn).filter(|&m| m != n) {
                x.r[(n, m, i)] = w.r[(n, m, 0)];
            }
            y.y1[(n, i)] = rep.dual.y1[(n, 0)];
            y.y2[(n, i)] = rep.dual.y2[(n, 0)];
            y.y3[(n, i)] = rep.dual.y3[(n, 0)];
            y.y4[(n, i)] = rep.dual.y4[(n, 0)];
            y.y5[(n, i)] = rep.dual.y5[(n, 0)];
        }
        y.y6[i] = rep.dual.y6[0];
        for (n, b) in carried.iter_mut().enumerate() {
            *b = b.max(0.0) + sc.harvest[(n, i)] - x.l[(n, i)] - x.outgoing(n, i) + eff * x.incoming(n, i)
                - x.s[(n, i)]
                - x.d[(n, i)];
        }
    }

    x.fill_slacks(sc);
    Ok(SolveReport {
        objective: model::objective(sc, &x)?,
        iterations,
        converged,
        theorem1_satisfied: admm::validate_params(params, sc),
        residuals: model::feasibility(sc, &x, params.report_tol),
        params: *params,
        primal: x,
        dual: y,
        psi_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_ties_go_to_lowest_index() {
        let mut sc = Scenario::uniform(3, 2);
        sc.gain[(2, 1)] = 2.0;
        let shares = greedy_shares(&sc);
        assert_eq!(shares.row(0), &[1.0, 0.0]);
        assert_eq!(shares.row(2), &[0.0, 1.0]);
        assert_eq!(shares.col_sum(0), 1.0);
    }

    #[test]
    fn lookahead_beyond_horizon_is_rejected() {
        let sc = Scenario::uniform(2, 2);
        assert!(solve_window(&sc, 2, &AdmmParams::default()).is_err());
    }
}
