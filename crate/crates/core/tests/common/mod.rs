#![allow(dead_code)]

use ehshare_core::model::{DualState, PrimalState, Scenario};
use ehshare_core::tensor::{Cube, Grid};
use ehshare_core::AdmmParams;
use proptest::collection::vec;
use proptest::prelude::*;

/// A random small instance with an arbitrary nonnegative iterate and
/// arbitrary multipliers: the full input of one sweep.
#[derive(Debug, Clone)]
pub struct Instance {
    pub sc: Scenario,
    pub x: PrimalState,
    pub y: DualState,
    pub params: AdmmParams,
}

fn grid(n: usize, k: usize, vals: &[f64]) -> Grid {
    Grid::from_fn(n, k, |i, j| vals[i * k + j])
}

pub fn instance_with(max_users: usize, max_slots: usize) -> impl Strategy<Value = Instance> {
    (1..=max_users, 1..=max_slots).prop_flat_map(|(n, k)| {
        let nk = n * k;
        (
            (vec(0.0..3.0, nk), vec(0.0..15.0, nk)),
            (vec(0.0..25.0, n), vec(0.5..25.0, n), vec(0.2..2.0, n)),
            (0.0..1.0, 0.0..1.0, 0.5..=1.0),
            vec(0.0..10.0, 10 * nk),
            vec(0.0..5.0, n * n * k),
            vec(-5.0..5.0, 5 * nk + k),
            (0.05..2.0, 0.1..2.0),
        )
            .prop_map(move |(gh, caps, costs, flat, donations, duals, (rho, tau))| {
                let sc = Scenario {
                    gain: grid(n, k, &gh.0),
                    harvest: grid(n, k, &gh.1),
                    battery_cap: caps.0,
                    power_cap: caps.1,
                    weight: caps.2,
                    grid_cost: costs.0,
                    coop_cost: costs.1,
                    transfer_efficiency: costs.2,
                    ..Scenario::uniform(n, k)
                };
                let block = |i: usize| grid(n, k, &flat[i * nk..(i + 1) * nk]);
                let mut r = Cube::zeros(n, k);
                for m in 0..n {
                    for to in (0..n).filter(|&to| to != m) {
                        for t in 0..k {
                            r[(m, to, t)] = donations[(m * n + to) * k + t];
                        }
                    }
                }
                let x = PrimalState {
                    p: block(0),
                    a: Grid::from_fn(n, k, |i, j| flat[nk + i * k + j] / 10.0),
                    l: block(2),
                    r,
                    s: block(3),
                    g: block(4),
                    d: block(5),
                    u1: block(6),
                    u2: block(7),
                    u3: block(8),
                    u4: block(9),
                };
                let dual = |i: usize| grid(n, k, &duals[i * nk..(i + 1) * nk]);
                let y = DualState {
                    y1: dual(0),
                    y2: dual(1),
                    y3: dual(2),
                    y4: dual(3),
                    y5: dual(4),
                    y6: duals[5 * nk..].to_vec(),
                };
                let params = AdmmParams {
                    rho,
                    tau,
                    ..AdmmParams::default()
                };
                Instance { sc, x, y, params }
            })
    })
}

pub fn instance() -> impl Strategy<Value = Instance> {
    instance_with(3, 3)
}

pub fn assert_close(got: f64, want: f64, tol: f64, what: &str) {
    assert!(
        (got - want).abs() <= tol,
        "{what}: got {got}, want {want} (diff {:e}, tol {tol:e})",
        (got - want).abs()
    );
}
