mod common;

use common::{assert_close, instance, Instance};
use ehshare_core::model::{self, DualState, PrimalState, Scenario};
use ehshare_core::oracle::{self, Coord, ProxInputs};
use ehshare_core::subproblems::{self as sp, PowerBandwidthBlock};
use ehshare_core::AdmmParams;
use proptest::prelude::*;

const WIDE: (f64, f64) = (0.0, 1e6);

fn inputs(inst: &Instance) -> ProxInputs<'_> {
    ProxInputs {
        sc: &inst.sc,
        prev: &inst.x,
        duals: &inst.y,
        params: &inst.params,
    }
}

fn prox(coord: Coord, inst: &Instance) -> f64 {
    oracle::numeric_prox(coord, &inputs(inst), WIDE).unwrap()
}

fn slots(inst: &Instance) -> impl Iterator<Item = (usize, usize)> {
    let (nn, kk) = (inst.sc.n_users, inst.sc.n_slots);
    (0..nn).flat_map(move |n| (0..kk).map(move |k| (n, k)))
}

fn unit_params() -> AdmmParams {
    AdmmParams {
        rho: 1.0,
        tau: 0.5,
        ..AdmmParams::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn local_draw_matches_oracle(inst in instance()) {
        let buf = sp::rebuild_buffers(&inst.x, &inst.sc);
        for (n, k) in slots(&inst) {
            let got = sp::update_l(&inst.x, &inst.y, &inst.sc, &inst.params, &buf, n, k);
            assert_close(got, prox(Coord::L(n, k), &inst), 1e-8, "l");
        }
    }

    #[test]
    fn donation_matches_oracle(inst in instance()) {
        let buf = sp::rebuild_buffers(&inst.x, &inst.sc);
        let nn = inst.sc.n_users;
        for (m, k) in slots(&inst) {
            for n in (0..nn).filter(|&n| n != m) {
                let got = sp::update_r(&inst.x, &inst.y, &inst.sc, &inst.params, &buf, m, n, k).unwrap();
                assert_close(got, prox(Coord::R(m, n, k), &inst), 1e-8, "r");
            }
        }
    }

    #[test]
    fn donation_usage_matches_oracle(inst in instance()) {
        let buf = sp::rebuild_buffers(&inst.x, &inst.sc);
        for (n, k) in slots(&inst) {
            let got = sp::update_s(&inst.x, &inst.y, &inst.sc, &inst.params, &buf, n, k);
            assert_close(got, prox(Coord::S(n, k), &inst), 1e-8, "s");
        }
    }

    #[test]
    fn grid_energy_matches_oracle(inst in instance()) {
        for (n, k) in slots(&inst) {
            let got = sp::update_g(&inst.x, &inst.y, &inst.sc, &inst.params, n, k);
            assert_close(got, prox(Coord::G(n, k), &inst), 1e-8, "g");
        }
    }

    #[test]
    fn discharge_matches_oracle(inst in instance()) {
        let buf = sp::rebuild_buffers(&inst.x, &inst.sc);
        for (n, k) in slots(&inst) {
            let got = sp::update_d(&inst.x, &inst.y, &inst.sc, &inst.params, &buf, n, k);
            assert_close(got, prox(Coord::D(n, k), &inst), 1e-8, "d");
        }
    }

    #[test]
    fn slacks_match_oracle(inst in instance()) {
        let buf = sp::rebuild_buffers(&inst.x, &inst.sc);
        for (n, k) in slots(&inst) {
            let (u1, u2, u3, u4) = sp::update_u(&inst.x, &inst.y, &inst.sc, &inst.params, &buf, n, k);
            assert_close(u1, prox(Coord::U1(n, k), &inst), 1e-8, "u1");
            assert_close(u2, prox(Coord::U2(n, k), &inst), 1e-8, "u2");
            assert_close(u3, prox(Coord::U3(n, k), &inst), 1e-8, "u3");
            assert_close(u4, prox(Coord::U4(n, k), &inst), 1e-8, "u4");
        }
    }

    #[test]
    fn fixed_bandwidth_power_matches_oracle(inst in instance()) {
        for (n, k) in slots(&inst) {
            let blk = PowerBandwidthBlock::assemble(&inst.x, &inst.y, &inst.sc, &inst.params, n, k);
            let got = sp::solve_power_fixed_bandwidth(&blk, inst.x.a[(n, k)]);
            assert_close(got, prox(Coord::P(n, k), &inst), 1e-8, "p at fixed a");
        }
    }

    #[test]
    fn power_bandwidth_matches_grid_oracle(inst in instance(), pick in any::<prop::sample::Index>()) {
        let cells: Vec<_> = slots(&inst).collect();
        let (n, k) = cells[pick.index(cells.len())];
        let (p, a) = sp::update_pa(&inst.x, &inst.y, &inst.sc, &inst.params, n, k).unwrap();
        let ins = inputs(&inst);
        let (p_box, a_box) = ((0.0, p.max(50.0) * 2.0), (0.0, a.max(10.0) * 2.0));
        let (po, ao) = oracle::numeric_prox_pa(&ins, n, k, p_box, a_box, 1e-6).unwrap();
        assert_close(p, po, 1e-3, "p");
        assert_close(a, ao, 1e-3, "a");
        prop_assert!(ins.objective_pa(n, k, p, a) <= ins.objective_pa(n, k, po, ao) + 1e-6);
    }

    #[test]
    fn updates_never_raise_their_own_objective(inst in instance()) {
        let buf = sp::rebuild_buffers(&inst.x, &inst.sc);
        let ins = inputs(&inst);
        let (sc, x, y, pr) = (&inst.sc, &inst.x, &inst.y, &inst.params);
        for (n, k) in slots(&inst) {
            let (u1, u2, u3, u4) = sp::update_u(x, y, sc, pr, &buf, n, k);
            let moves = [
                (Coord::L(n, k), sp::update_l(x, y, sc, pr, &buf, n, k)),
                (Coord::S(n, k), sp::update_s(x, y, sc, pr, &buf, n, k)),
                (Coord::G(n, k), sp::update_g(x, y, sc, pr, n, k)),
                (Coord::D(n, k), sp::update_d(x, y, sc, pr, &buf, n, k)),
                (Coord::U1(n, k), u1),
                (Coord::U2(n, k), u2),
                (Coord::U3(n, k), u3),
                (Coord::U4(n, k), u4),
            ];
            for (coord, v) in moves {
                let before = ins.objective(coord, coord.get(x));
                prop_assert!(ins.objective(coord, v) <= before + 1e-9 * before.abs().max(1.0), "{coord:?}");
            }
            let (p, a) = sp::update_pa(x, y, sc, pr, n, k).unwrap();
            let before = ins.objective_pa(n, k, x.p[(n, k)], x.a[(n, k)]);
            prop_assert!(ins.objective_pa(n, k, p, a) <= before + 1e-9 * before.abs().max(1.0));
        }
    }

    #[test]
    fn updates_are_pure(inst in instance()) {
        let buf = sp::rebuild_buffers(&inst.x, &inst.sc);
        prop_assert_eq!(&buf, &sp::rebuild_buffers(&inst.x, &inst.sc));
        for (n, k) in slots(&inst) {
            let once = sp::update_pa(&inst.x, &inst.y, &inst.sc, &inst.params, n, k).unwrap();
            let twice = sp::update_pa(&inst.x, &inst.y, &inst.sc, &inst.params, n, k).unwrap();
            prop_assert_eq!(once.0.to_bits(), twice.0.to_bits());
            prop_assert_eq!(once.1.to_bits(), twice.1.to_bits());
        }
    }

    #[test]
    fn buffers_match_direct_sums(inst in instance()) {
        let (sc, x) = (&inst.sc, &inst.x);
        let buf = sp::rebuild_buffers(x, sc);
        let (nn, kk) = (sc.n_users, sc.n_slots);
        let battery = model::battery_trajectory(sc, x);
        for n in 0..nn {
            for k in 0..kk {
                let mut incoming = 0.0;
                let mut outgoing = 0.0;
                for m in (0..nn).filter(|&m| m != n) {
                    incoming += x.r[(m, n, k)];
                    outgoing += x.r[(n, m, k)];
                }
                assert_close(buf.incoming_sum[(n, k)], incoming, 1e-12, "incoming");
                assert_close(buf.outgoing_sum[(n, k)], outgoing, 1e-12, "outgoing");
                let harvest: f64 = (0..=k).map(|t| sc.harvest[(n, t)]).sum();
                assert_close(buf.cum_harvest[(n, k)], harvest, 1e-12, "cumulative harvest");
                // the residual is minus the battery level
                assert_close(buf.residual[(n, k)], -battery[(n, k)], 1e-9, "residual");
                let tail: f64 = (k..kk).map(|v| buf.residual[(n, v)]).sum();
                assert_close(buf.residual_tail[(n, k)], tail, 1e-9, "residual tail");
                let u1: f64 = (k..kk).map(|v| x.u1[(n, v)]).sum();
                let u2: f64 = (k..kk).map(|v| x.u2[(n, v)]).sum();
                assert_close(buf.u1_tail[(n, k)], u1, 1e-12, "u1 tail");
                assert_close(buf.u2_tail[(n, k)], u2, 1e-12, "u2 tail");
            }
        }
        for k in 0..kk {
            assert_close(buf.bandwidth_total[k], (0..nn).map(|n| x.a[(n, k)]).sum(), 1e-12, "bandwidth");
        }
    }
}

fn single(harvest: f64, bmax: f64, pmax: f64) -> Scenario {
    let mut sc = Scenario::uniform(1, 1);
    sc.harvest[(0, 0)] = harvest;
    sc.battery_cap = vec![bmax];
    sc.power_cap = vec![pmax];
    sc
}

#[test]
fn grid_update_reference_value() {
    let mut sc = single(0.0, 20.0, 20.0);
    sc.grid_cost = 0.1;
    let mut x = PrimalState::for_scenario(&sc);
    x.p[(0, 0)] = 2.0;
    x.l[(0, 0)] = 0.5;
    x.s[(0, 0)] = 0.3;
    let mut y = DualState::for_scenario(&sc);
    y.y3[(0, 0)] = 1.0;
    let params = unit_params();
    assert_close(sp::update_g(&x, &y, &sc, &params, 0, 0), 1.4, 1e-12, "g");
    let ins = ProxInputs { sc: &sc, prev: &x, duals: &y, params: &params };
    assert_close(oracle::numeric_prox(Coord::G(0, 0), &ins, WIDE).unwrap(), 1.4, 1e-9, "oracle g");

    sc.grid_cost = 0.0;
    y.y3[(0, 0)] = 0.0;
    x.p[(0, 0)] = 0.8;
    x.g[(0, 0)] = 3.0;
    let want = 0.5 * 3.0 / 1.5;
    assert_close(sp::update_g(&x, &y, &sc, &params, 0, 0), want, 1e-12, "g at balance");
    let ins = ProxInputs { sc: &sc, prev: &x, duals: &y, params: &params };
    assert_close(oracle::numeric_prox(Coord::G(0, 0), &ins, WIDE).unwrap(), want, 1e-9, "oracle g at balance");
}

#[test]
fn zero_state_gives_zero_updates() {
    let sc = single(0.0, 0.0, 20.0);
    let x = PrimalState::for_scenario(&sc);
    let y = DualState::for_scenario(&sc);
    let params = unit_params();
    let buf = sp::rebuild_buffers(&x, &sc);
    assert_eq!(sp::update_l(&x, &y, &sc, &params, &buf, 0, 0), 0.0);
    assert_eq!(sp::update_s(&x, &y, &sc, &params, &buf, 0, 0), 0.0);
    assert_eq!(sp::update_d(&x, &y, &sc, &params, &buf, 0, 0), 0.0);
    let mut costly = sc.clone();
    costly.grid_cost = 0.1;
    assert_eq!(sp::update_g(&x, &y, &costly, &params, 0, 0), 0.0);
    let ins = ProxInputs { sc: &sc, prev: &x, duals: &y, params: &params };
    assert_eq!(oracle::numeric_prox(Coord::L(0, 0), &ins, WIDE).unwrap(), 0.0);
}

#[test]
fn slack_reference_values() {
    let params = unit_params();
    let sc = single(10.0, 20.0, 20.0);
    let x = PrimalState::for_scenario(&sc);
    let y = DualState::for_scenario(&sc);
    let buf = sp::rebuild_buffers(&x, &sc);
    let (u1, u2, _, _) = sp::update_u(&x, &y, &sc, &params, &buf, 0, 0);
    assert_close(u1, 10.0 / 1.5, 1e-12, "u1");
    assert_close(u2, (-10.0_f64 + 20.0).max(0.0) / 1.5, 1e-12, "u2");
    let ins = ProxInputs { sc: &sc, prev: &x, duals: &y, params: &params };
    assert_close(oracle::numeric_prox(Coord::U1(0, 0), &ins, WIDE).unwrap(), u1, 1e-9, "oracle u1");

    let zero = single(0.0, 0.0, 1e-300);
    let buf0 = sp::rebuild_buffers(&x, &zero);
    let (a, b, c, d) = sp::update_u(&x, &y, &zero, &params, &buf0, 0, 0);
    assert_eq!((a, b, d), (0.0, 0.0, 0.0));
    assert!(c < 1e-290);

    let mut at_cap = PrimalState::for_scenario(&sc);
    at_cap.p[(0, 0)] = 20.0;
    at_cap.u3[(0, 0)] = 3.0;
    let buf = sp::rebuild_buffers(&at_cap, &sc);
    let (_, _, u3, _) = sp::update_u(&at_cap, &y, &sc, &params, &buf, 0, 0);
    assert_close(u3, 0.5 * 3.0 / 1.5, 1e-12, "u3 at the power cap");
}

#[test]
fn zero_gain_reduces_to_quadratics() {
    let mut sc = Scenario::uniform(2, 1);
    sc.gain[(0, 0)] = 0.0;
    let params = unit_params();
    let (rho, tau) = (params.rho, params.tau);
    let mut x = PrimalState::for_scenario(&sc);
    x.l[(0, 0)] = 1.0;
    x.s[(0, 0)] = 0.5;
    x.g[(0, 0)] = 2.0;
    x.u3[(0, 0)] = 4.0;
    x.p[(0, 0)] = 3.0;
    x.a[(0, 0)] = 0.4;
    x.a[(1, 0)] = 0.3;
    let mut y = DualState::for_scenario(&sc);
    y.y3[(0, 0)] = 0.2;
    y.y4[(0, 0)] = -0.1;
    y.y6[0] = 0.05;
    let (p, a) = sp::update_pa(&x, &y, &sc, &params, 0, 0).unwrap();
    let want_p = (rho * 3.5 + rho * (20.0 - 4.0) + tau * 3.0 - 0.2 + 0.1) / (2.0 * rho + tau);
    let want_a = (rho * (1.0 - 0.3) - 0.05 + tau * 0.4) / (rho + tau);
    assert_close(p, want_p.max(0.0), 1e-12, "p");
    assert_close(a, want_a.max(0.0), 1e-12, "a");
}

#[test]
fn priced_out_link_falls_back_to_zero() {
    let sc = Scenario::uniform(1, 1);
    let x = PrimalState::for_scenario(&sc);
    let mut y = DualState::for_scenario(&sc);
    // c_p = y3 - rho P_max = 5 exceeds W H = 1
    y.y3[(0, 0)] = 25.0;
    y.y6[0] = 2.0;
    let params = unit_params();
    assert_eq!(sp::update_pa(&x, &y, &sc, &params, 0, 0).unwrap(), (0.0, 0.0));
    let strict = AdmmParams { strict_paper_problem1: true, ..params };
    y.y6[0] = -2.0;
    assert_eq!(sp::update_pa(&x, &y, &sc, &strict, 0, 0).unwrap(), (0.0, 0.0));
    let (p, a) = sp::update_pa(&x, &y, &sc, &params, 0, 0).unwrap();
    assert_eq!(p, 0.0);
    assert!(a > 0.0, "the restricted minimizer keeps bandwidth when y6 < 0");
}

#[test]
fn fresh_link_matches_fine_grid() {
    let sc = Scenario::uniform(1, 1);
    let x = PrimalState::for_scenario(&sc);
    let y = DualState::for_scenario(&sc);
    let params = unit_params();
    let (p, a) = sp::update_pa(&x, &y, &sc, &params, 0, 0).unwrap();
    let ins = ProxInputs { sc: &sc, prev: &x, duals: &y, params: &params };
    let (po, ao) = oracle::numeric_prox_pa(&ins, 0, 0, (0.0, 40.0), (0.0, 2.0), 1e-4).unwrap();
    assert_close(p, po, 1e-3, "p");
    assert_close(a, ao, 1e-3, "a");
    assert!(p > 0.0 && a > 0.0);
}

#[test]
fn local_draw_grows_with_balance_multiplier() {
    let sc = single(3.0, 20.0, 20.0);
    let x = PrimalState::for_scenario(&sc);
    let params = unit_params();
    let buf = sp::rebuild_buffers(&x, &sc);
    let mut last = -1.0;
    for y3 in [20.0, 30.0, 40.0, 80.0] {
        let mut y = DualState::for_scenario(&sc);
        y.y3[(0, 0)] = y3;
        let l = sp::update_l(&x, &y, &sc, &params, &buf, 0, 0);
        let ins = ProxInputs { sc: &sc, prev: &x, duals: &y, params: &params };
        assert_close(l, oracle::numeric_prox(Coord::L(0, 0), &ins, WIDE).unwrap(), 1e-8, "l");
        assert!(l > last);
        last = l;
    }
}

#[test]
fn last_slot_donation_reference() {
    let sc = Scenario::uniform(2, 1);
    let mut x = PrimalState::for_scenario(&sc);
    x.r[(0, 1, 0)] = 2.0;
    let y = DualState::for_scenario(&sc);
    let params = unit_params();
    let buf = sp::rebuild_buffers(&x, &sc);
    let got = sp::update_r(&x, &y, &sc, &params, &buf, 0, 1, 0).unwrap();
    let ins = ProxInputs { sc: &sc, prev: &x, duals: &y, params: &params };
    assert_close(got, oracle::numeric_prox(Coord::R(0, 1, 0), &ins, WIDE).unwrap(), 1e-8, "r");
    assert!(sp::update_r(&x, &y, &sc, &params, &buf, 1, 1, 0).is_err());

    let mut pricey = sc.clone();
    pricey.coop_cost = 1e6;
    let buf = sp::rebuild_buffers(&x, &pricey);
    assert_eq!(sp::update_r(&x, &y, &pricey, &params, &buf, 0, 1, 0).unwrap(), 0.0);
}

#[test]
fn donation_update_is_symmetric_under_swap() {
    let mut sc = Scenario::uniform(2, 2);
    sc.harvest[(0, 0)] = 4.0;
    sc.harvest[(1, 1)] = 7.0;
    let mut x = PrimalState::for_scenario(&sc);
    x.r[(0, 1, 1)] = 1.5;
    x.l[(0, 0)] = 2.0;
    x.s[(1, 1)] = 0.5;
    let mut y = DualState::for_scenario(&sc);
    y.y1[(0, 1)] = 0.3;
    y.y5[(1, 0)] = -0.2;

    let swap = |g: &ehshare_core::tensor::Grid| {
        ehshare_core::tensor::Grid::from_fn(2, 2, |n, k| g[(1 - n, k)])
    };
    let mut sc2 = sc.clone();
    sc2.harvest = swap(&sc.harvest);
    let mut x2 = PrimalState::for_scenario(&sc);
    x2.l = swap(&x.l);
    x2.s = swap(&x.s);
    x2.r[(1, 0, 1)] = 1.5;
    let mut y2 = DualState::for_scenario(&sc);
    y2.y1 = swap(&y.y1);
    y2.y5 = swap(&y.y5);

    let params = unit_params();
    let buf = sp::rebuild_buffers(&x, &sc);
    let buf2 = sp::rebuild_buffers(&x2, &sc2);
    for k in 0..2 {
        let a = sp::update_r(&x, &y, &sc, &params, &buf, 0, 1, k).unwrap();
        let b = sp::update_r(&x2, &y2, &sc2, &params, &buf2, 1, 0, k).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn huge_usage_multiplier_shuts_off_usage() {
    let sc = single(5.0, 20.0, 20.0);
    let mut x = PrimalState::for_scenario(&sc);
    x.s[(0, 0)] = 3.0;
    let mut y = DualState::for_scenario(&sc);
    y.y5[(0, 0)] = 1e9;
    let buf = sp::rebuild_buffers(&x, &sc);
    assert_eq!(sp::update_s(&x, &y, &sc, &unit_params(), &buf, 0, 0), 0.0);
}

#[test]
fn large_battery_multipliers_stop_discharge() {
    let sc = single(5.0, 20.0, 20.0);
    let mut x = PrimalState::for_scenario(&sc);
    x.d[(0, 0)] = 1.0;
    let mut y = DualState::for_scenario(&sc);
    y.y1[(0, 0)] = 50.0;
    y.y2[(0, 0)] = 50.0;
    let buf = sp::rebuild_buffers(&x, &sc);
    assert_eq!(sp::update_d(&x, &y, &sc, &unit_params(), &buf, 0, 0), 0.0);
}

#[test]
fn single_donation_buffers() {
    let sc = Scenario::uniform(2, 1);
    let mut x = PrimalState::for_scenario(&sc);
    x.r[(0, 1, 0)] = 3.0;
    let buf = sp::rebuild_buffers(&x, &sc);
    assert_eq!(buf.incoming_sum[(1, 0)], 3.0);
    assert_eq!(buf.outgoing_sum[(0, 0)], 3.0);
    assert_eq!(buf.incoming_sum[(0, 0)], 0.0);
    assert_eq!(buf.outgoing_sum[(1, 0)], 0.0);
}

#[test]
fn zero_state_residual_is_minus_cumulative_harvest() {
    let mut sc = Scenario::uniform(2, 3);
    sc.harvest = ehshare_core::tensor::Grid::from_fn(2, 3, |n, k| (n + 2 * k) as f64);
    let buf = sp::rebuild_buffers(&PrimalState::for_scenario(&sc), &sc);
    let e = sc.cumulative_harvest();
    for n in 0..2 {
        for k in 0..3 {
            assert_eq!(buf.residual[(n, k)], -e[(n, k)]);
        }
    }
}
