use super::*;
use crate::model::{offload_energy, FogNode};
use crate::scenario::{generate, GenSpec, TopologyKind};

fn profile(d: f64, c: f64) -> MuProfile {
    MuProfile { data_bits: d, deadline: 0.1, max_cpu: 3e8, cycles_per_bit: c, alpha: 1e-26, beta: 1.0, gain: 1e-12 }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

#[test]
fn z_star_zero_price() {
    assert_eq!(compute_z_star(0.0, 10.0, 1.0).unwrap(), 0.0);
}

#[test]
fn z_star_zeroes_slot_derivative() {
    // ∂/∂t of β t (2^{u/(Wt)} − 1)/h̃ at fixed u is β(2^z − 1 − z ln2 2^z)/h̃.
    for &(g, h, beta) in &[(1e-3, 10.0, 1.0), (0.2, 1e3, 2.0), (5.0, 0.5, 0.7), (1e-9, 1e4, 1.0)] {
        let z = compute_z_star(g, h, beta).unwrap();
        let d_t = beta * (z.exp2() - 1.0 - z * LN_2 * z.exp2()) / h;
        assert!((d_t + g).abs() <= 1e-9 * g.max(1e-12), "γ̂ {g}: ∂t = {d_t}");
    }
}

#[test]
fn z_star_rejects_negative_price() {
    assert!(compute_z_star(-1.0, 1.0, 1.0).is_err());
}

#[test]
fn z_star_grows_with_price() {
    let zs: Vec<f64> = [1e-4, 1e-3, 1e-2, 1e-1].iter().map(|&g| compute_z_star(g, 100.0, 1.0).unwrap()).collect();
    assert!(zs.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn u_bounds_examples() {
    assert_eq!(u_bounds(&profile(2e4, 1000.0)), (0.0, 2e4));
    // 0.1 s · 3e8 Hz / 2000 cycles/bit = 15 000 bits can stay local.
    let (lo, hi) = u_bounds(&profile(2e4, 2000.0));
    assert!((lo - 5000.0).abs() < 1e-9);
    assert_eq!(hi, 2e4);
}

#[test]
fn local_frequency_meets_deadline() {
    let f = optimal_local_frequency(1e4, 800.0, 0.1);
    assert!((f - 8e7).abs() < 1e-6);
}

#[test]
fn marginal_cost_matches_finite_difference() {
    let (w, h) = (4e6, 30.0);
    for &z in &[0.1, 1.0, 3.5] {
        let u = 1e4;
        let t = u / (w * z);
        let step = 1e-3;
        let fd = (offload_energy(u + step, t, h, w).unwrap() - offload_energy(u - step, t, h, w).unwrap()) / (2.0 * step);
        let a = marginal_uplink_cost(z, h, 1.0, w);
        assert!(rel(fd, a) < 1e-6, "z {z}: {fd} vs {a}");
    }
}

#[test]
fn delta_without_helpers_is_uplink_fixed_point() {
    let p = profile(2e4, 1000.0);
    let inp = DeltaInputs { profile: &p, a_cost: 1e-7, rho: 100.0 * RHO_UNIT, helpers: &[], fixed_bits: 0.0 };
    let sol = solve_delta(&inp).unwrap();
    assert!(!sol.boundary);
    assert!(sol.delta > 0.0);
    assert!(inp.residual(sol.delta).abs() <= 1e-8 * p.data_bits);
}

#[test]
fn delta_root_with_helpers() {
    let p = profile(2e4, 1000.0);
    let helpers = [
        (1e-12, 2e-3, Link::Local),
        (5e-13, 1e-3, Link::Backhaul { rate_bps: 2e6 }),
        (0.0, 1e-3, Link::Backhaul { rate_bps: 2e6 }),
    ];
    let inp = DeltaInputs { profile: &p, a_cost: 1e-7, rho: 100.0 * RHO_UNIT, helpers: &helpers, fixed_bits: 0.0 };
    let sol = solve_delta(&inp).unwrap();
    assert!(!sol.boundary);
    assert!(inp.residual(sol.delta).abs() <= 1e-6 * p.data_bits, "F(Δ) = {}", inp.residual(sol.delta));
    // A helper without a CPU price takes nothing.
    assert_eq!(inp.split(sol.delta, 0.0, 1e-3, helpers[2].2), 0.0);
    // Backhaul splits need 2ρΔ > γ/d.
    assert!(2.0 * inp.rho * sol.delta > 1e-3 / 2e6);
}

#[test]
fn recovered_point_satisfies_split_relation() {
    let sc = generate(&GenSpec { seed: 4, topology: TopologyKind::Ring, ..GenSpec::default() }).unwrap();
    let mut dual = DualPoint::uniform(&sc, 1e-12, 1e-3);
    dual.mu[1] = 0.0;
    let rho = 100.0 * RHO_UNIT;
    let z: Vec<f64> = dual
        .aggregated_gamma(&sc)
        .iter()
        .enumerate()
        .map(|(i, &g)| compute_z_star(g, sc.h_tilde(i), sc.mu(i).beta).unwrap())
        .collect();
    let (point, deltas) = recover_with(&dual, rho, &sc, &z, None).unwrap();
    for i in 0..sc.n_mus() {
        let v = &point.mus[i];
        let (lo, hi) = u_bounds(sc.mu(i));
        assert!(v.u >= lo && v.u <= hi);
        let (delta, boundary) = deltas[i];
        if !boundary {
            let gap = v.u - v.assigned_bits() - delta;
            assert!(gap.abs() <= 1e-6 * sc.mu(i).data_bits, "mu {i}: gap {gap}");
        }
        if v.u > 0.0 {
            assert!(rel(v.u / (sc.bandwidth * v.t), z[i]) < 1e-12);
        }
        // Fog 1 has no price, so nobody places bits there.
        for (j, h) in sc.helpers_of_mu(i).iter().enumerate() {
            if h.fog == 1 {
                assert_eq!(v.a[j], 0.0);
            }
        }
    }
}

#[test]
fn subgradients_at_all_local_point() {
    let sc = generate(&GenSpec { seed: 2, ..GenSpec::default() }).unwrap();
    let sub = dual_subgradients(&PrimalPoint::all_local(&sc), &sc);
    for m in 0..sc.n_fogs() {
        assert_eq!(sub.mu[m], -sc.capacity(m));
    }
    for i in 0..sc.n_mus() {
        assert!(sub.gamma[i].iter().all(|&g| g == -sc.mu(i).deadline));
    }
}

#[test]
fn subgradient_step_is_projected() {
    let sc = generate(&GenSpec { seed: 2, n_cells: 2, mus_per_cell: 1, ..GenSpec::default() }).unwrap();
    let dual = DualPoint::uniform(&sc, 1.0, 0.5);
    let sub = Subgradients { mu: vec![-10.0, 3.0], gamma: vec![vec![-10.0, 1.0], vec![2.0, -10.0]] };
    let steps = StepSchedule { delta0: 2.0, alpha0: 1.0, gamma_floor: 0.0 };
    let next = update_duals(&dual, &sub, 3, &steps);
    // n = 3: δ = 2/2 = 1, α = 1/2.
    assert_eq!(next.mu, vec![0.0, 4.0]);
    assert_eq!(next.gamma, vec![vec![0.0, 1.0], vec![1.5, 0.0]]);
}

#[test]
fn no_coop_separates_by_cell() {
    let sc = generate(&GenSpec { seed: 6, topology: TopologyKind::NoCoop, ..GenSpec::default() }).unwrap();
    let cfg = SolverConfig::default();
    let joint = solve(&sc, &cfg).unwrap();
    let mut sum = 0.0;
    for s in 0..sc.n_fogs() {
        let fog = FogNode { id: 0, max_cpu: sc.capacity(s), mus: sc.fogs()[s].mus.clone() };
        let cell = Scenario::new(sc.bandwidth, sc.noise, vec![fog], vec![]).unwrap();
        sum += solve(&cell, &cfg).unwrap().total();
    }
    assert!(rel(joint.total(), sum) < 1e-6, "{} vs {sum}", joint.total());
}

#[test]
fn solve_single_user_reports_feasible_point() {
    let fog = FogNode { id: 0, max_cpu: 4e9, mus: vec![profile(2e4, 1000.0)] };
    let sc = Scenario::new(4e6, 1e-13, vec![fog], vec![]).unwrap();
    let sol = solve(&sc, &SolverConfig::default()).unwrap();
    assert!(sol.converged);
    assert!(check_feasibility(&sol.primal, &sc, 1e-6).is_feasible());
    assert!(sol.total() < weighted_total_energy(&PrimalPoint::all_local(&sc), &sc).total);
}

#[test]
fn config_validation() {
    assert!(SolverConfig::default().validate().is_ok());
    assert!(SolverConfig { rho0: 0.0, ..SolverConfig::default() }.validate().is_err());
    assert!(SolverConfig { rho_growth: 1.0, ..SolverConfig::default() }.validate().is_err());
    assert!(SolverConfig { inner_max_iters: 0, ..SolverConfig::default() }.validate().is_err());
    let bad = SolverConfig { dual_update: DualUpdate::Subgradient { delta0: -1.0, alpha0: 1.0 }, ..SolverConfig::default() };
    assert!(bad.validate().is_err());
}
