use fogmec::model::{
    check_feasibility, eliminated_local_energy, inverse_rate_power, offload_energy, task_completion_time,
    weighted_total_energy,
};
use fogmec::special_fn::lambert_w0;
use fogmec::{dual_solver, greedy, scenario, GenSpec, MuProfile, PrimalPoint, Scenario, SolverConfig, TopologyKind};
use proptest::prelude::*;

fn topology() -> impl Strategy<Value = TopologyKind> {
    prop::sample::select(TopologyKind::ALL.to_vec())
}

fn small_spec() -> impl Strategy<Value = GenSpec> {
    (any::<u64>(), 2usize..4, 1usize..4, topology(), 1e6..1e7f64, 5e3..3e4f64).prop_map(|(seed, n, k, t, w, d)| GenSpec {
        seed,
        n_cells: n,
        mus_per_cell: k,
        topology: t,
        bandwidth_hz: w,
        data_bits: d,
        ..GenSpec::default()
    })
}

fn profile() -> impl Strategy<Value = MuProfile> {
    (1e3..1e5f64, 0.01..1.0f64, 1e8..1e9f64, 100.0..2000.0f64, 0.5..2.0f64).prop_map(|(d, tb, f, c, beta)| MuProfile {
        data_bits: d,
        deadline: tb,
        max_cpu: f,
        cycles_per_bit: c,
        alpha: 1e-26,
        beta,
        gain: 1e-12,
    })
}

proptest! {
    #[test]
    fn rate_power_is_convex(r1 in 0.0..4e7f64, r2 in 0.0..4e7f64, h in 1e-2..1e4f64) {
        let w = 4e6;
        let mid = inverse_rate_power(0.5 * (r1 + r2), h, w);
        let chord = 0.5 * (inverse_rate_power(r1, h, w) + inverse_rate_power(r2, h, w));
        prop_assert!(mid <= chord * (1.0 + 1e-12));
    }

    #[test]
    fn longer_slots_cost_less(u in 1.0..1e5f64, t in 1e-5..0.1f64, k in 1.0..10.0f64, h in 1e-2..1e4f64) {
        let w = 4e6;
        let a = offload_energy(u, t, h, w).unwrap();
        let b = offload_energy(u, t * k, h, w).unwrap();
        prop_assert!(b <= a * (1.0 + 1e-12));
    }

    #[test]
    fn local_energy_falls_as_bits_leave(p in profile(), x in 0.0..1.0f64, y in 0.0..1.0f64) {
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        let e_lo = eliminated_local_energy(lo * p.data_bits, &p);
        let e_hi = eliminated_local_energy(hi * p.data_bits, &p);
        prop_assert!(e_hi <= e_lo);
        prop_assert_eq!(eliminated_local_energy(p.data_bits, &p), 0.0);
    }

    #[test]
    fn lambert_round_trip(x in -0.36787944117144233..1e300f64) {
        let w = lambert_w0(x).unwrap();
        prop_assert!(w >= -1.0);
        prop_assert!((w * w.exp() - x).abs() <= 1e-10 * x.abs().max(1.0));
    }

    #[test]
    fn lambert_rejects_below_branch_point(x in -10.0..-0.3679f64) {
        prop_assert!(lambert_w0(x).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn all_local_is_feasible(spec in small_spec()) {
        // D·c/T̄ must fit the slowest device: 2e4 · 1500 / 0.1 = 3e8 Hz.
        prop_assume!(spec.data_bits <= 2e4);
        let sc = scenario::generate(&spec).unwrap();
        let p = PrimalPoint::all_local(&sc);
        prop_assert!(check_feasibility(&p, &sc, 1e-12).is_feasible());
        for i in 0..sc.n_mus() {
            prop_assert!((task_completion_time(&p, &sc, i) - sc.mu(i).deadline).abs() <= 1e-15);
        }
    }

    #[test]
    fn scenario_json_round_trip(spec in small_spec()) {
        let sc = scenario::generate(&spec).unwrap();
        let back = Scenario::from_json(&sc.to_json()).unwrap();
        prop_assert_eq!(&back, &sc);
        prop_assert_eq!(back.to_json(), sc.to_json());
    }

    #[test]
    fn topologies_share_users(spec in small_spec()) {
        let a = scenario::generate(&GenSpec { topology: TopologyKind::FullMesh, ..spec.clone() }).unwrap();
        let b = scenario::generate(&GenSpec { topology: TopologyKind::NoCoop, ..spec }).unwrap();
        prop_assert_eq!(a.fogs(), b.fogs());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn solvers_return_feasible_points_within_deadline(spec in small_spec()) {
        let sc = scenario::generate(&spec).unwrap();
        let cfg = SolverConfig::default();
        let all_local = weighted_total_energy(&PrimalPoint::all_local(&sc), &sc).total;
        let opt = dual_solver::solve(&sc, &cfg).unwrap();
        let gre = greedy::greedy_solve(&sc, &cfg).unwrap();
        for sol in [&opt, &gre] {
            prop_assert!(check_feasibility(&sol.primal, &sc, 1e-6).is_feasible());
            prop_assert!(sol.total() <= all_local * (1.0 + 1e-9));
            for i in 0..sc.n_mus() {
                prop_assert!(task_completion_time(&sol.primal, &sc, i) <= sc.mu(i).deadline * (1.0 + 1e-6));
            }
        }
        prop_assert!(opt.total() <= gre.total() * (1.0 + 1e-3));
    }
}
