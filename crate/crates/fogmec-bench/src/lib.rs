//! Fixed inputs shared by the benchmarks.

use fogmec::{scenario, GenSpec, Scenario, TopologyKind};

/// The default four-cell layout for `seed`.
pub fn base_scenario(seed: u64, topology: TopologyKind) -> Scenario {
    scenario::generate(&GenSpec { seed, topology, ..GenSpec::default() }).expect("default spec is valid")
}

/// The default layout with cell `empty` left without users, so the greedy
/// balancer has a fog with spare CPU to work with.
pub fn idle_cell_scenario(seed: u64, empty: usize) -> Scenario {
    let sc = base_scenario(seed, TopologyKind::FullMesh);
    let mut fogs = sc.fogs().to_vec();
    fogs[empty].mus.clear();
    Scenario::new(sc.bandwidth, sc.noise, fogs, sc.topology().edges().to_vec()).expect("same layout")
}

/// Lambert-W arguments spread over [−1/e, 1e6].
pub fn lambert_inputs(n: usize) -> Vec<f64> {
    let inv_e = (-1.0f64).exp();
    (0..n).map(|k| -inv_e + (1e6 + inv_e) * ((k as f64 + 0.5) / n as f64).powi(4)).collect()
}
