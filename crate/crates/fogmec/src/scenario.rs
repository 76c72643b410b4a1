//! Seeded scenario generation: geometry, path loss, Rayleigh fading and
//! backhaul topologies.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BackhaulTopology, Edge, FogNode, MuProfile, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    FullMesh,
    StarMax,
    Ring,
    StarMin,
    NoCoop,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 5] =
        [TopologyKind::FullMesh, TopologyKind::StarMax, TopologyKind::Ring, TopologyKind::StarMin, TopologyKind::NoCoop];

    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::FullMesh => "full-mesh",
            TopologyKind::StarMax => "star-max",
            TopologyKind::Ring => "ring",
            TopologyKind::StarMin => "star-min",
            TopologyKind::NoCoop => "no-coop",
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TopologyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TopologyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown topology '{s}'")))
    }
}

/// Generator parameters. Defaults follow the reference setup, except the task
/// size: 20 kbit keeps every instance feasible at a 100 ms deadline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub seed: u64,
    pub n_cells: usize,
    pub mus_per_cell: usize,
    pub bs_spacing_m: f64,
    pub mu_radius_m: [f64; 2],
    pub carrier_ghz: f64,
    pub bandwidth_hz: f64,
    pub noise_w: f64,
    pub data_bits: f64,
    pub deadline_s: f64,
    pub alpha: f64,
    pub cycles_per_bit: [f64; 2],
    pub mu_cpu_hz: Vec<f64>,
    pub fog_cpu_hz: Vec<f64>,
    pub beta: f64,
    pub backhaul_bps: f64,
    pub topology: TopologyKind,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_cells: 4,
            mus_per_cell: 7,
            bs_spacing_m: 400.0,
            mu_radius_m: [50.0, 200.0],
            carrier_ghz: 2.5,
            bandwidth_hz: 4e6,
            noise_w: 1e-13,
            data_bits: 2e4,
            deadline_s: 0.1,
            alpha: 1e-26,
            cycles_per_bit: [500.0, 1500.0],
            mu_cpu_hz: vec![0.3e9, 0.4e9, 0.5e9, 0.6e9, 0.7e9],
            fog_cpu_hz: vec![1.7e9, 3.6e9, 3.8e9, 4.5e9],
            beta: 1.0,
            backhaul_bps: 2e6,
            topology: TopologyKind::FullMesh,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.n_cells == 0 {
            return bad("n_cells must be >= 1");
        }
        let positive = [
            self.bs_spacing_m,
            self.carrier_ghz,
            self.bandwidth_hz,
            self.noise_w,
            self.data_bits,
            self.deadline_s,
            self.alpha,
            self.beta,
            self.backhaul_bps,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("physical parameters must be finite and > 0");
        }
        let [r0, r1] = self.mu_radius_m;
        if !(r0 > 0.0 && r0 <= r1 && r1.is_finite()) {
            return bad("mu_radius_m must satisfy 0 < lo <= hi");
        }
        let [c0, c1] = self.cycles_per_bit;
        if !(c0 > 0.0 && c0 <= c1 && c1.is_finite()) {
            return bad("cycles_per_bit must satisfy 0 < lo <= hi");
        }
        if self.mu_cpu_hz.is_empty() || self.mu_cpu_hz.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("mu_cpu_hz must be a nonempty list of positive rates");
        }
        if self.fog_cpu_hz.is_empty() || self.fog_cpu_hz.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("fog_cpu_hz must be a nonempty list of nonnegative rates");
        }
        if self.topology != TopologyKind::NoCoop && self.n_cells < 2 {
            return bad("cooperative topologies need at least two cells");
        }
        Ok(())
    }

    pub fn fog_capacities(&self) -> Vec<f64> {
        (0..self.n_cells).map(|s| self.fog_cpu_hz[s % self.fog_cpu_hz.len()]).collect()
    }
}

/// 36.8 log₁₀(y) + 43.8 + 20 log₁₀(f/5), y in metres and f in GHz.
pub fn path_loss_db(distance_m: f64, carrier_ghz: f64) -> f64 {
    36.8 * distance_m.log10() + 43.8 + 20.0 * (carrier_ghz / 5.0).log10()
}

/// Power gain with unit-mean exponential (Rayleigh) fading.
pub fn channel_gain<R: Rng + ?Sized>(distance_m: f64, carrier_ghz: f64, rng: &mut R) -> f64 {
    let fading: f64 = rng.sample(Exp1);
    fading * 10f64.powf(-path_loss_db(distance_m, carrier_ghz) / 10.0)
}

/// Directed helper edges of a topology kind.
pub fn topology_edges(kind: TopologyKind, fog_caps: &[f64], rate_bps: f64) -> Result<Vec<Edge>> {
    let n = fog_caps.len();
    if kind != TopologyKind::NoCoop && n < 2 {
        return Err(Error::InvalidConfig(format!("{kind} needs at least two fogs")));
    }
    let edge = |from, to| Edge { from, to, rate_bps };
    let pick = |better: fn(f64, f64) -> bool| {
        (0..n).fold(0, |best, m| if better(fog_caps[m], fog_caps[best]) { m } else { best })
    };
    let star = |center: usize| -> Vec<Edge> {
        (0..n).filter(|&m| m != center).flat_map(|m| [edge(center, m), edge(m, center)]).collect()
    };
    let mut edges = match kind {
        TopologyKind::FullMesh => (0..n).flat_map(|s| (0..n).filter(move |&m| m != s).map(move |m| (s, m))).map(|(s, m)| edge(s, m)).collect(),
        TopologyKind::Ring => {
            let mut e = Vec::new();
            for s in 0..n {
                for m in [(s + 1) % n, (s + n - 1) % n] {
                    if m != s && !e.iter().any(|x: &Edge| x.from == s && x.to == m) {
                        e.push(edge(s, m));
                    }
                }
            }
            e
        }
        TopologyKind::StarMax => star(pick(|a, b| a > b)),
        TopologyKind::StarMin => star(pick(|a, b| a < b)),
        TopologyKind::NoCoop => Vec::new(),
    };
    edges.sort_by_key(|e| (e.from, e.to));
    Ok(edges)
}

pub fn build_topology(kind: TopologyKind, fog_caps: &[f64], rate_bps: f64) -> Result<BackhaulTopology> {
    BackhaulTopology::new(fog_caps.len(), topology_edges(kind, fog_caps, rate_bps)?)
}

/// Base-station coordinates on a square grid.
pub fn bs_positions(n_cells: usize, spacing: f64) -> Vec<(f64, f64)> {
    let cols = (n_cells as f64).sqrt().ceil() as usize;
    (0..n_cells).map(|s| ((s % cols) as f64 * spacing, (s / cols) as f64 * spacing)).collect()
}

/// Independent random stream for user `k` of cell `s`.
fn mu_rng(seed: u64, s: usize, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((s as u64) << 32) | k as u64);
    rng
}

/// Distance and per-user draws, in a fixed order.
struct MuDraw {
    distance: f64,
    gain: f64,
    cycles_per_bit: f64,
    max_cpu: f64,
}

fn draw_mu(spec: &GenSpec, s: usize, k: usize) -> MuDraw {
    let mut rng = mu_rng(spec.seed, s, k);
    let [r0, r1] = spec.mu_radius_m;
    let distance = rng.gen_range(r0 * r0..=r1 * r1).sqrt();
    let gain = channel_gain(distance, spec.carrier_ghz, &mut rng);
    let [c0, c1] = spec.cycles_per_bit;
    let cycles_per_bit = if c0 < c1 { rng.gen_range(c0..c1) } else { c0 };
    let max_cpu = spec.mu_cpu_hz[rng.gen_range(0..spec.mu_cpu_hz.len())];
    MuDraw { distance, gain, cycles_per_bit, max_cpu }
}

/// Distances from every user to its base station, in scenario order.
pub fn mu_distances(spec: &GenSpec) -> Vec<f64> {
    (0..spec.n_cells).flat_map(|s| (0..spec.mus_per_cell).map(move |k| draw_mu(spec, s, k).distance)).collect()
}

/// Build a scenario. Users depend only on (seed, cell, index), so topology,
/// size and deadline variants of a spec share the same users.
pub fn generate(spec: &GenSpec) -> Result<Scenario> {
    spec.validate()?;
    let caps = spec.fog_capacities();
    let fogs = (0..spec.n_cells)
        .map(|s| FogNode {
            id: s,
            max_cpu: caps[s],
            mus: (0..spec.mus_per_cell)
                .map(|k| {
                    let d = draw_mu(spec, s, k);
                    MuProfile {
                        data_bits: spec.data_bits,
                        deadline: spec.deadline_s,
                        max_cpu: d.max_cpu,
                        cycles_per_bit: d.cycles_per_bit,
                        alpha: spec.alpha,
                        beta: spec.beta,
                        gain: d.gain,
                    }
                })
                .collect(),
        })
        .collect();
    let edges = topology_edges(spec.topology, &caps, spec.backhaul_bps)?;
    Scenario::new(spec.bandwidth_hz, spec.noise_w, fogs, edges)
}
