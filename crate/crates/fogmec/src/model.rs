//! System model: domain types, energy/time physics, objective and feasibility.
//!
//! All quantities are SI: bits, seconds, Hz (cycles/s), watts, joules.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Task and device parameters of one mobile user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuProfile {
    /// Input size D in bits.
    #[serde(rename = "d_bits")]
    pub data_bits: f64,
    /// Latency budget T̄ in seconds.
    #[serde(rename = "deadline_s")]
    pub deadline: f64,
    /// Local CPU ceiling in cycles/s.
    #[serde(rename = "max_cpu_hz")]
    pub max_cpu: f64,
    pub cycles_per_bit: f64,
    /// Energy per cycle is `alpha · f²`.
    pub alpha: f64,
    /// Weight in the objective.
    pub beta: f64,
    /// Power gain to the serving base station.
    pub gain: f64,
}

impl MuProfile {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("d_bits", self.data_bits),
            ("deadline_s", self.deadline),
            ("max_cpu_hz", self.max_cpu),
            ("cycles_per_bit", self.cycles_per_bit),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gain", self.gain),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidScenario(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// A fog server and the users it serves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FogNode {
    pub id: usize,
    #[serde(rename = "max_cpu_hz")]
    pub max_cpu: f64,
    pub mus: Vec<MuProfile>,
}

/// Directed backhaul edge: fog `from` may forward work to fog `to`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub rate_bps: f64,
}

/// How bits reach a helper fog.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Link {
    /// The serving fog itself; no backhaul transfer.
    Local,
    Backhaul { rate_bps: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Helper {
    pub fog: usize,
    pub link: Link,
}

/// Helper sets 𝓛_s (serving fog first, then backhaul neighbours by id) and
/// their reverse index.
#[derive(Clone, Debug, PartialEq)]
pub struct BackhaulTopology {
    edges: Vec<Edge>,
    helpers: Vec<Vec<Helper>>,
    served: Vec<Vec<(usize, usize)>>,
}

impl BackhaulTopology {
    pub fn new(n_fogs: usize, edges: Vec<Edge>) -> Result<Self> {
        let mut helpers: Vec<Vec<Helper>> =
            (0..n_fogs).map(|s| vec![Helper { fog: s, link: Link::Local }]).collect();
        let mut sorted = edges.clone();
        sorted.sort_by_key(|e| (e.from, e.to));
        for e in &sorted {
            if e.from >= n_fogs || e.to >= n_fogs {
                return Err(Error::InvalidScenario(format!("edge {}->{} references a missing fog", e.from, e.to)));
            }
            if e.from == e.to {
                return Err(Error::InvalidScenario(format!("explicit self edge on fog {}", e.from)));
            }
            if !(e.rate_bps.is_finite() && e.rate_bps > 0.0) {
                return Err(Error::InvalidScenario(format!("edge {}->{} rate must be > 0", e.from, e.to)));
            }
            if helpers[e.from].iter().any(|h| h.fog == e.to) {
                return Err(Error::InvalidScenario(format!("duplicate edge {}->{}", e.from, e.to)));
            }
            helpers[e.from].push(Helper { fog: e.to, link: Link::Backhaul { rate_bps: e.rate_bps } });
        }
        let mut served = vec![Vec::new(); n_fogs];
        for (s, hs) in helpers.iter().enumerate() {
            for (j, h) in hs.iter().enumerate() {
                served[h.fog].push((s, j));
            }
        }
        Ok(Self { edges: sorted, helpers, served })
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// 𝓛_s; slot 0 is always `s` itself.
    pub fn helpers(&self, s: usize) -> &[Helper] {
        &self.helpers[s]
    }

    /// 𝓛ᴼ_m as `(cell, helper slot)` pairs.
    pub fn served_by(&self, m: usize) -> &[(usize, usize)] {
        &self.served[m]
    }

    pub fn slot_of(&self, s: usize, m: usize) -> Option<usize> {
        self.helpers[s].iter().position(|h| h.fog == m)
    }
}

/// A complete system instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioDoc", into = "ScenarioDoc")]
pub struct Scenario {
    pub bandwidth: f64,
    pub noise: f64,
    fogs: Vec<FogNode>,
    topology: BackhaulTopology,
    offsets: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ScenarioDoc {
    bandwidth_hz: f64,
    noise_w: f64,
    fogs: Vec<FogNode>,
    backhaul: BackhaulDoc,
}

#[derive(Serialize, Deserialize)]
struct BackhaulDoc {
    edges: Vec<Edge>,
}

impl TryFrom<ScenarioDoc> for Scenario {
    type Error = Error;
    fn try_from(doc: ScenarioDoc) -> Result<Self> {
        Scenario::new(doc.bandwidth_hz, doc.noise_w, doc.fogs, doc.backhaul.edges)
    }
}

impl From<Scenario> for ScenarioDoc {
    fn from(sc: Scenario) -> Self {
        ScenarioDoc {
            bandwidth_hz: sc.bandwidth,
            noise_w: sc.noise,
            backhaul: BackhaulDoc { edges: sc.topology.edges.clone() },
            fogs: sc.fogs,
        }
    }
}

impl Scenario {
    pub fn new(bandwidth: f64, noise: f64, fogs: Vec<FogNode>, edges: Vec<Edge>) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidScenario(format!("bandwidth must be > 0, got {bandwidth}")));
        }
        if !(noise.is_finite() && noise > 0.0) {
            return Err(Error::InvalidScenario(format!("noise power must be > 0, got {noise}")));
        }
        if fogs.is_empty() {
            return Err(Error::InvalidScenario("scenario has no fogs".into()));
        }
        let mut offsets = Vec::with_capacity(fogs.len() + 1);
        offsets.push(0);
        for (i, fog) in fogs.iter().enumerate() {
            if fog.id != i {
                return Err(Error::InvalidScenario(format!("fog at position {i} has id {}", fog.id)));
            }
            if !(fog.max_cpu.is_finite() && fog.max_cpu >= 0.0) {
                return Err(Error::InvalidScenario(format!("fog {i} capacity must be >= 0")));
            }
            for mu in &fog.mus {
                mu.validate()?;
            }
            offsets.push(offsets[i] + fog.mus.len());
        }
        let topology = BackhaulTopology::new(fogs.len(), edges)?;
        Ok(Self { bandwidth, noise, fogs, topology, offsets })
    }

    /// Same users and fogs, different backhaul.
    pub fn with_edges(&self, edges: Vec<Edge>) -> Result<Self> {
        Self::new(self.bandwidth, self.noise, self.fogs.clone(), edges)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    pub fn fogs(&self) -> &[FogNode] {
        &self.fogs
    }

    pub fn topology(&self) -> &BackhaulTopology {
        &self.topology
    }

    pub fn n_fogs(&self) -> usize {
        self.fogs.len()
    }

    pub fn n_mus(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Global indices of the users served by fog `s`.
    pub fn cell(&self, s: usize) -> Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    pub fn cell_of(&self, i: usize) -> usize {
        self.offsets.partition_point(|&o| o <= i) - 1
    }

    pub fn mu(&self, i: usize) -> &MuProfile {
        let s = self.cell_of(i);
        &self.fogs[s].mus[i - self.offsets[s]]
    }

    pub fn helpers_of_mu(&self, i: usize) -> &[Helper] {
        self.topology.helpers(self.cell_of(i))
    }

    /// Normalised channel gain h̃ = h/σ².
    pub fn h_tilde(&self, i: usize) -> f64 {
        self.mu(i).gain / self.noise
    }

    pub fn capacity(&self, m: usize) -> f64 {
        self.fogs[m].max_cpu
    }
}

/// Decision variables of one user. `a` and `f` are indexed by helper slot of
/// the serving cell; the bits sent to slot `j` are `a[j]²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuVars {
    pub u: f64,
    pub t: f64,
    pub a: Vec<f64>,
    pub f: Vec<f64>,
}

impl MuVars {
    pub fn split_bits(&self, j: usize) -> f64 {
        self.a[j] * self.a[j]
    }

    pub fn assigned_bits(&self) -> f64 {
        self.a.iter().map(|a| a * a).sum()
    }
}

/// Point in the reduced variable space {u, t, a, f_fog}; ℓ and f_local derive from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimalPoint {
    pub mus: Vec<MuVars>,
}

impl PrimalPoint {
    /// Everything computed locally.
    pub fn all_local(sc: &Scenario) -> Self {
        let mus = (0..sc.n_mus())
            .map(|i| {
                let n = sc.helpers_of_mu(i).len();
                MuVars { u: 0.0, t: 0.0, a: vec![0.0; n], f: vec![0.0; n] }
            })
            .collect();
        Self { mus }
    }

    pub fn local_bits(&self, sc: &Scenario, i: usize) -> f64 {
        (sc.mu(i).data_bits - self.mus[i].u).max(0.0)
    }

    /// Slowest local frequency meeting the deadline.
    pub fn local_frequency(&self, sc: &Scenario, i: usize) -> f64 {
        let p = sc.mu(i);
        p.cycles_per_bit * self.local_bits(sc, i) / p.deadline
    }

    /// TDMA frame length T_s.
    pub fn frame(&self, sc: &Scenario, s: usize) -> f64 {
        sc.cell(s).map(|i| self.mus[i].t).sum()
    }

    /// Total CPU rate requested from fog `m`.
    pub fn fog_load(&self, sc: &Scenario, m: usize) -> f64 {
        sc.topology()
            .served_by(m)
            .iter()
            .flat_map(|&(s, j)| sc.cell(s).map(move |i| (i, j)))
            .map(|(i, j)| self.mus[i].f[j])
            .sum()
    }
}

pub fn local_energy(l: f64, f: f64, p: &MuProfile) -> Result<f64> {
    if l < 0.0 || f < 0.0 {
        return Err(Error::Domain(format!("local_energy needs l, f >= 0 (l={l}, f={f})")));
    }
    Ok(p.cycles_per_bit * p.alpha * l * f * f)
}

pub fn local_time(l: f64, f: f64, c: f64) -> Result<f64> {
    if l < 0.0 || f < 0.0 {
        return Err(Error::Domain(format!("local_time needs l, f >= 0 (l={l}, f={f})")));
    }
    if l == 0.0 {
        return Ok(0.0);
    }
    if f == 0.0 {
        return Err(Error::Domain("local work with zero frequency".into()));
    }
    Ok(c * l / f)
}

/// χ(rate): transmit power achieving `rate` on bandwidth `w`.
pub fn inverse_rate_power(rate: f64, h_tilde: f64, w: f64) -> f64 {
    (rate / w * std::f64::consts::LN_2).exp_m1() / h_tilde
}

/// Uplink energy t·χ(u/t), continuously extended by 0 at u = 0.
pub fn offload_energy(u: f64, t: f64, h_tilde: f64, w: f64) -> Result<f64> {
    if u < 0.0 || t < 0.0 {
        return Err(Error::Domain(format!("offload_energy needs u, t >= 0 (u={u}, t={t})")));
    }
    if u == 0.0 {
        return Ok(0.0);
    }
    if t == 0.0 {
        return Err(Error::Domain("bits offloaded in a zero-length slot".into()));
    }
    Ok(t * inverse_rate_power(u / t, h_tilde, w))
}

/// Local energy with the frequency eliminated: α c³ (D − u)³ / T̄².
pub fn eliminated_local_energy(u: f64, p: &MuProfile) -> f64 {
    let l = (p.data_bits - u).max(0.0);
    p.alpha * (p.cycles_per_bit * l).powi(3) / (p.deadline * p.deadline)
}

/// Backhaul transfer and fog execution time of `u_part` bits.
pub fn fog_times(u_part: f64, link: Link, f_fog: f64, c: f64) -> Result<(f64, f64)> {
    if u_part < 0.0 || f_fog < 0.0 {
        return Err(Error::Domain(format!("fog_times needs u, f >= 0 (u={u_part}, f={f_fog})")));
    }
    if u_part == 0.0 {
        return Ok((0.0, 0.0));
    }
    if f_fog == 0.0 {
        return Err(Error::Domain("bits assigned to a helper with zero CPU".into()));
    }
    let transfer = match link {
        Link::Local => 0.0,
        Link::Backhaul { rate_bps } => u_part / rate_bps,
    };
    Ok((transfer, u_part * c / f_fog))
}

fn fog_path_time(u_part: f64, link: Link, f_fog: f64, c: f64) -> f64 {
    match fog_times(u_part, link, f_fog, c) {
        Ok((a, b)) => a + b,
        Err(_) => f64::INFINITY,
    }
}

/// Completion time of user `i`: the later of its local and offloaded parts.
pub fn task_completion_time(point: &PrimalPoint, sc: &Scenario, i: usize) -> f64 {
    let p = sc.mu(i);
    let l = point.local_bits(sc, i);
    let t_local = if l > 0.0 { p.deadline } else { 0.0 };
    let s = sc.cell_of(i);
    let frame = point.frame(sc, s);
    let v = &point.mus[i];
    let fog = sc
        .helpers_of_mu(i)
        .iter()
        .enumerate()
        .map(|(j, h)| fog_path_time(v.split_bits(j), h.link, v.f[j], p.cycles_per_bit))
        .fold(0.0, f64::max);
    t_local.max(frame + fog)
}

/// Per-user energy split (unweighted).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuEnergy {
    pub local: f64,
    pub offload: f64,
}

/// Objective value with its breakdown. Sums are β-weighted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub total: f64,
    pub local: f64,
    pub offload: f64,
    pub per_mu: Vec<MuEnergy>,
}

/// Weighted sum energy of a point, always recomputed from the physics.
pub fn weighted_total_energy(point: &PrimalPoint, sc: &Scenario) -> EnergyReport {
    let mut report = EnergyReport { total: 0.0, local: 0.0, offload: 0.0, per_mu: Vec::with_capacity(sc.n_mus()) };
    for i in 0..sc.n_mus() {
        let p = sc.mu(i);
        let v = &point.mus[i];
        let local = eliminated_local_energy(v.u, p);
        let offload = offload_energy(v.u.max(0.0), v.t.max(0.0), sc.h_tilde(i), sc.bandwidth)
            .unwrap_or(f64::INFINITY);
        report.local += p.beta * local;
        report.offload += p.beta * offload;
        report.per_mu.push(MuEnergy { local, offload });
    }
    report.total = report.local + report.offload;
    report
}

/// Constraint families of the original problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constraint {
    /// ℓ + Σ_m u_m = D.
    DataSplit { mu: usize },
    /// Σ f at a fog ≤ its capacity.
    FogCpu { fog: usize },
    /// f_local ≤ F̄_mu.
    LocalCpu { mu: usize },
    /// Local execution meets the deadline.
    LocalDeadline { mu: usize },
    /// Frame + transfer + fog execution meets the deadline.
    FogDeadline { mu: usize, slot: usize },
}

/// Signed constraint residual: positive means violated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    pub residual: f64,
    pub relative: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub tol: f64,
    pub entries: Vec<Violation>,
}

impl FeasibilityReport {
    /// Largest relative violation (0 when everything holds).
    pub fn max_relative(&self) -> f64 {
        self.entries.iter().map(|v| v.relative).fold(0.0, f64::max)
    }

    pub fn is_feasible(&self) -> bool {
        self.max_relative() <= self.tol
    }

    /// Constraints violated beyond the tolerance.
    pub fn violated(&self) -> impl Iterator<Item = &Violation> {
        self.entries.iter().filter(move |v| v.relative > self.tol)
    }

    pub fn max_relative_where(&self, pred: impl Fn(&Constraint) -> bool) -> f64 {
        self.entries.iter().filter(|v| pred(&v.constraint)).map(|v| v.relative).fold(0.0, f64::max)
    }
}

/// Residuals of every constraint. Equalities report |residual|; relative
/// values are scaled by D, capacity or deadline.
pub fn check_feasibility(point: &PrimalPoint, sc: &Scenario, tol: f64) -> FeasibilityReport {
    let mut entries = Vec::new();
    let scaled = |constraint, residual: f64, scale: f64| Violation {
        constraint,
        residual,
        relative: if residual.is_nan() { f64::INFINITY } else { residual / scale },
    };
    for i in 0..sc.n_mus() {
        let p = sc.mu(i);
        let v = &point.mus[i];
        let s = sc.cell_of(i);
        let split = (v.assigned_bits() - v.u).abs();
        entries.push(scaled(Constraint::DataSplit { mu: i }, split, p.data_bits));
        let f_local = point.local_frequency(sc, i);
        entries.push(scaled(Constraint::LocalCpu { mu: i }, f_local - p.max_cpu, p.max_cpu));
        let l = point.local_bits(sc, i);
        let t_local = if l > 0.0 { p.cycles_per_bit * l / f_local } else { 0.0 };
        entries.push(scaled(Constraint::LocalDeadline { mu: i }, t_local - p.deadline, p.deadline));
        let frame = point.frame(sc, s);
        for (j, h) in sc.helpers_of_mu(i).iter().enumerate() {
            let t = frame + fog_path_time(v.split_bits(j), h.link, v.f[j], p.cycles_per_bit);
            entries.push(scaled(Constraint::FogDeadline { mu: i, slot: j }, t - p.deadline, p.deadline));
        }
    }
    for m in 0..sc.n_fogs() {
        let cap = sc.capacity(m);
        let load = point.fog_load(sc, m);
        entries.push(scaled(Constraint::FogCpu { fog: m }, load - cap, cap.max(1.0)));
    }
    FeasibilityReport { tol, entries }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn profile(d: f64, c: f64) -> MuProfile {
        MuProfile { data_bits: d, deadline: 0.1, max_cpu: 5e8, cycles_per_bit: c, alpha: 1e-26, beta: 1.0, gain: 1e-11 }
    }

    fn one_cell(mus: Vec<MuProfile>, cap: f64) -> Scenario {
        Scenario::new(4e6, 1e-13, vec![FogNode { id: 0, max_cpu: cap, mus }], vec![]).unwrap()
    }

    #[test]
    fn local_energy_examples() {
        let p = profile(1e6, 1000.0);
        assert_eq!(local_energy(0.0, 1e9, &p).unwrap(), 0.0);
        assert!((local_energy(1e6, 1e9, &p).unwrap() - 10.0).abs() < 1e-12);
        assert!((local_energy(1e6, 0.5e9, &p).unwrap() - 2.5).abs() < 1e-12);
        assert!(local_energy(-1.0, 1e9, &p).is_err());
    }

    #[test]
    fn local_time_examples() {
        assert_eq!(local_time(0.0, 0.0, 1000.0).unwrap(), 0.0);
        assert!((local_time(1e6, 1e9, 1000.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((local_time(2e6, 1e9, 500.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(local_time(1.0, 0.0, 1000.0).is_err());
    }

    #[test]
    fn rate_power_examples() {
        assert_eq!(inverse_rate_power(0.0, 1.0, 4e6), 0.0);
        assert!((inverse_rate_power(4e6, 1.0, 4e6) - 1.0).abs() < 1e-15);
        assert!((inverse_rate_power(8e6, 0.5, 4e6) - 6.0).abs() < 1e-14);
    }

    #[test]
    fn offload_energy_examples() {
        assert_eq!(offload_energy(0.0, 0.05, 1.0, 4e6).unwrap(), 0.0);
        assert!((offload_energy(4e5, 0.1, 1.0, 4e6).unwrap() - 0.1).abs() < 1e-15);
        let e = offload_energy(4e6, 0.5, 1e10, 4e6).unwrap();
        assert!((e - 1.5e-10).abs() < 1e-24);
        assert!(offload_energy(1.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn fog_times_examples() {
        assert_eq!(fog_times(0.0, Link::Local, 0.0, 1000.0).unwrap(), (0.0, 0.0));
        let (a, b) = fog_times(1e6, Link::Backhaul { rate_bps: 2e6 }, 2e9, 1000.0).unwrap();
        assert!((a - 0.5).abs() < 1e-15 && (b - 0.5).abs() < 1e-15);
        assert_eq!(fog_times(1e6, Link::Local, 1e9, 1000.0).unwrap(), (0.0, 1.0));
        assert!(fog_times(1.0, Link::Local, 0.0, 1000.0).is_err());
    }

    #[test]
    fn completion_time_examples() {
        let sc = Scenario::new(
            4e6,
            1e-13,
            vec![
                FogNode { id: 0, max_cpu: 1e9, mus: vec![profile(1e4, 1000.0), profile(1e4, 1000.0)] },
                FogNode { id: 1, max_cpu: 1e9, mus: vec![] },
            ],
            vec![Edge { from: 0, to: 1, rate_bps: 1e6 }],
        )
        .unwrap();
        let local = PrimalPoint::all_local(&sc);
        assert_eq!(task_completion_time(&local, &sc, 0), 0.1);

        // Full offload of MU 0: 1e4 bits, fog exec 0.05 s at slot 1, transfer 0.01 s.
        let mut p = local.clone();
        p.mus[0] = MuVars { u: 1e4, t: 0.02, a: vec![0.0, 100.0], f: vec![0.0, 1000.0 * 1e4 / 0.05] };
        p.mus[1].t = 0.0;
        assert!((task_completion_time(&p, &sc, 0) - 0.08).abs() < 1e-15);

        // Shared frame: 0.02 + 0.03, MU 0 fog time 0.04 on the local fog.
        p.mus[0] = MuVars { u: 1e4, t: 0.02, a: vec![100.0, 0.0], f: vec![1000.0 * 1e4 / 0.04, 0.0] };
        p.mus[1] = MuVars { u: 0.0, t: 0.03, a: vec![0.0, 0.0], f: vec![0.0, 0.0] };
        assert!((task_completion_time(&p, &sc, 0) - 0.09).abs() < 1e-15);
    }

    #[test]
    fn energy_examples() {
        let mut p = profile(2e7, 1000.0);
        p.deadline = 0.1;
        let sc = one_cell(vec![p.clone()], 1e9);
        let mut x = PrimalPoint::all_local(&sc);
        x.mus[0].u = 1e7;
        x.mus[0].t = 0.05;
        let r = weighted_total_energy(&x, &sc);
        assert!((r.per_mu[0].local - 1e6).abs() < 1e-6);

        x.mus[0].u = 2e7;
        assert_eq!(weighted_total_energy(&x, &sc).local, 0.0);

        let y = PrimalPoint::all_local(&sc);
        let r = weighted_total_energy(&y, &sc);
        assert_eq!(r.offload, 0.0);
        assert!((r.total - 1e-26 * 1e9 * 8e21 / 0.01).abs() < 1e-3);
    }

    #[test]
    fn feasibility_examples() {
        let sc = one_cell(vec![profile(2e4, 1000.0)], 1e9);
        let local = PrimalPoint::all_local(&sc);
        assert!(check_feasibility(&local, &sc, 1e-9).is_feasible());

        let mut x = local.clone();
        x.mus[0] = MuVars { u: 1e4, t: 0.01, a: vec![100.0], f: vec![1e9 + 1.0] };
        let r = check_feasibility(&x, &sc, 1e-12);
        let bad: Vec<_> = r.violated().collect();
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].constraint, Constraint::FogCpu { fog: 0 });
        assert!((bad[0].residual - 1.0).abs() < 1e-6);
    }

    #[test]
    fn topology_reverse_index() {
        let fogs = (0..3).map(|id| FogNode { id, max_cpu: 1e9, mus: vec![] }).collect();
        let sc = Scenario::new(
            1e6,
            1e-13,
            fogs,
            vec![Edge { from: 0, to: 2, rate_bps: 1e6 }, Edge { from: 1, to: 2, rate_bps: 1e6 }],
        )
        .unwrap();
        assert_eq!(sc.topology().served_by(2), &[(0, 1), (1, 1), (2, 0)]);
        assert_eq!(sc.topology().helpers(0)[0].link, Link::Local);
        assert!(sc.with_edges(vec![Edge { from: 0, to: 0, rate_bps: 1.0 }]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let sc = one_cell(vec![profile(2e4, 1_234.567_890_123)], 1.7e9);
        let back = Scenario::from_json(&sc.to_json()).unwrap();
        assert_eq!(sc, back);
        assert!(Scenario::from_json("{\"bandwidth_hz\": -1}").is_err());
    }
}
