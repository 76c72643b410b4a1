//! Energy-optimal solver: variable elimination, quadratic penalty on the split
//! equality, closed-form primal recovery from the KKT conditions, and dual
//! ascent on the fog-CPU and latency multipliers.
//!
//! The penalty ρ is configured in J/kbit² and converted with [`RHO_UNIT`].

pub(crate) mod block;
mod engine;

use std::f64::consts::{E, LN_2};

use serde::{Deserialize, Serialize};

pub use engine::{inner_dual_ascent, solve, InnerResult};
pub(crate) use engine::solve_with;

use crate::error::{Error, Result};
use crate::model::{
    check_feasibility, weighted_total_energy, EnergyReport, Link, MuProfile, PrimalPoint, Scenario,
};
use crate::roots::bisect;
use crate::special_fn::lambert_w0;

/// J/bit² per J/kbit².
pub const RHO_UNIT: f64 = 1e-6;

/// Multiplier update used by the inner loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DualUpdate {
    /// Exact maximisation over γ, then a damped Newton step on log μ driven by
    /// the fog-CPU subgradient.
    BlockNewton,
    /// Projected subgradient steps on (μ, γ) with diminishing step sizes
    /// δ₀/√(n+1) and α₀/√(n+1), normalised by the first subgradient.
    Subgradient { delta0: f64, alpha0: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Initial penalty, J/kbit².
    pub rho0: f64,
    /// Penalty growth factor M.
    pub rho_growth: f64,
    /// Penalty cap, J/kbit².
    pub rho_cap: f64,
    /// Stop when Σ|Δ| ≤ ε bits; `None` uses 1e-6 of the smallest task.
    pub penalty_tol: Option<f64>,
    pub inner_max_iters: usize,
    pub dual_update: DualUpdate,
    /// Initial latency multiplier for the subgradient rule.
    pub gamma_init: f64,
    /// Lower bound applied to γ by the subgradient rule.
    pub gamma_floor: f64,
    /// Scale on the automatic initial fog prices.
    pub mu_init_scale: f64,
    /// Δ root tolerance relative to D.
    pub root_tol: f64,
    /// Inner loop stops when every priced fog's relative excess demand is below this.
    pub demand_tol: f64,
    pub stationarity_tol: f64,
    pub feasibility_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho0: 100.0,
            rho_growth: 10.0,
            rho_cap: 1e12,
            penalty_tol: None,
            inner_max_iters: 200,
            dual_update: DualUpdate::BlockNewton,
            gamma_init: 1.0,
            gamma_floor: 0.0,
            mu_init_scale: 4.0,
            root_tol: 1e-10,
            demand_tol: 1e-11,
            stationarity_tol: 1e-6,
            feasibility_tol: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")))
            }
        };
        pos("rho0", self.rho0)?;
        pos("rho_cap", self.rho_cap)?;
        pos("root_tol", self.root_tol)?;
        pos("demand_tol", self.demand_tol)?;
        pos("stationarity_tol", self.stationarity_tol)?;
        pos("feasibility_tol", self.feasibility_tol)?;
        pos("mu_init_scale", self.mu_init_scale)?;
        if !(self.rho_growth > 1.0) {
            return Err(Error::InvalidConfig("rho_growth must exceed 1".into()));
        }
        if let Some(eps) = self.penalty_tol {
            pos("penalty_tol", eps)?;
        }
        if self.inner_max_iters == 0 {
            return Err(Error::InvalidConfig("inner_max_iters must be >= 1".into()));
        }
        if let DualUpdate::Subgradient { delta0, alpha0 } = self.dual_update {
            pos("delta0", delta0)?;
            pos("alpha0", alpha0)?;
        }
        if !(self.gamma_floor >= 0.0) || !(self.gamma_init >= 0.0) {
            return Err(Error::InvalidConfig("gamma_init and gamma_floor must be >= 0".into()));
        }
        Ok(())
    }

    pub(crate) fn epsilon(&self, sc: &Scenario) -> f64 {
        self.penalty_tol.unwrap_or_else(|| {
            let dmin = (0..sc.n_mus()).map(|i| sc.mu(i).data_bits).fold(f64::INFINITY, f64::min);
            if dmin.is_finite() {
                1e-6 * dmin
            } else {
                1.0
            }
        })
    }
}

/// Multipliers: μ per fog, γ per (user, helper slot), and a frame-cap price
/// per cell (zero unless a cap is imposed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub mu: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub frame: Vec<f64>,
}

impl DualPoint {
    pub fn zeros(sc: &Scenario) -> Self {
        Self::uniform(sc, 0.0, 0.0)
    }

    pub fn uniform(sc: &Scenario, mu: f64, gamma: f64) -> Self {
        Self {
            mu: vec![mu; sc.n_fogs()],
            gamma: (0..sc.n_mus()).map(|i| vec![gamma; sc.helpers_of_mu(i).len()]).collect(),
            frame: vec![0.0; sc.n_fogs()],
        }
    }

    /// γ̂ for every user: the cell's total latency price.
    pub fn aggregated_gamma(&self, sc: &Scenario) -> Vec<f64> {
        let mut out = vec![0.0; sc.n_mus()];
        for s in 0..sc.n_fogs() {
            let g: f64 = sc.cell(s).map(|i| self.gamma[i].iter().sum::<f64>()).sum::<f64>() + self.frame[s];
            for i in sc.cell(s) {
                out[i] = g;
            }
        }
        out
    }
}

/// One inner iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub total: f64,
    pub local: f64,
    pub offload: f64,
    pub dual_value: f64,
    /// h(Ω) = Σ|Δ|.
    pub penalty_residual: f64,
    pub max_violation: f64,
}

/// Inner-loop history of one penalty stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct IterationTrace {
    /// Penalty of the stage, J/bit².
    pub rho: f64,
    pub rows: Vec<TraceRow>,
    pub converged: bool,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Best dual value seen up to each iteration.
    pub fn best_dual(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.rows
            .iter()
            .map(|r| {
                best = best.max(r.dual_value);
                best
            })
            .collect()
    }
}

/// One round of the greedy balancer. Energies are for the helped cell;
/// `total_after` is the whole network once the round is settled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceStep {
    pub rth: usize,
    pub afh: usize,
    pub granted_hz: f64,
    pub moved_bits: f64,
    pub energy_before: f64,
    pub energy_after: f64,
    pub total_after: f64,
    pub accepted: bool,
    pub moves: Vec<BalanceMove>,
}

/// Work one user hands to the helper, with the serving-fog state it was
/// computed from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceMove {
    pub mu: usize,
    pub own_bits: f64,
    pub f_own: f64,
    pub moved_bits: f64,
    pub f_help: f64,
}

/// Solver output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub primal: PrimalPoint,
    pub dual: DualPoint,
    /// Final penalty, J/bit².
    pub rho: f64,
    pub energy: EnergyReport,
    /// Largest relative constraint violation of the returned point.
    pub max_violation: f64,
    /// Σ|Δ| of the returned point, bits.
    pub penalty_residual: f64,
    pub converged: bool,
    pub penalty_converged: bool,
    pub inner_iters: usize,
    pub penalty_stages: usize,
    pub traces: Vec<IterationTrace>,
    pub warnings: Vec<String>,
    pub balancing: Vec<BalanceStep>,
}

#[derive(Serialize)]
struct SplitDoc {
    helper: usize,
    u_bits: f64,
    f_fog_hz: f64,
}

#[derive(Serialize)]
struct MuDoc {
    fog: usize,
    index: usize,
    u_bits: f64,
    l_bits: f64,
    t_slot_s: f64,
    f_local_hz: f64,
    splits: Vec<SplitDoc>,
    e_local_j: f64,
    e_off_j: f64,
}

#[derive(Serialize)]
struct SolutionDoc<'a> {
    total_weighted_j: f64,
    converged: bool,
    inner_iters: usize,
    penalty_stages: usize,
    mus: Vec<MuDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    balancing: Option<&'a [BalanceStep]>,
}

impl Solution {
    /// Bits sent from users to fogs.
    pub fn offloaded_bits(&self) -> f64 {
        self.primal.mus.iter().map(|v| v.assigned_bits()).sum()
    }

    pub fn total(&self) -> f64 {
        self.energy.total
    }

    /// The documented result JSON.
    pub fn to_json(&self, sc: &Scenario, with_balancing: bool) -> String {
        let mut mus = Vec::with_capacity(sc.n_mus());
        for s in 0..sc.n_fogs() {
            for (k, i) in sc.cell(s).enumerate() {
                let v = &self.primal.mus[i];
                let splits = sc
                    .helpers_of_mu(i)
                    .iter()
                    .enumerate()
                    .map(|(j, h)| SplitDoc { helper: h.fog, u_bits: v.split_bits(j), f_fog_hz: v.f[j] })
                    .collect();
                mus.push(MuDoc {
                    fog: s,
                    index: k,
                    u_bits: v.u,
                    l_bits: self.primal.local_bits(sc, i),
                    t_slot_s: v.t,
                    f_local_hz: self.primal.local_frequency(sc, i),
                    splits,
                    e_local_j: self.energy.per_mu[i].local,
                    e_off_j: self.energy.per_mu[i].offload,
                });
            }
        }
        let doc = SolutionDoc {
            total_weighted_j: self.energy.total,
            converged: self.converged,
            inner_iters: self.inner_iters,
            penalty_stages: self.penalty_stages,
            mus,
            balancing: with_balancing.then_some(self.balancing.as_slice()),
        };
        serde_json::to_string_pretty(&doc).expect("solution serialization cannot fail")
    }
}

/// Local frequency that finishes ℓ bits exactly at the deadline.
pub fn optimal_local_frequency(l: f64, c: f64, tbar: f64) -> f64 {
    c * l / tbar
}

/// Feasible range of uplink bits: the local CPU ceiling forces at least
/// D − T̄F̄/c bits off the device.
pub fn u_bounds(p: &MuProfile) -> (f64, f64) {
    ((p.data_bits - p.deadline * p.max_cpu / p.cycles_per_bit).max(0.0), p.data_bits)
}

/// Spectral efficiency z* = u/(Wt) zeroing ∂L/∂t for aggregated price γ̂.
pub fn compute_z_star(gamma_agg: f64, h_tilde: f64, beta: f64) -> Result<f64> {
    let y = gamma_agg * h_tilde / beta;
    if !(y >= 0.0) {
        return Err(Error::Domain(format!("z* needs a nonnegative price, got γ̂h̃/β = {y}")));
    }
    let w = lambert_w0((y - 1.0) / E)?;
    Ok(((w + 1.0) / LN_2).max(0.0))
}

/// Marginal uplink energy per bit at spectral efficiency z:
/// ∂/∂u of β·t·χ(u/t) = β ln2 2^z / (W h̃).
pub fn marginal_uplink_cost(z: f64, h_tilde: f64, beta: f64, w: f64) -> f64 {
    beta * LN_2 * z.exp2() / (w * h_tilde)
}

/// Inputs of the Δ fixed-point equation for one user.
#[derive(Clone, Debug)]
pub struct DeltaInputs<'a> {
    pub profile: &'a MuProfile,
    /// Marginal uplink cost A(z*).
    pub a_cost: f64,
    pub rho: f64,
    /// (μ_m, γ_m, link) per helper slot.
    pub helpers: &'a [(f64, f64, Link)],
    /// Bits already placed elsewhere that still cross the uplink.
    pub fixed_bits: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaSolution {
    pub delta: f64,
    /// No upward crossing existed: every split is zero.
    pub boundary: bool,
}

impl DeltaInputs<'_> {
    fn k3(&self) -> f64 {
        let p = self.profile;
        3.0 * p.alpha * p.beta * p.cycles_per_bit.powi(3) / (p.deadline * p.deadline)
    }

    fn u_of(&self, delta: f64) -> f64 {
        let p = self.profile;
        let (u_min, _) = u_bounds(p);
        let x = (self.a_cost + 2.0 * self.rho * delta).max(0.0);
        (p.data_bits - (x / self.k3()).sqrt()).clamp(u_min.max(self.fixed_bits), p.data_bits)
    }

    fn active(&self) -> impl Iterator<Item = &(f64, f64, Link)> {
        self.helpers.iter().filter(|(mu, g, _)| *mu > 0.0 && *g > 0.0)
    }

    /// Price-adjusted denominator 2ρΔ − γ/d of a helper.
    fn denom(&self, delta: f64, gamma: f64, link: Link) -> f64 {
        match link {
            Link::Local => 2.0 * self.rho * delta,
            Link::Backhaul { rate_bps } => 2.0 * self.rho * delta - gamma / rate_bps,
        }
    }

    /// Split bits a² of one helper at Δ.
    pub fn split(&self, delta: f64, mu: f64, gamma: f64, link: Link) -> f64 {
        if mu <= 0.0 || gamma <= 0.0 {
            return 0.0;
        }
        let den = self.denom(delta, gamma, link);
        if den <= 0.0 {
            return f64::INFINITY;
        }
        mu * self.profile.cycles_per_bit * gamma / (den * den)
    }

    /// F(Δ) = u(Δ) − Σa²(Δ) − fixed − Δ.
    pub fn residual(&self, delta: f64) -> f64 {
        let mut f = self.u_of(delta) - self.fixed_bits - delta;
        for &(mu, g, link) in self.active() {
            f -= self.split(delta, mu, g, link);
        }
        f
    }

    fn left_end(&self) -> f64 {
        self.active()
            .map(|&(_, g, link)| match link {
                Link::Local => 0.0,
                Link::Backhaul { rate_bps } => g / (2.0 * self.rho * rate_bps),
            })
            .fold(0.0, f64::max)
    }
}

/// Solve the Δ equation: the first upward zero crossing of F on
/// (max γ/(2ρd), D]. Splits blow up at the left end so F starts at −∞.
pub fn solve_delta(inp: &DeltaInputs) -> Result<DeltaSolution> {
    let d = inp.profile.data_bits;
    let unsplit = |inp: &DeltaInputs| -> Result<DeltaSolution> {
        // No helper takes bits: u(Δ) − fixed = Δ, decreasing in Δ.
        let f = |x: f64| inp.u_of(x) - inp.fixed_bits - x;
        let f0 = f(0.0);
        if f0 <= 0.0 {
            return Ok(DeltaSolution { delta: 0.0, boundary: false });
        }
        Ok(DeltaSolution { delta: bisect(f, 0.0, d, f0), boundary: false })
    };
    if inp.active().next().is_none() {
        return unsplit(inp);
    }
    let lo = inp.left_end();
    let f = |y: f64| inp.residual(y);
    let mut step = (d * 1e-14).max(lo * 1e-14);
    let mut x = (lo + step).min(d);
    let mut fx = f(x);
    if fx.is_nan() {
        return Err(Error::RootFinder(format!("Δ equation evaluated to NaN at {x:e}")));
    }
    if fx >= 0.0 {
        // Walk down towards the pole until F turns negative.
        loop {
            step *= 0.5;
            let y = lo + step;
            if y <= lo {
                return Ok(DeltaSolution { delta: x, boundary: false });
            }
            let fy = f(y);
            if fy < 0.0 {
                return Ok(DeltaSolution { delta: bisect(f, y, x, fy), boundary: false });
            }
            x = y;
        }
    }
    while x < d {
        let prev = (x, fx);
        step *= 2.0;
        x = (lo + step).min(d);
        fx = f(x);
        if fx.is_nan() {
            return Err(Error::RootFinder(format!("Δ equation evaluated to NaN at {x:e}")));
        }
        if fx >= 0.0 {
            return Ok(DeltaSolution { delta: bisect(f, prev.0, x, prev.1), boundary: false });
        }
    }
    let mut sol = unsplit(inp)?;
    sol.boundary = true;
    Ok(sol)
}

/// Closed-form minimiser of the Lagrangian for given multipliers and z*.
pub fn recover_primal(dual: &DualPoint, rho: f64, sc: &Scenario, z_star: &[f64]) -> Result<PrimalPoint> {
    recover_with(dual, rho, sc, z_star, None).map(|(p, _)| p)
}

/// As [`recover_primal`], also returning Δ per user and the boundary flags.
pub(crate) fn recover_with(
    dual: &DualPoint,
    rho: f64,
    sc: &Scenario,
    z_star: &[f64],
    fixed_bits: Option<&[f64]>,
) -> Result<(PrimalPoint, Vec<(f64, bool)>)> {
    let mut point = PrimalPoint::all_local(sc);
    let mut deltas = Vec::with_capacity(sc.n_mus());
    let mut helpers = Vec::new();
    for i in 0..sc.n_mus() {
        let p = sc.mu(i);
        let ht = sc.h_tilde(i);
        let hs = sc.helpers_of_mu(i);
        helpers.clear();
        helpers.extend(hs.iter().enumerate().map(|(j, h)| (dual.mu[h.fog], dual.gamma[i][j], h.link)));
        let z = z_star[i];
        let fixed = fixed_bits.map_or(0.0, |f| f[i]);
        let inp = DeltaInputs {
            profile: p,
            a_cost: marginal_uplink_cost(z, ht, p.beta, sc.bandwidth),
            rho,
            helpers: &helpers,
            fixed_bits: fixed,
        };
        let sol = solve_delta(&inp)?;
        let u = inp.u_of(sol.delta);
        let v = &mut point.mus[i];
        v.u = u;
        v.t = if u > 0.0 && z > 0.0 { u / (sc.bandwidth * z) } else { 0.0 };
        if !sol.boundary {
            for (j, &(mu, g, link)) in helpers.iter().enumerate() {
                if mu <= 0.0 || g <= 0.0 {
                    continue;
                }
                let den = inp.denom(sol.delta, g, link);
                if den <= 0.0 {
                    continue;
                }
                v.f[j] = p.cycles_per_bit * g / den;
                v.a[j] = (mu * p.cycles_per_bit * g).sqrt() / den;
            }
        }
        deltas.push((sol.delta, sol.boundary));
    }
    Ok((point, deltas))
}

/// Subgradients of the dual function at the Lagrangian minimiser `primal`.
#[derive(Clone, Debug, PartialEq)]
pub struct Subgradients {
    pub mu: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
}

pub fn dual_subgradients(primal: &PrimalPoint, sc: &Scenario) -> Subgradients {
    let mu = (0..sc.n_fogs()).map(|m| primal.fog_load(sc, m) - sc.capacity(m)).collect();
    let mut gamma = Vec::with_capacity(sc.n_mus());
    for s in 0..sc.n_fogs() {
        let frame = primal.frame(sc, s);
        for i in sc.cell(s) {
            let p = sc.mu(i);
            let v = &primal.mus[i];
            let row = sc
                .topology()
                .helpers(s)
                .iter()
                .enumerate()
                .map(|(j, h)| {
                    let bits = v.split_bits(j);
                    let mut g = frame - p.deadline;
                    if bits > 0.0 {
                        if let Link::Backhaul { rate_bps } = h.link {
                            g += bits / rate_bps;
                        }
                        g += p.cycles_per_bit * bits / v.f[j];
                    }
                    g
                })
                .collect();
            gamma.push(row);
        }
    }
    Subgradients { mu, gamma }
}

/// Diminishing step schedule δ⁽ⁿ⁾ = δ₀/√(n+1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSchedule {
    pub delta0: f64,
    pub alpha0: f64,
    pub gamma_floor: f64,
}

impl StepSchedule {
    pub fn delta(&self, n: usize) -> f64 {
        self.delta0 / ((n + 1) as f64).sqrt()
    }

    pub fn alpha(&self, n: usize) -> f64 {
        self.alpha0 / ((n + 1) as f64).sqrt()
    }
}

/// Projected subgradient step on (μ, γ).
pub fn update_duals(dual: &DualPoint, sub: &Subgradients, n: usize, steps: &StepSchedule) -> DualPoint {
    let (dl, al) = (steps.delta(n), steps.alpha(n));
    DualPoint {
        mu: dual.mu.iter().zip(&sub.mu).map(|(m, g)| (m + dl * g).max(0.0)).collect(),
        gamma: dual
            .gamma
            .iter()
            .zip(&sub.gamma)
            .map(|(row, grow)| row.iter().zip(grow).map(|(x, g)| (x + al * g).max(steps.gamma_floor)).collect())
            .collect(),
        frame: dual.frame.clone(),
    }
}

/// Penalised Lagrangian at (primal, dual).
pub fn lagrangian(primal: &PrimalPoint, dual: &DualPoint, rho: f64, sc: &Scenario, frame_caps: Option<&[f64]>) -> f64 {
    let energy = weighted_total_energy(primal, sc).total;
    let mut l = energy;
    for i in 0..sc.n_mus() {
        let d = primal.mus[i].assigned_bits() - primal.mus[i].u;
        l += rho * d * d;
    }
    let sub = dual_subgradients(primal, sc);
    for (m, g) in dual.mu.iter().zip(&sub.mu) {
        l += m * g;
    }
    for (row, grow) in dual.gamma.iter().zip(&sub.gamma) {
        for (x, g) in row.iter().zip(grow) {
            if *x != 0.0 {
                l += x * g;
            }
        }
    }
    if let Some(caps) = frame_caps {
        for s in 0..sc.n_fogs() {
            if dual.frame[s] != 0.0 {
                l += dual.frame[s] * (primal.frame(sc, s) - caps[s]);
            }
        }
    }
    l
}

pub(crate) fn trace_row(primal: &PrimalPoint, dual: &DualPoint, rho: f64, sc: &Scenario, deltas: &[(f64, bool)], frame_caps: Option<&[f64]>) -> TraceRow {
    let e = weighted_total_energy(primal, sc);
    let feas = check_feasibility(primal, sc, 0.0);
    TraceRow {
        total: e.total,
        local: e.local,
        offload: e.offload,
        dual_value: lagrangian(primal, dual, rho, sc, frame_caps),
        penalty_residual: deltas.iter().map(|(d, _)| d.abs()).sum(),
        max_violation: feas.max_relative(),
    }
}


#[cfg(test)]
mod tests;
