//! Load-balancing baseline: every cell is optimised on its own, then fogs with
//! spare CPU ("ready to help", RTH) take work from saturated fogs whose users
//! spend the most energy ("asking for help", AFH), one pair per round.

use crate::dual_solver::block::Extras;
use crate::dual_solver::{solve_with, BalanceMove, BalanceStep, DualPoint, Solution, SolverConfig};
use crate::error::{Error, Result};
use crate::model::{check_feasibility, weighted_total_energy, FogNode, Link, MuVars, PrimalPoint, Scenario};

/// A fog counts as saturated when its spare CPU is below this share of F̄.
pub const SATURATION_TOL: f64 = 1e-6;

/// Work a user has placed on another fog.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HelpSplit {
    pub helper: usize,
    pub bits: f64,
    pub f_fog: f64,
}

/// One user's variables in a single-cell solution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellMu {
    /// All uplink bits, including those placed on helpers.
    pub u: f64,
    /// Bits executed at the serving fog.
    pub own_bits: f64,
    pub f_own: f64,
    pub t: f64,
}

/// Optimum of one cell for a fixed frame budget and fixed helper splits.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSolution {
    pub cell: usize,
    pub frame_budget: f64,
    pub mus: Vec<CellMu>,
    /// Σ β E over the cell's users.
    pub energy: f64,
    pub converged: bool,
    pub inner_iters: usize,
    pub penalty_stages: usize,
    pub rho: f64,
    pub warnings: Vec<String>,
}

impl CellSolution {
    pub fn frame(&self) -> f64 {
        self.mus.iter().map(|m| m.t).sum()
    }

    pub fn own_load(&self) -> f64 {
        self.mus.iter().map(|m| m.f_own).sum()
    }
}

/// Cell `s` as a scenario of its own.
fn isolated_cell(sc: &Scenario, s: usize) -> Result<Scenario> {
    let fog = FogNode { id: 0, max_cpu: sc.capacity(s), mus: sc.fogs()[s].mus.clone() };
    Scenario::new(sc.bandwidth, sc.noise, vec![fog], Vec::new())
}

/// Optimises cell `s` alone with its frame capped at `frame_budget` and
/// `fixed_bits[k]` of user k's uplink already placed on other fogs.
pub fn solve_single_cell(
    sc: &Scenario,
    s: usize,
    frame_budget: f64,
    fixed_bits: &[f64],
    cfg: &SolverConfig,
) -> Result<CellSolution> {
    if !(frame_budget > 0.0) {
        return Err(Error::InvalidConfig(format!("cell {s}: frame budget must be > 0, got {frame_budget}")));
    }
    let sub = isolated_cell(sc, s)?;
    if fixed_bits.len() != sub.n_mus() {
        return Err(Error::InvalidConfig(format!("cell {s}: expected {} fixed splits", sub.n_mus())));
    }
    let extras = Extras { frame_cap: vec![Some(frame_budget)], fixed_bits: fixed_bits.to_vec() };
    let sol = solve_with(&sub, cfg, Some(&extras)).map_err(|e| match e {
        Error::Infeasible(msg) => Error::Infeasible(format!("cell {s}: {msg}")),
        other => other,
    })?;
    let mus = sol
        .primal
        .mus
        .iter()
        .map(|v| CellMu { u: v.u, own_bits: v.split_bits(0), f_own: v.f[0], t: v.t })
        .collect();
    Ok(CellSolution {
        cell: s,
        frame_budget,
        mus,
        energy: sol.energy.total,
        converged: sol.converged,
        inner_iters: sol.inner_iters,
        penalty_stages: sol.penalty_stages,
        rho: sol.rho,
        warnings: sol.warnings.iter().map(|w| format!("cell {s}: {w}")).collect(),
    })
}

/// Spare CPU Δf of every fog: capacity minus its own users' rates minus what
/// it has granted to other cells.
pub fn available_cr(sc: &Scenario, cells: &[CellSolution], help: &[Vec<HelpSplit>]) -> Vec<f64> {
    let mut spare: Vec<f64> = (0..sc.n_fogs()).map(|m| sc.capacity(m)).collect();
    for cell in cells {
        spare[cell.cell] -= cell.own_load();
    }
    for split in help.iter().flatten() {
        spare[split.helper] -= split.f_fog;
    }
    spare
}

fn saturated(sc: &Scenario, spare: &[f64], s: usize) -> bool {
    spare[s] <= SATURATION_TOL * sc.capacity(s)
}

/// Picks the next (RTH, AFH) pair among the candidate fogs, or `None` when no
/// candidate is saturated or no saturated cell can reach a fog with spare CPU.
///
/// AFH cells are tried by decreasing energy; for each, the reachable RTH with
/// the most spare CPU wins. Ties go to the lowest id.
pub fn select_rth_afh(
    sc: &Scenario,
    spare: &[f64],
    cell_energy: &[f64],
    candidates: &[bool],
) -> Option<(usize, usize)> {
    let n = sc.n_fogs();
    let mut afh: Vec<usize> = (0..n).filter(|&s| candidates[s] && saturated(sc, spare, s)).collect();
    if afh.is_empty() {
        return None;
    }
    afh.sort_by(|&a, &b| cell_energy[b].total_cmp(&cell_energy[a]).then(a.cmp(&b)));
    let mut rth: Vec<usize> = (0..n).filter(|&m| candidates[m] && !saturated(sc, spare, m)).collect();
    rth.sort_by(|&a, &b| spare[b].total_cmp(&spare[a]).then(a.cmp(&b)));
    for &s in &afh {
        if let Some(&m) = rth.iter().find(|&&m| m != s && sc.topology().slot_of(s, m).is_some()) {
            return Some((m, s));
        }
    }
    None
}

/// Rates and bits that helper `m` takes from cell `s`: the spare CPU is split
/// in proportion to the users' own-fog rates and the bits are chosen so both
/// parts of a task finish together.
pub fn assign_help(
    sc: &Scenario,
    s: usize,
    m: usize,
    cell: &CellSolution,
    spare_m: f64,
) -> Result<Vec<(f64, f64)>> {
    let slot = sc
        .topology()
        .slot_of(s, m)
        .ok_or_else(|| Error::InvalidConfig(format!("no backhaul edge {s} -> {m}")))?;
    let rate = match sc.topology().helpers(s)[slot].link {
        Link::Backhaul { rate_bps } => rate_bps,
        Link::Local => return Err(Error::InvalidConfig(format!("fog {m} cannot help its own cell"))),
    };
    let total: f64 = cell.own_load();
    if !(total > 0.0) || !(spare_m > 0.0) {
        return Ok(vec![(0.0, 0.0); cell.mus.len()]);
    }
    Ok(sc
        .cell(s)
        .zip(&cell.mus)
        .map(|(i, v)| {
            if v.f_own <= 0.0 {
                return (0.0, 0.0);
            }
            let c = sc.mu(i).cycles_per_bit;
            let f = spare_m * v.f_own / total;
            let u = v.own_bits / (v.f_own / (c * rate) + v.f_own / f + 1.0);
            (f, u)
        })
        .collect())
}

/// Relative gap of c(u_ss − u_sm)/f_ss = u_sm/d + c·u_sm/f_sm.
pub fn balance_residual(c: f64, rate: f64, own_bits: f64, f_own: f64, moved: f64, f_help: f64) -> f64 {
    let lhs = c * (own_bits - moved) / f_own;
    let rhs = moved / rate + c * moved / f_help;
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE)
}

/// New frame budget: the current frame plus the smallest own-fog time saved.
pub fn extend_offload_window(sc: &Scenario, s: usize, cell: &CellSolution, assignments: &[(f64, f64)]) -> f64 {
    let saved = sc
        .cell(s)
        .zip(&cell.mus)
        .zip(assignments)
        .filter(|((_, v), _)| v.f_own > 0.0)
        .map(|((i, v), &(_, u))| sc.mu(i).cycles_per_bit * u / v.f_own)
        .fold(f64::INFINITY, f64::min);
    let saved = if saved.is_finite() { saved } else { 0.0 };
    cell.frame() + saved
}

/// Latest frame end that still lets every fixed split finish on time.
fn split_deadline_cap(sc: &Scenario, s: usize, help: &[Vec<HelpSplit>]) -> f64 {
    let mut cap = f64::INFINITY;
    for i in sc.cell(s) {
        let p = sc.mu(i);
        for split in &help[i] {
            if split.bits <= 0.0 {
                continue;
            }
            let slot = sc.topology().slot_of(s, split.helper).expect("help only flows along edges");
            let transfer = match sc.topology().helpers(s)[slot].link {
                Link::Backhaul { rate_bps } => split.bits / rate_bps,
                Link::Local => 0.0,
            };
            cap = cap.min(p.deadline - transfer - p.cycles_per_bit * split.bits / split.f_fog);
        }
    }
    cap
}

fn fixed_of(sc: &Scenario, s: usize, help: &[Vec<HelpSplit>]) -> Vec<f64> {
    sc.cell(s).map(|i| help[i].iter().map(|h| h.bits).sum()).collect()
}

/// Full-scenario point from the per-cell solutions and the helper splits.
fn assemble(sc: &Scenario, cells: &[CellSolution], help: &[Vec<HelpSplit>]) -> PrimalPoint {
    let mut point = PrimalPoint::all_local(sc);
    for cell in cells {
        let s = cell.cell;
        for (i, v) in sc.cell(s).zip(&cell.mus) {
            let vars: &mut MuVars = &mut point.mus[i];
            vars.u = v.u;
            vars.t = v.t;
            vars.a[0] = v.own_bits.max(0.0).sqrt();
            vars.f[0] = v.f_own;
            for split in &help[i] {
                let j = sc.topology().slot_of(s, split.helper).expect("help only flows along edges");
                vars.a[j] = split.bits.max(0.0).sqrt();
                vars.f[j] = split.f_fog;
            }
        }
    }
    point
}

/// Greedy per-cell optimisation with RTH/AFH load balancing.
pub fn greedy_solve(sc: &Scenario, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    let n = sc.n_fogs();
    let mut help: Vec<Vec<HelpSplit>> = vec![Vec::new(); sc.n_mus()];
    let mut cells = Vec::with_capacity(n);
    for s in 0..n {
        let budget = sc.cell(s).map(|i| sc.mu(i).deadline).fold(0.0, f64::max);
        let budget = if budget > 0.0 { budget } else { 1.0 };
        cells.push(solve_single_cell(sc, s, budget, &vec![0.0; sc.cell(s).len()], cfg)?);
    }

    let mut candidates = vec![true; n];
    let mut log = Vec::new();
    loop {
        let spare = available_cr(sc, &cells, &help);
        let energy: Vec<f64> = cells.iter().map(|c| c.energy).collect();
        let Some((m, s)) = select_rth_afh(sc, &spare, &energy, &candidates) else {
            break;
        };
        candidates[m] = false;
        let cell = &cells[s];
        let assignments = assign_help(sc, s, m, cell, spare[m])?;
        let moved: f64 = assignments.iter().map(|a| a.1).sum();
        let granted: f64 = assignments.iter().map(|a| a.0).sum();
        let before = cell.energy;
        let moves = sc
            .cell(s)
            .zip(&cell.mus)
            .zip(&assignments)
            .filter(|(_, a)| a.1 > 0.0)
            .map(|((i, v), &(f, u))| BalanceMove { mu: i, own_bits: v.own_bits, f_own: v.f_own, moved_bits: u, f_help: f })
            .collect();
        let mut step = BalanceStep {
            rth: m,
            afh: s,
            granted_hz: granted,
            moved_bits: moved,
            energy_before: before,
            energy_after: before,
            total_after: 0.0,
            accepted: false,
            moves,
        };
        if moved > 0.0 {
            let mut trial = help.clone();
            for (i, &(f, u)) in sc.cell(s).zip(&assignments) {
                if u > 0.0 {
                    trial[i].push(HelpSplit { helper: m, bits: u, f_fog: f });
                }
            }
            let budget = extend_offload_window(sc, s, cell, &assignments).min(split_deadline_cap(sc, s, &trial));
            if let Ok(next) = solve_single_cell(sc, s, budget, &fixed_of(sc, s, &trial), cfg) {
                step.energy_after = next.energy;
                // Re-optimising can only help; a worse result is numerical
                // noise and is discarded.
                if next.energy <= before + 1e-9 {
                    step.accepted = true;
                    cells[s] = next;
                    help = trial;
                }
            }
        }
        if !step.accepted {
            step.energy_after = before;
        }
        step.total_after = cells.iter().map(|c| c.energy).sum();
        log.push(step);
    }

    let primal = assemble(sc, &cells, &help);
    let energy = weighted_total_energy(&primal, sc);
    let feas = check_feasibility(&primal, sc, cfg.feasibility_tol);
    let penalty_residual = primal.mus.iter().map(|v| (v.assigned_bits() - v.u).abs()).sum();
    Ok(Solution {
        dual: DualPoint::zeros(sc),
        rho: cells.iter().map(|c| c.rho).fold(0.0, f64::max),
        energy,
        max_violation: feas.max_relative(),
        penalty_residual,
        converged: cells.iter().all(|c| c.converged),
        penalty_converged: cells.iter().all(|c| c.converged),
        inner_iters: cells.iter().map(|c| c.inner_iters).sum(),
        penalty_stages: cells.iter().map(|c| c.penalty_stages).max().unwrap_or(0),
        traces: Vec::new(),
        warnings: cells.iter().flat_map(|c| c.warnings.iter().cloned()).collect(),
        balancing: log,
        primal,
    })
}
