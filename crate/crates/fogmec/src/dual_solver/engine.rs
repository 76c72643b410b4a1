//! Inner dual ascent and the outer penalty loop.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};

const LN_4: f64 = 2.0 * LN_2;

/// Price level, relative to the starting price, below which a slack fog is
/// tested at μ = 0.
const RELEASE_RATIO: f64 = 1e-6;

/// Parked price of a slack fog, relative to its starting price.
/// Newton steps with under 1% progress before slack fogs are tested.
const STALL_LIMIT: u32 = 3;
const SLACK_RATIO: f64 = 1e-12;

use super::block::{self, BlockEval, CellSolver, CellState, Extras, Prepared};
use super::{
    compute_z_star, dual_subgradients, recover_with, trace_row, update_duals, DualPoint, DualUpdate,
    IterationTrace, Solution, SolverConfig, StepSchedule, RHO_UNIT,
};
use crate::error::{Error, Result};
use crate::model::{check_feasibility, weighted_total_energy, PrimalPoint, Scenario};

/// Outcome of one penalty stage.
#[derive(Clone, Debug)]
pub struct InnerResult {
    pub primal: PrimalPoint,
    pub dual: DualPoint,
    pub trace: IterationTrace,
    pub converged: bool,
    /// Δ per user and whether its equation fell back to the boundary case.
    pub deltas: Vec<(f64, bool)>,
}

struct Ctx<'a> {
    sc: &'a Scenario,
    prep: Prepared,
    extras: Option<&'a Extras>,
    frame_caps: Option<Vec<f64>>,
}

impl<'a> Ctx<'a> {
    fn new(sc: &'a Scenario, extras: Option<&'a Extras>) -> Result<Self> {
        let prep = Prepared::new(sc, extras)?;
        let frame_caps = extras.map(|e| e.frame_cap.iter().map(|c| c.unwrap_or(f64::INFINITY)).collect());
        Ok(Self { sc, prep, extras, frame_caps })
    }

    fn fixed(&self) -> Option<&[f64]> {
        self.extras.map(|e| e.fixed_bits.as_slice())
    }

    /// Price at which a typical potential user of each fog would keep about
    /// half its task local; `scale > 1` starts on the under-demanded side.
    fn initial_mu(&self, scale: f64) -> Vec<f64> {
        let n = self.sc.n_fogs();
        let mut sum = vec![0.0; n];
        let mut cnt = vec![0usize; n];
        for cell in &self.prep.cells {
            for i in cell.first..cell.first + cell.len {
                let m = &self.prep.mus[i];
                let half = 0.5 * m.d;
                let price = m.k3 * half * half * (0.5 * m.tbar) / m.c;
                for h in &cell.helpers {
                    sum[h.fog] += price;
                    cnt[h.fog] += 1;
                }
            }
        }
        (0..n)
            .map(|m| if self.prep.priced[m] && cnt[m] > 0 { scale * sum[m] / cnt[m] as f64 } else { 0.0 })
            .collect()
    }

    /// Multipliers implied by a block evaluation.
    fn dual_from(&self, mu: &[f64], rho: f64, ev: &BlockEval) -> Result<DualPoint> {
        let sc = self.sc;
        let mut dual = DualPoint::zeros(sc);
        dual.mu = mu.to_vec();
        for (s, st) in ev.cells.iter().enumerate() {
            dual.frame[s] = st.nu;
            let solver = CellSolver { prep: &self.prep, s, mu, rho };
            for i in sc.cell(s) {
                let r = solver.response(i, *st)?;
                for (j, g) in dual.gamma[i].iter_mut().enumerate() {
                    if r.v[j] > 0.0 && r.lam > 0.0 {
                        *g = r.lam * r.v[j] / r.tau;
                    }
                }
            }
        }
        Ok(dual)
    }

    /// Primal point implied by a block evaluation, with Δ per user.
    fn primal_from(&self, mu: &[f64], rho: f64, ev: &BlockEval) -> Result<(PrimalPoint, Vec<(f64, bool)>)> {
        let sc = self.sc;
        let mut point = PrimalPoint::all_local(sc);
        let mut deltas = vec![(0.0, false); sc.n_mus()];
        for (s, st) in ev.cells.iter().enumerate() {
            let solver = CellSolver { prep: &self.prep, s, mu, rho };
            let cell = &self.prep.cells[s];
            for i in sc.cell(s) {
                let r = solver.response(i, *st)?;
                let c = self.prep.mus[i].c;
                let v = &mut point.mus[i];
                v.u = r.u;
                v.t = r.t;
                for (j, h) in cell.helpers.iter().enumerate() {
                    if r.v[j] > 0.0 {
                        v.a[j] = r.v[j].sqrt();
                        v.f[j] = block::fog_rate(c, r.v[j], r.tau, h.rate);
                    }
                }
                deltas[i] = (r.lam / (2.0 * rho), false);
            }
        }
        Ok((point, deltas))
    }

    fn z_star(&self, dual: &DualPoint) -> Result<Vec<f64>> {
        let g = dual.aggregated_gamma(self.sc);
        (0..self.sc.n_mus())
            .map(|i| {
                let p = self.sc.mu(i);
                compute_z_star(g[i], self.sc.h_tilde(i), p.beta)
            })
            .collect()
    }

    fn recover(&self, dual: &DualPoint, rho: f64) -> Result<(PrimalPoint, Vec<(f64, bool)>)> {
        let z = self.z_star(dual)?;
        recover_with(dual, rho, self.sc, &z, self.fixed())
    }

    fn excess(&self, priced: &[usize], loads: &[f64]) -> DVector<f64> {
        DVector::from_iterator(priced.len(), priced.iter().map(|&m| loads[m] / self.prep.caps[m] - 1.0))
    }

    /// Cells whose users can reach fog `m`.
    fn touching(&self, m: usize) -> Vec<bool> {
        self.prep.cells.iter().map(|c| c.helpers.iter().any(|h| h.fog == m)).collect()
    }
}

/// Keeps the best iterate by (feasible, energy), falling back to the least
/// violated one.
/// (feasible, energy, violation, primal, dual, Δ per user).
type Candidate = (bool, f64, f64, PrimalPoint, DualPoint, Vec<(f64, bool)>);

struct Best {
    item: Option<Candidate>,
    tol: f64,
}

impl Best {
    fn offer(&mut self, p: &PrimalPoint, d: &DualPoint, deltas: &[(f64, bool)], energy: f64, viol: f64) {
        let feasible = viol <= self.tol;
        let better = match &self.item {
            None => true,
            Some((f, e, v, ..)) => match (feasible, *f) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => energy < *e,
                (false, false) => viol < *v,
            },
        };
        if better {
            self.item = Some((feasible, energy, viol, p.clone(), d.clone(), deltas.to_vec()));
        }
    }
}

fn inner_block_newton(
    ctx: &Ctx,
    rho: f64,
    cfg: &SolverConfig,
    mu0: &[f64],
    warm: &mut [Option<CellState>],
) -> Result<InnerResult> {
    let sc = ctx.sc;
    let all_priced: Vec<usize> = (0..sc.n_fogs()).filter(|&m| ctx.prep.priced[m]).collect();
    let defaults = ctx.initial_mu(cfg.mu_init_scale);
    let mut mu: Vec<f64> = (0..sc.n_fogs())
        .map(|m| if !ctx.prep.priced[m] { 0.0 } else if mu0[m] > 0.0 { mu0[m] } else { defaults[m] })
        .collect();
    let touching: Vec<Vec<bool>> = (0..sc.n_fogs()).map(|m| ctx.touching(m)).collect();
    let excess_of = |m: usize, loads: &[f64]| loads[m] / ctx.prep.caps[m] - 1.0;
    let mut released = vec![false; sc.n_fogs()];
    let mut stalls = 0;
    // Highest price seen with the fog overloaded and lowest seen underloaded,
    // each with the other prices at the time. Once a fog's excess has
    // changed sign twice, its steps stay strictly inside those bounds while
    // the other prices are still within 1%. This stops two-cycles across
    // jumps in demand.
    let mut flips = vec![0_u32; sc.n_fogs()];
    let mut sign = vec![0_i8; sc.n_fogs()];
    let mut over: Vec<Option<(f64, Vec<f64>)>> = vec![None; sc.n_fogs()];
    let mut under: Vec<Option<(f64, Vec<f64>)>> = vec![None; sc.n_fogs()];
    let current = |b: &Option<(f64, Vec<f64>)>, m: usize, mu: &[f64]| -> Option<f64> {
        let (x, at) = b.as_ref()?;
        let same = at.iter().zip(mu).enumerate().all(|(o, (a, b))| o == m || (a.ln() - b.ln()).abs() <= 0.01 || a == b);
        same.then_some(*x)
    };
    let mut ev = block::eval(&ctx.prep, &mu, rho, warm, None)?;
    let mut trace = IterationTrace { rho, rows: Vec::new(), converged: false };
    let mut converged = false;
    let mut last = None;
    let mut best = Best { item: None, tol: cfg.feasibility_tol };

    for n in 0..cfg.inner_max_iters {
        for (w, st) in warm.iter_mut().zip(&ev.cells) {
            *w = Some(*st);
        }
        let dual = ctx.dual_from(&mu, rho, &ev)?;
        let (primal, deltas) = ctx.primal_from(&mu, rho, &ev)?;
        let row = trace_row(&primal, &dual, rho, sc, &deltas, ctx.frame_caps.as_deref());
        best.offer(&primal, &dual, &deltas, row.total, row.max_violation);
        trace.rows.push(row);
        last = Some((primal, dual, deltas));
        if n + 1 == cfg.inner_max_iters {
            break;
        }

        // A released fog whose demand came back is priced again.
        let mut reopened = false;
        for &m in &all_priced {
            if released[m] && excess_of(m, &ev.loads) > cfg.demand_tol {
                mu[m] = RELEASE_RATIO * defaults[m];
                released[m] = false;
                reopened = true;
            }
        }
        if reopened {
            ev = block::eval(&ctx.prep, &mu, rho, warm, None)?;
            continue;
        }
        let priced: Vec<usize> = all_priced.iter().copied().filter(|&m| !released[m]).collect();
        let f = ctx.excess(&priced, &ev.loads);
        let fmax = f.amax();
        if priced.is_empty() || fmax <= cfg.demand_tol {
            converged = true;
            break;
        }
        for (d, &m) in priced.iter().enumerate() {
            let lo = current(&over[m], m, &mu);
            let hi = current(&under[m], m, &mu);
            let sg = if f[d] > cfg.demand_tol { 1 } else if f[d] < -cfg.demand_tol { -1 } else { 0 };
            if sg != 0 && sign[m] != 0 && sg != sign[m] {
                flips[m] += 1;
            }
            if sg != 0 {
                sign[m] = sg;
            }
            if f[d] > cfg.demand_tol {
                over[m] = Some((lo.map_or(mu[m], |x| x.max(mu[m])), mu.clone()));
                if hi.is_some_and(|x| mu[m] >= x) {
                    under[m] = None;
                }
            } else if f[d] < -cfg.demand_tol {
                under[m] = Some((hi.map_or(mu[m], |x| x.min(mu[m])), mu.clone()));
                if lo.is_some_and(|x| mu[m] <= x) {
                    over[m] = None;
                }
            }
        }
        let bounds: Vec<(Option<f64>, Option<f64>)> =
            (0..sc.n_fogs()).map(|m| (current(&over[m], m, &mu), current(&under[m], m, &mu))).collect();
        let inside = |m: usize, x: f64| match bounds[m] {
            _ if flips[m] < 2 => x,
            (Some(lo), Some(hi)) if x <= lo || x >= hi => (lo * hi).sqrt(),
            _ => x,
        };

        // Complementary slackness: a fog still under-demanded at a price far
        // below its starting level may be slack. Its price is parked at a
        // negligible positive value, where the closed forms stay regular.
        // A stalled Newton iteration tests every under-demanded fog.
        let mut any_released = false;
        for (d, &m) in priced.iter().enumerate() {
            if f[d] < -cfg.demand_tol && (stalls >= STALL_LIMIT || mu[m] < RELEASE_RATIO * defaults[m]) {
                let mut mu_z = mu.clone();
                mu_z[m] = SLACK_RATIO * defaults[m];
                if let Ok(ev_z) = block::eval(&ctx.prep, &mu_z, rho, warm, None) {
                    if excess_of(m, &ev_z.loads) <= cfg.demand_tol {
                        mu = mu_z;
                        ev = ev_z;
                        released[m] = true;
                        any_released = true;
                    }
                }
            }
        }
        if any_released {
            stalls = 0;
            continue;
        }

        // Jacobian of relative excess demand with respect to log μ.
        let k = priced.len();
        let h: f64 = 1e-6;
        let mut jac = DMatrix::zeros(k, k);
        for (col, &m) in priced.iter().enumerate() {
            let mut mu_p = mu.clone();
            mu_p[m] *= h.exp();
            let ev_p = block::eval(&ctx.prep, &mu_p, rho, warm, Some((&ev, &touching[m])))?;
            let fp = ctx.excess(&priced, &ev_p.loads);
            jac.set_column(col, &((fp - &f) / h));
        }

        let idle: Vec<bool> = priced.iter().map(|&m| ev.loads[m] == 0.0).collect();
        if idle.iter().any(|&b| b) {
            // Nobody buys at these prices and the demand is flat: lower them
            // on their own before resuming Newton steps.
            for (d, &m) in priced.iter().enumerate() {
                if idle[d] {
                    mu[m] = inside(m, mu[m] * (-LN_4).exp());
                }
            }
            ev = block::eval(&ctx.prep, &mu, rho, warm, None)?;
            continue;
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let rhs = -(&jt * &f);
        let f2 = f.norm_squared();
        let mut lm = 1e-10 * jtj.diagonal().amax().max(f64::MIN_POSITIVE);
        let mut accepted = None;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for d in 0..k {
                a[(d, d)] += lm;
            }
            let Some(step) = a.lu().solve(&rhs) else {
                lm *= 100.0;
                continue;
            };
            let scale = 2.0 / step.amax().max(2.0);
            let mut mu_t = mu.clone();
            for (d, &m) in priced.iter().enumerate() {
                mu_t[m] = inside(m, mu_t[m] * (scale * step[d]).exp());
            }
            if let Ok(ev_t) = block::eval(&ctx.prep, &mu_t, rho, warm, None) {
                let ft = ctx.excess(&priced, &ev_t.loads);
                let ft2 = ft.norm_squared();
                if ft2 < f2 {
                    accepted = Some((mu_t, ev_t, ft2));
                    break;
                }
            }
            lm *= 100.0;
        }
        match accepted {
            Some((mu_t, ev_t, ft2)) => {
                stalls = if ft2 > 0.99 * f2 { stalls + 1 } else { 0 };
                mu = mu_t;
                ev = ev_t;
            }
            None if stalls < STALL_LIMIT => stalls = STALL_LIMIT,
            None => {
                // No descent possible: the residual sits at rounding level.
                converged = fmax <= 1e3 * cfg.demand_tol;
                break;
            }
        }
    }
    trace.converged = converged;
    let (primal, dual, deltas) = if converged {
        last.expect("at least one iteration ran")
    } else {
        let b = best.item.expect("at least one iteration ran");
        (b.3, b.4, b.5)
    };
    Ok(InnerResult { primal, dual, trace, converged, deltas })
}

fn inner_subgradient(ctx: &Ctx, rho: f64, cfg: &SolverConfig, warm_dual: &DualPoint) -> Result<InnerResult> {
    let sc = ctx.sc;
    let DualUpdate::Subgradient { delta0, alpha0 } = cfg.dual_update else {
        unreachable!("called for the subgradient rule only")
    };
    let mut dual = warm_dual.clone();
    if dual.gamma.iter().flatten().all(|&g| g == 0.0) {
        for row in dual.gamma.iter_mut() {
            row.iter_mut().for_each(|g| *g = cfg.gamma_init);
        }
    }
    let mut steps = StepSchedule { delta0: 0.0, alpha0: 0.0, gamma_floor: cfg.gamma_floor };
    let mut trace = IterationTrace { rho, rows: Vec::new(), converged: false };
    let mut best = Best { item: None, tol: cfg.feasibility_tol };
    let mut converged = false;
    for n in 0..cfg.inner_max_iters {
        let (primal, deltas) = ctx.recover(&dual, rho)?;
        let row = trace_row(&primal, &dual, rho, sc, &deltas, ctx.frame_caps.as_deref());
        best.offer(&primal, &dual, &deltas, row.total, row.max_violation);
        trace.rows.push(row);
        let sub = dual_subgradients(&primal, sc);
        if n == 0 {
            let gmu = sub.mu.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
            let ggam = sub.gamma.iter().flatten().fold(0.0_f64, |a, b| a.max(b.abs()));
            let mu_max = dual.mu.iter().fold(0.0_f64, |a, b| a.max(*b));
            let g_max = dual.gamma.iter().flatten().fold(0.0_f64, |a, b| a.max(*b));
            steps.delta0 = if gmu > 0.0 { delta0 * mu_max.max(f64::MIN_POSITIVE) / gmu } else { 0.0 };
            steps.alpha0 = if ggam > 0.0 { alpha0 * g_max.max(f64::MIN_POSITIVE) / ggam } else { 0.0 };
        }
        let next = update_duals(&dual, &sub, n, &steps);
        let change = next
            .mu
            .iter()
            .zip(&dual.mu)
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        dual = next;
        if change < 1e-12 {
            converged = true;
            break;
        }
    }
    trace.converged = converged;
    let b = best.item.expect("at least one iteration ran");
    Ok(InnerResult { primal: b.3, dual: b.4, trace, converged, deltas: b.5 })
}

/// One penalty stage at penalty `rho` (J/bit²), warm-started from `warm_start`.
pub fn inner_dual_ascent(sc: &Scenario, rho: f64, cfg: &SolverConfig, warm_start: &DualPoint) -> Result<InnerResult> {
    cfg.validate()?;
    let ctx = Ctx::new(sc, None)?;
    match cfg.dual_update {
        DualUpdate::BlockNewton => {
            let mut warm = vec![None; sc.n_fogs()];
            inner_block_newton(&ctx, rho, cfg, &warm_start.mu, &mut warm)
        }
        DualUpdate::Subgradient { .. } => inner_subgradient(&ctx, rho, cfg, &start_dual(&ctx, cfg, warm_start, rho)?),
    }
}

/// Subgradient start: given μ (or the automatic one) and γ from the exact
/// block when no γ is supplied.
fn start_dual(ctx: &Ctx, cfg: &SolverConfig, warm: &DualPoint, rho: f64) -> Result<DualPoint> {
    if warm.gamma.iter().flatten().any(|&g| g > 0.0) {
        return Ok(warm.clone());
    }
    let defaults = ctx.initial_mu(cfg.mu_init_scale);
    let mu: Vec<f64> = warm.mu.iter().zip(&defaults).map(|(w, d)| if *w > 0.0 { *w } else { *d }).collect();
    let warm_cells = vec![None; ctx.sc.n_fogs()];
    let ev = block::eval(&ctx.prep, &mu, rho, &warm_cells, None)?;
    ctx.dual_from(&mu, rho, &ev)
}

/// Minimum weighted energy allocation by the penalty / dual-ascent method.
pub fn solve(sc: &Scenario, cfg: &SolverConfig) -> Result<Solution> {
    solve_with(sc, cfg, None)
}

pub(crate) fn solve_with(sc: &Scenario, cfg: &SolverConfig, extras: Option<&Extras>) -> Result<Solution> {
    cfg.validate()?;
    let ctx = Ctx::new(sc, extras)?;
    let eps = cfg.epsilon(sc);
    let mut rho = cfg.rho0 * RHO_UNIT;
    let rho_cap = cfg.rho_cap * RHO_UNIT;
    let mut mu = vec![0.0; sc.n_fogs()];
    let mut warm = vec![None; sc.n_fogs()];
    let mut dual_warm = DualPoint::zeros(sc);
    let mut traces = Vec::new();
    let mut penalty_converged = false;
    let mut inner_iters = 0;
    let mut result;
    loop {
        result = match cfg.dual_update {
            DualUpdate::BlockNewton => inner_block_newton(&ctx, rho, cfg, &mu, &mut warm)?,
            DualUpdate::Subgradient { .. } => {
                let start = start_dual(&ctx, cfg, &dual_warm, rho)?;
                inner_subgradient(&ctx, rho, cfg, &start)?
            }
        };
        inner_iters += result.trace.len();
        traces.push(result.trace.clone());
        let h: f64 = result.deltas.iter().map(|(d, _)| d.abs()).sum();
        if h <= eps {
            penalty_converged = true;
            break;
        }
        if rho * cfg.rho_growth > rho_cap * (1.0 + 1e-12) {
            break;
        }
        rho *= cfg.rho_growth;
        mu = result.dual.mu.clone();
        dual_warm = result.dual.clone();
    }

    let primal = result.primal;
    let energy = weighted_total_energy(&primal, sc);
    if !energy.total.is_finite() {
        return Err(Error::RootFinder("solver produced a non-finite energy".into()));
    }
    let feas = check_feasibility(&primal, sc, cfg.feasibility_tol);
    let mut warnings = Vec::new();
    for (i, (_, boundary)) in result.deltas.iter().enumerate() {
        if *boundary {
            warnings.push(format!("user {i}: Δ equation had no crossing; boundary solution used"));
        }
    }
    if !penalty_converged {
        warnings.push("penalty_unconverged".into());
    }
    let penalty_residual = result.deltas.iter().map(|(d, _)| d.abs()).sum();
    Ok(Solution {
        primal,
        dual: result.dual,
        rho,
        energy,
        max_violation: feas.max_relative(),
        penalty_residual,
        converged: penalty_converged && result.converged,
        penalty_converged,
        inner_iters,
        penalty_stages: traces.len(),
        traces,
        warnings,
        balancing: Vec::new(),
    })
}
