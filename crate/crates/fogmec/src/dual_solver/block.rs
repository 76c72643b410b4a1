//! Exact maximisation of the Lagrangian dual over the latency multipliers γ
//! for fixed fog prices μ.
//!
//! For fixed μ every cell decouples. Inside a cell the stationarity and
//! complementary-slackness conditions reduce to two scalars: the frame length
//! T_s and the aggregated time price γ̂_s. Given both, each user's marginal
//! offloading value λ = 2ρΔ follows from a monotone scalar equation, and every
//! primal and dual quantity has a closed form in λ.

use super::{compute_z_star, marginal_uplink_cost, u_bounds};
use crate::error::{Error, Result};
use crate::model::{Link, Scenario};
use crate::roots::brent;

/// Per-cell side constraints used by the greedy balancer.
#[derive(Clone, Debug, Default)]
pub(crate) struct Extras {
    /// Upper bound on the frame length, per cell.
    pub frame_cap: Vec<Option<f64>>,
    /// Bits a user must upload that are already placed on another fog.
    pub fixed_bits: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct MuStatic {
    pub d: f64,
    pub tbar: f64,
    pub c: f64,
    /// 3αβc³/T̄²: the local marginal energy is `k3 (D − u)²`.
    pub k3: f64,
    pub beta: f64,
    pub ht: f64,
    pub u_lo: f64,
    pub fixed: f64,
}

impl MuStatic {
    /// Uplink bits given the total marginal price `x = A + 2ρΔ`.
    #[inline]
    pub fn u_of(&self, x: f64) -> f64 {
        let g = self.d - (x.max(0.0) / self.k3).sqrt();
        g.clamp(self.u_lo, self.d)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct HelperStatic {
    pub fog: usize,
    pub rate: Option<f64>,
    pub available: bool,
}

#[derive(Clone, Debug)]
pub(crate) struct CellStatic {
    pub first: usize,
    pub len: usize,
    pub helpers: Vec<HelperStatic>,
    /// Smallest deadline in the cell.
    pub t_max: f64,
    pub frame_cap: Option<f64>,
}

/// Scenario data laid out for the hot loops.
#[derive(Clone, Debug)]
pub(crate) struct Prepared {
    pub w: f64,
    pub mus: Vec<MuStatic>,
    pub cells: Vec<CellStatic>,
    pub caps: Vec<f64>,
    /// Fogs whose price must be positive at the optimum.
    pub priced: Vec<bool>,
}

impl Prepared {
    pub fn new(sc: &Scenario, extras: Option<&Extras>) -> Result<Self> {
        let w = sc.bandwidth;
        let caps: Vec<f64> = (0..sc.n_fogs()).map(|m| sc.capacity(m)).collect();
        let mut mus = Vec::with_capacity(sc.n_mus());
        for i in 0..sc.n_mus() {
            let p = sc.mu(i);
            let (u_min, _) = u_bounds(p);
            let fixed = extras.map_or(0.0, |e| e.fixed_bits[i]);
            mus.push(MuStatic {
                d: p.data_bits,
                tbar: p.deadline,
                c: p.cycles_per_bit,
                k3: 3.0 * p.alpha * p.beta * p.cycles_per_bit.powi(3) / (p.deadline * p.deadline),
                beta: p.beta,
                ht: sc.h_tilde(i),
                u_lo: u_min.max(fixed),
                fixed,
            });
        }
        let mut cells = Vec::with_capacity(sc.n_fogs());
        for s in 0..sc.n_fogs() {
            let range = sc.cell(s);
            let helpers = sc
                .topology()
                .helpers(s)
                .iter()
                .map(|h| HelperStatic {
                    fog: h.fog,
                    rate: match h.link {
                        Link::Local => None,
                        Link::Backhaul { rate_bps } => Some(rate_bps),
                    },
                    available: caps[h.fog] > 0.0,
                })
                .collect::<Vec<_>>();
            let t_max = range.clone().map(|i| mus[i].tbar).fold(f64::INFINITY, f64::min);
            let frame_cap = extras.and_then(|e| e.frame_cap[s]);
            cells.push(CellStatic { first: range.start, len: range.len(), helpers, t_max, frame_cap });
        }

        // A fog carries a positive price iff some user that can reach it
        // would send it bits when fog CPU is free.
        let mut priced = vec![false; sc.n_fogs()];
        for cell in &cells {
            for i in cell.first..cell.first + cell.len {
                let m = &mus[i];
                let a_min = marginal_uplink_cost(0.0, m.ht, m.beta, w);
                let wants = m.u_of(a_min) > m.fixed || m.u_lo > m.fixed;
                if !wants {
                    continue;
                }
                if !cell.helpers.iter().any(|h| h.available) {
                    if m.u_lo > m.fixed {
                        return Err(Error::Infeasible(format!(
                            "user {i} cannot meet its deadline locally and has no fog with capacity"
                        )));
                    }
                    continue;
                }
                for h in &cell.helpers {
                    if h.available {
                        priced[h.fog] = true;
                    }
                }
            }
        }
        Ok(Self { w, mus, cells, caps, priced })
    }
}

/// Solution of one user's λ-equation for a given cell state.
#[derive(Clone, Debug)]
pub(crate) struct MuResponse {
    pub lam: f64,
    /// Uplink bits and slot length.
    pub u: f64,
    pub t: f64,
    pub tau: f64,
    /// Bits per helper slot.
    pub v: Vec<f64>,
}

struct LamProblem<'a> {
    m: &'a MuStatic,
    helpers: &'a [HelperStatic],
    mu: &'a [f64],
    rho: f64,
    tau: f64,
    a_cost: f64,
}

impl LamProblem<'_> {
    #[inline]
    fn cross(&self, lam: f64, j: usize) -> f64 {
        let h = &self.helpers[j];
        match h.rate {
            Some(d) if h.available && self.mu[h.fog] > 0.0 && lam > 0.0 => {
                let r = (self.mu[h.fog] * self.m.c * self.tau / lam).sqrt();
                (d * (self.tau - r)).max(0.0)
            }
            _ => 0.0,
        }
    }

    #[inline]
    fn residual(&self, lam: f64) -> f64 {
        let mut h = self.m.u_of(self.a_cost + lam) - lam / (2.0 * self.rho) - self.m.fixed;
        for j in 1..self.helpers.len() {
            h -= self.cross(lam, j);
        }
        h
    }

    fn lam_max(&self) -> f64 {
        let own = &self.helpers[0];
        if own.available {
            self.mu[own.fog] * self.m.c / self.tau
        } else {
            f64::INFINITY
        }
    }

    /// Returns (λ, bits on the serving fog).
    fn solve(&self) -> Result<(f64, f64)> {
        let h0 = self.residual(0.0);
        if h0 <= 0.0 {
            return Ok((0.0, 0.0));
        }
        let lmax = self.lam_max();
        if lmax.is_finite() {
            let hm = self.residual(lmax);
            if hm >= 0.0 {
                return Ok((lmax, hm));
            }
            let lam = brent(|l| self.residual(l), 0.0, lmax, h0, hm, 0.0, 1e-15, 200)?;
            return Ok((lam, 0.0));
        }
        let mut hi = (self.a_cost + self.m.k3 * self.m.d * self.m.d).max(f64::MIN_POSITIVE);
        let mut hh = self.residual(hi);
        let mut guard = 0;
        while hh >= 0.0 {
            hi *= 4.0;
            hh = self.residual(hi);
            guard += 1;
            if guard > 600 {
                return Err(Error::RootFinder("no upper bracket for the user price".into()));
            }
        }
        let lam = brent(|l| self.residual(l), 0.0, hi, h0, hh, 0.0, 1e-15, 200)?;
        Ok((lam, 0.0))
    }
}

/// Frame length T_s, aggregated time price γ̂_s and the frame-cap multiplier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct CellState {
    pub t: f64,
    pub g: f64,
    pub nu: f64,
}

impl CellState {
    pub const EMPTY: CellState = CellState { t: 0.0, g: 0.0, nu: 0.0 };
}

/// Sums that the two cell equations need.
#[derive(Clone, Copy, Debug)]
struct CellSums {
    gamma: f64,
    time: f64,
    any_offload: bool,
}

pub(crate) struct CellSolver<'a> {
    pub prep: &'a Prepared,
    pub s: usize,
    pub mu: &'a [f64],
    pub rho: f64,
}

impl CellSolver<'_> {
    fn cell(&self) -> &CellStatic {
        &self.prep.cells[self.s]
    }

    fn lam_problem(&self, i: usize, t_frame: f64, g: f64) -> Result<(LamProblem<'_>, f64)> {
        let m = &self.prep.mus[i];
        let z = compute_z_star(g, m.ht, m.beta)?;
        let a_cost = marginal_uplink_cost(z, m.ht, m.beta, self.prep.w);
        let tau = m.tbar - t_frame;
        Ok((LamProblem { m, helpers: &self.cell().helpers, mu: self.mu, rho: self.rho, tau, a_cost }, z))
    }

    fn sums(&self, t_frame: f64, g: f64) -> Result<CellSums> {
        let cell = self.cell();
        let mut out = CellSums { gamma: 0.0, time: 0.0, any_offload: false };
        for i in cell.first..cell.first + cell.len {
            let (lp, z) = self.lam_problem(i, t_frame, g)?;
            let (lam, _) = lp.solve()?;
            let u = lp.m.u_of(lp.a_cost + lam);
            if u > 0.0 {
                out.any_offload = true;
                out.time += if z > 0.0 { u / (self.prep.w * z) } else { f64::INFINITY };
            }
            if lam > 0.0 {
                let delta = lam / (2.0 * self.rho);
                out.gamma += lam * (u - delta - lp.m.fixed).max(0.0) / lp.tau;
            }
        }
        Ok(out)
    }

    pub fn response(&self, i: usize, state: CellState) -> Result<MuResponse> {
        let (lp, z) = self.lam_problem(i, state.t, state.g + state.nu)?;
        let (lam, v_self) = lp.solve()?;
        let u = lp.m.u_of(lp.a_cost + lam);
        let mut v = vec![0.0; lp.helpers.len()];
        v[0] = v_self;
        for (j, vj) in v.iter_mut().enumerate().skip(1) {
            *vj = lp.cross(lam, j);
        }
        let t = if u > 0.0 { u / (self.prep.w * z) } else { 0.0 };
        Ok(MuResponse { lam, u, t, tau: lp.tau, v })
    }

    /// Fixed-T_s solve for γ̂ = Σγ(T_s, γ̂).
    fn g_of_t(&self, t_frame: f64) -> Result<f64> {
        let s0 = self.sums(t_frame, 0.0)?.gamma;
        if s0 <= 0.0 {
            return Ok(0.0);
        }
        let f = |g: f64| self.sums(t_frame, g).map(|x| g - x.gamma).unwrap_or(f64::NAN);
        // Σγ usually falls as γ̂ rises, but not always: widen until it does.
        let (mut lo, mut flo) = (0.0, -s0);
        let mut hi = s0;
        let mut fhi = f(hi);
        let mut guard = 0;
        while fhi < 0.0 {
            (lo, flo) = (hi, fhi);
            hi *= 4.0;
            fhi = f(hi);
            guard += 1;
            if guard > 200 {
                return Err(Error::RootFinder(format!("cell {}: latency price has no upper bracket", self.s)));
            }
        }
        brent(f, lo, hi, flo, fhi, 0.0, 1e-15, 200)
    }

    /// Bracketing solve of both cell equations.
    fn solve_nested(&self) -> Result<CellState> {
        let t_max = self.cell().t_max;
        let psi = |t: f64| -> f64 {
            match self.g_of_t(t).and_then(|g| self.sums(t, g)) {
                Ok(x) => t - x.time,
                Err(_) => f64::NAN,
            }
        };
        let lo = t_max * 1e-12;
        let plo = psi(lo);
        // ψ need not be monotone: at long frames the price fixed point can
        // collapse. Take the first upward crossing on a geometric scan.
        let mut prev = (lo, plo);
        let mut found = None;
        if !(plo >= 0.0) {
            let grid = (1..=24)
                .map(|k| t_max * 10f64.powf(-12.0 + 0.5 * k as f64))
                .filter(|&t| t < t_max)
                .chain((1..=50).map(|j| t_max * (1.0 - 0.5f64.powi(j))));
            for t in grid {
                if t <= prev.0 {
                    continue;
                }
                let p = psi(t);
                if p > 0.0 {
                    found = Some((t, p));
                    break;
                }
                if p.is_finite() {
                    prev = (t, p);
                }
            }
        }
        let (lo, plo) = prev;
        let (hi, phi) = match found {
            Some(x) => x,
            None if plo >= 0.0 => (lo, plo),
            None => {
                return Err(Error::RootFinder(format!("cell {}: frame equation has no upper bracket", self.s)));
            }
        };
        let t = if plo >= 0.0 { lo } else { brent(psi, lo, hi, plo, phi, 0.0, 1e-15, 200)? };
        let g = self.g_of_t(t)?;
        Ok(CellState { t, g, nu: 0.0 })
    }

    fn scaled_residual(&self, t: f64, g: f64) -> Option<[f64; 2]> {
        let x = self.sums(t, g).ok()?;
        let t_max = self.cell().t_max;
        let r = [(g - x.gamma) / g.max(x.gamma), (t - x.time) / t_max];
        (r[0].is_finite() && r[1].is_finite()).then_some(r)
    }

    /// Damped Newton on (T_s, γ̂) from a warm start.
    fn solve_newton(&self, start: CellState) -> Option<CellState> {
        let t_max = self.cell().t_max;
        let (mut t, mut g) = (start.t, start.g);
        if !(t > 0.0 && t < t_max && g > 0.0) {
            return None;
        }
        let mut r = self.scaled_residual(t, g)?;
        for _ in 0..40 {
            let norm = r[0].abs().max(r[1].abs());
            if norm < 1e-14 {
                return Some(CellState { t, g, nu: 0.0 });
            }
            let ht = 1e-8 * t;
            let hg = 1e-8 * g;
            let rt = self.scaled_residual(t + ht, g)?;
            let rg = self.scaled_residual(t, g + hg)?;
            let j = [[(rt[0] - r[0]) / ht, (rg[0] - r[0]) / hg], [(rt[1] - r[1]) / ht, (rg[1] - r[1]) / hg]];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if !(det.is_finite() && det != 0.0) {
                return None;
            }
            let dt = -(j[1][1] * r[0] - j[0][1] * r[1]) / det;
            let dg = -(-j[1][0] * r[0] + j[0][0] * r[1]) / det;
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let (nt, ng) = (t + step * dt, g + step * dg);
                if nt > 0.0 && nt < t_max && ng > 0.0 {
                    if let Some(nr) = self.scaled_residual(nt, ng) {
                        if nr[0].abs().max(nr[1].abs()) < norm {
                            t = nt;
                            g = ng;
                            r = nr;
                            accepted = true;
                            break;
                        }
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                // Stalled at rounding level counts as converged.
                return (norm < 1e-11).then_some(CellState { t, g, nu: 0.0 });
            }
        }
        None
    }

    /// Solve the cell's reduced KKT system, warm-started when possible.
    pub fn solve(&self, warm: Option<CellState>) -> Result<CellState> {
        let cell = self.cell();
        if cell.len == 0 {
            return Ok(CellState::EMPTY);
        }
        if !self.sums(0.0, 0.0)?.any_offload {
            return Ok(CellState::EMPTY);
        }
        let free = match warm.and_then(|w| self.solve_newton(w)) {
            Some(st) => Ok(st),
            None => self.solve_nested(),
        };
        match (cell.frame_cap, free) {
            (Some(cap), Ok(st)) if st.t > cap => self.solve_capped(cap, st.g),
            // Bits fixed on other fogs can push the free frame past every
            // deadline; the cap then decides.
            (Some(cap), Err(_)) => self.solve_capped(cap, self.g_of_t(cap)?),
            (_, r) => r,
        }
    }

    /// Frame pinned at `cap`; the extra price ν enters through z.
    fn solve_capped(&self, cap: f64, g_free: f64) -> Result<CellState> {
        let time = |g: f64| self.sums(cap, g).map(|x| x.time - cap).unwrap_or(f64::NAN);
        let lo = g_free.max(f64::MIN_POSITIVE);
        let flo = time(lo);
        if flo <= 0.0 {
            let g = self.sums(cap, lo)?.gamma;
            return Ok(CellState { t: cap, g, nu: (lo - g).max(0.0) });
        }
        let mut hi = 2.0 * lo;
        let mut fhi = time(hi);
        let mut guard = 0;
        while fhi > 0.0 {
            hi *= 2.0;
            fhi = time(hi);
            guard += 1;
            if guard > 2000 {
                return Err(Error::Infeasible(format!("cell {}: frame cap {cap:e} s cannot be met", self.s)));
            }
        }
        let g_hat = brent(time, lo, hi, flo, fhi, 0.0, 1e-15, 200)?;
        let g = self.sums(cap, g_hat)?.gamma;
        Ok(CellState { t: cap, g, nu: (g_hat - g).max(0.0) })
    }
}

/// Result of maximising over γ for one μ.
#[derive(Clone, Debug)]
pub(crate) struct BlockEval {
    pub cells: Vec<CellState>,
    pub loads: Vec<f64>,
}

pub(crate) fn cell_loads(prep: &Prepared, s: usize, mu: &[f64], rho: f64, st: CellState, loads: &mut [f64]) -> Result<()> {
    let solver = CellSolver { prep, s, mu, rho };
    let cell = &prep.cells[s];
    for i in cell.first..cell.first + cell.len {
        let r = solver.response(i, st)?;
        let c = prep.mus[i].c;
        for (j, h) in cell.helpers.iter().enumerate() {
            if r.v[j] > 0.0 {
                loads[h.fog] += fog_rate(c, r.v[j], r.tau, h.rate);
            }
        }
    }
    Ok(())
}

/// CPU rate that finishes `v` bits (after backhaul transfer) in `tau`.
#[inline]
pub(crate) fn fog_rate(c: f64, v: f64, tau: f64, rate: Option<f64>) -> f64 {
    match rate {
        None => c * v / tau,
        Some(d) => c * v / (tau - v / d),
    }
}

/// Solve every cell for prices `mu`. Cells listed in `only` are re-solved,
/// the others are copied from `base`.
pub(crate) fn eval(
    prep: &Prepared,
    mu: &[f64],
    rho: f64,
    warm: &[Option<CellState>],
    base: Option<(&BlockEval, &[bool])>,
) -> Result<BlockEval> {
    let n = prep.cells.len();
    let mut cells = Vec::with_capacity(n);
    for s in 0..n {
        match base {
            Some((b, only)) if !only[s] => cells.push(b.cells[s]),
            _ => cells.push(CellSolver { prep, s, mu, rho }.solve(warm[s])?),
        }
    }
    let mut loads = vec![0.0; prep.caps.len()];
    for (s, st) in cells.iter().enumerate() {
        cell_loads(prep, s, mu, rho, *st, &mut loads)?;
    }
    Ok(BlockEval { cells, loads })
}
