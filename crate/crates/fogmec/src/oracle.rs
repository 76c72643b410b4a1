//! Brute-force and residual oracles for tests. Everything here is computed
//! from first principles and shares no arithmetic with the solvers.

use crate::dual_solver::DualPoint;
use crate::error::{Error, Result};
use crate::model::{Link, MuVars, PrimalPoint, Scenario};

/// One grid axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, steps: usize) -> Self {
        Self { lo, hi, steps }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.steps < 2 || !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::InvalidConfig(format!("grid axis {name} needs lo < hi and >= 2 steps")));
        }
        Ok(())
    }

    fn point(&self, k: usize) -> f64 {
        self.lo + (self.hi - self.lo) * k as f64 / (self.steps - 1) as f64
    }

    /// Box of a tenth of the width around `x`, kept inside `outer`.
    fn shrink(&self, x: f64, outer: &Axis, factor: f64) -> Axis {
        let half = 0.5 * (self.hi - self.lo) / factor;
        let (mut lo, mut hi) = (x - half, x + half);
        if lo < outer.lo {
            hi += outer.lo - lo;
            lo = outer.lo;
        }
        if hi > outer.hi {
            lo -= hi - outer.hi;
            hi = outer.hi;
        }
        Axis { lo: lo.max(outer.lo), hi, steps: self.steps }
    }
}

/// Grid over uplink bits, slot length (as a fraction of the longest slot the
/// helpers' deadlines and capacities allow) and the split of the uplink bits among
/// the helpers (stick-breaking fractions, one axis per helper but the last).
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub u: Axis,
    pub t: Axis,
    pub split: Axis,
    pub rounds: usize,
}

impl GridSpec {
    /// 64 points per axis and three refinements over the full feasible box.
    pub fn for_scenario(sc: &Scenario) -> Result<Self> {
        let i = single_user(sc)?;
        let p = sc.mu(i);
        let u_min = (p.data_bits - p.deadline * p.max_cpu / p.cycles_per_bit).max(0.0);
        Ok(Self {
            u: Axis::new(u_min, p.data_bits, 64),
            t: Axis::new(1e-9, 1.0, 64),
            split: Axis::new(0.0, 1.0, 64),
            rounds: 3,
        })
    }
}

/// Best grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub u: f64,
    pub t: f64,
    /// Bits per helper slot.
    pub bits: Vec<f64>,
    /// Time-tight fog rates per helper slot.
    pub f_fog: Vec<f64>,
    pub f_local: f64,
    pub energy: f64,
}

impl GridPoint {
    /// The point in the solver's variable space.
    pub fn to_primal(&self, sc: &Scenario) -> Result<PrimalPoint> {
        let i = single_user(sc)?;
        let mut p = PrimalPoint::all_local(sc);
        p.mus[i] = MuVars {
            u: self.u,
            t: self.t,
            a: self.bits.iter().map(|b| b.sqrt()).collect(),
            f: self.f_fog.clone(),
        };
        Ok(p)
    }
}

fn single_user(sc: &Scenario) -> Result<usize> {
    if sc.n_mus() != 1 {
        return Err(Error::InvalidScenario(format!("oracle needs exactly one user, got {}", sc.n_mus())));
    }
    Ok(0)
}

/// Weighted energy of one user: α c³ ℓ³/T̄² locally plus t(2^{u/(Wt)} − 1)σ²/h.
fn user_energy(sc: &Scenario, i: usize, u: f64, t: f64) -> f64 {
    let p = sc.mu(i);
    p.beta * (local_energy(sc, i, u) + uplink_energy(sc, i, u, t))
}

/// Unweighted CPU energy α c³ (D − u)³/T̄² of the bits kept on the device.
fn local_energy(sc: &Scenario, i: usize, u: f64) -> f64 {
    let p = sc.mu(i);
    let l = p.data_bits - u;
    p.alpha * p.cycles_per_bit.powi(3) * l.powi(3) / (p.deadline * p.deadline)
}

/// Unweighted transmit energy t(2^{u/(Wt)} − 1)σ²/h.
fn uplink_energy(sc: &Scenario, i: usize, u: f64, t: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if t <= 0.0 {
        f64::INFINITY
    } else {
        t * (2f64.powf(u / (sc.bandwidth * t)) - 1.0) * sc.noise / sc.mu(i).gain
    }
}

/// Stick-breaking: fractions x₀, x₁, … of what is left, the last helper
/// takes the remainder.
fn split_bits(u: f64, fractions: &[f64], n: usize) -> Vec<f64> {
    let mut left = u;
    let mut out = Vec::with_capacity(n);
    for &x in fractions.iter().take(n.saturating_sub(1)) {
        let b = left * x;
        out.push(b);
        left -= b;
    }
    out.push(left.max(0.0));
    out
}

/// Score of one candidate, `None` when infeasible. `t_frac` scales the
/// longest slot compatible with every helper's deadline and capacity.
fn score(sc: &Scenario, i: usize, u: f64, t_frac: f64, fractions: &[f64]) -> Option<GridPoint> {
    let p = sc.mu(i);
    let helpers = sc.helpers_of_mu(i);
    let bits = split_bits(u, fractions, helpers.len());
    let transfer = |j: usize| match helpers[j].link {
        Link::Local => 0.0,
        Link::Backhaul { rate_bps } => bits[j] / rate_bps,
    };
    let mut t_max = p.deadline;
    for (j, h) in helpers.iter().enumerate() {
        if bits[j] > 0.0 {
            let cap = sc.capacity(h.fog);
            if cap <= 0.0 {
                return None;
            }
            t_max = t_max.min(p.deadline - transfer(j) - p.cycles_per_bit * bits[j] / cap);
        }
    }
    if t_max <= 0.0 {
        return None;
    }
    let t = t_frac * t_max;
    let mut f_fog = vec![0.0; helpers.len()];
    for (j, h) in helpers.iter().enumerate() {
        if bits[j] <= 0.0 {
            continue;
        }
        let room = p.deadline - t - transfer(j);
        if room <= 0.0 {
            return None;
        }
        f_fog[j] = (p.cycles_per_bit * bits[j] / room).min(sc.capacity(h.fog));
    }
    let f_local = p.cycles_per_bit * (p.data_bits - u) / p.deadline;
    if f_local > p.max_cpu * (1.0 + 1e-12) {
        return None;
    }
    let energy = user_energy(sc, i, u, t);
    energy.is_finite().then_some(GridPoint { u, t, bits, f_fog, f_local, energy })
}

/// Exhaustive search for a scenario with a single user, refined around the
/// incumbent. Ties keep the lexicographically smallest grid index.
pub fn grid_search_single_mu(sc: &Scenario, grid: &GridSpec) -> Result<GridPoint> {
    let i = single_user(sc)?;
    grid.u.validate("u")?;
    grid.t.validate("t")?;
    grid.split.validate("split")?;
    let n_frac = sc.helpers_of_mu(i).len().saturating_sub(1);
    if n_frac > 2 {
        return Err(Error::InvalidConfig("oracle grid supports at most three helpers".into()));
    }
    let mut axes_u = grid.u;
    let mut axes_t = grid.t;
    let mut axes_x = vec![grid.split; n_frac];
    let mut best: Option<GridPoint> = None;
    for round in 0..=grid.rounds {
        let mut round_best: Option<(GridPoint, f64, Vec<f64>)> = None;
        let combos = axes_x.iter().map(|a| a.steps).product::<usize>();
        for ku in 0..axes_u.steps {
            let u = axes_u.point(ku);
            for kt in 0..axes_t.steps {
                let t = axes_t.point(kt);
                for c in 0..combos {
                    let mut rest = c;
                    let fr: Vec<f64> = axes_x
                        .iter()
                        .rev()
                        .map(|a| {
                            let k = rest % a.steps;
                            rest /= a.steps;
                            a.point(k)
                        })
                        .collect::<Vec<_>>()
                        .into_iter()
                        .rev()
                        .collect();
                    if let Some(pt) = score(sc, i, u, t, &fr) {
                        if round_best.as_ref().is_none_or(|(b, _, _)| pt.energy < b.energy) {
                            round_best = Some((pt, t, fr));
                        }
                    }
                }
            }
        }
        let Some((pt, t_frac, fr)) = round_best else {
            if round == 0 {
                return Err(Error::Infeasible("no feasible grid point".into()));
            }
            break;
        };
        if best.as_ref().is_none_or(|b| pt.energy <= b.energy) {
            best = Some(pt.clone());
        }
        axes_u = axes_u.shrink(pt.u, &grid.u, 10.0);
        axes_t = axes_t.shrink(t_frac, &grid.t, 10.0);
        for (a, x) in axes_x.iter_mut().zip(&fr) {
            *a = a.shrink(*x, &grid.split, 10.0);
        }
    }
    Ok(best.expect("round 0 found a point"))
}

/// Penalised Lagrangian: weighted energy, ρ(Σa² − u)², μ(Σf − F̄) and
/// γ(T_s + a²/d + c a²/f − T̄) on every helper slot.
pub fn lagrangian_value(primal: &PrimalPoint, dual: &DualPoint, rho: f64, sc: &Scenario) -> f64 {
    let mut value = 0.0;
    let mut load = vec![0.0; sc.n_fogs()];
    for s in 0..sc.n_fogs() {
        let frame: f64 = sc.cell(s).map(|i| primal.mus[i].t).sum();
        for i in sc.cell(s) {
            let v = &primal.mus[i];
            let p = sc.mu(i);
            value += user_energy(sc, i, v.u, v.t);
            let gap = v.a.iter().map(|a| a * a).sum::<f64>() - v.u;
            value += rho * gap * gap;
            for (j, h) in sc.topology().helpers(s).iter().enumerate() {
                load[h.fog] += v.f[j];
                let g = dual.gamma[i][j];
                if g == 0.0 {
                    continue;
                }
                let bits = v.a[j] * v.a[j];
                let mut time = frame - p.deadline;
                if bits > 0.0 {
                    if let Link::Backhaul { rate_bps } = h.link {
                        time += bits / rate_bps;
                    }
                    time += p.cycles_per_bit * bits / v.f[j];
                }
                value += g * time;
            }
        }
    }
    for m in 0..sc.n_fogs() {
        value += dual.mu[m] * (load[m] - sc.capacity(m));
    }
    value
}

/// The terms of the Lagrangian that depend on MU `i`'s variables. Same
/// derivatives as `lagrangian_value` in those variables, but without the
/// other users' energy and its own local energy, both of which would drown
/// small steps in roundoff. The local term is differenced on its own.
fn mu_lagrangian(primal: &PrimalPoint, dual: &DualPoint, rho: f64, sc: &Scenario, i: usize) -> f64 {
    let s = sc.cell_of(i);
    let v = &primal.mus[i];
    let p = sc.mu(i);
    let frame: f64 = sc.cell(s).map(|k| primal.mus[k].t).sum();
    let gap = v.a.iter().map(|a| a * a).sum::<f64>() - v.u;
    let mut value = p.beta * uplink_energy(sc, i, v.u, v.t) + rho * gap * gap;
    for (j, h) in sc.topology().helpers(s).iter().enumerate() {
        value += dual.mu[h.fog] * v.f[j];
        let g = dual.gamma[i][j];
        if g == 0.0 {
            continue;
        }
        let bits = v.a[j] * v.a[j];
        let mut time = frame - p.deadline;
        if bits > 0.0 {
            if let Link::Backhaul { rate_bps } = h.link {
                time += bits / rate_bps;
            }
            time += p.cycles_per_bit * bits / v.f[j];
        }
        value += g * time;
    }
    // Other users' slot deadlines see t_i through the frame length.
    let others: f64 = sc.cell(s).filter(|&k| k != i).map(|k| dual.gamma[k].iter().sum::<f64>()).sum();
    value + others * v.t
}

/// Minimiser of a unimodal `f` on [a, b].
fn golden_min(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
        if b - a < 1e-14 * (1.0 + a.abs()) {
            break;
        }
    }
    0.5 * (a + b)
}

/// Derivative of `f` at `x` by Richardson extrapolation over steps h and 2h,
/// one-sided where [lo, hi] leaves no room.
fn richardson(f: &dyn Fn(f64) -> f64, x: f64, h: f64, lo: f64, hi: f64) -> f64 {
    let diff = |h: f64| {
        if x - h >= lo && x + h <= hi {
            ((f(x + h) - f(x - h)) / (2.0 * h), 4.0)
        } else if x + h <= hi {
            ((f(x + h) - f(x)) / h, 2.0)
        } else {
            ((f(x) - f(x - h)) / h, 2.0)
        }
    };
    let (d1, k) = diff(h);
    let (d2, _) = diff(2.0 * h);
    (k * d1 - d2) / (k - 1.0)
}

/// Coordinate of the reduced variable space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    U { mu: usize },
    T { mu: usize },
    A { mu: usize, slot: usize },
    F { mu: usize, slot: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stationarity {
    /// |∂L/∂x|·scale(x)/max(|L|, all-local energy) per coordinate, projected
    /// at active bounds.
    pub residuals: Vec<(Var, f64)>,
}

impl Stationarity {
    pub fn max(&self) -> f64 {
        // NaN counts as the worst possible residual.
        self.residuals.iter().map(|r| if r.1.is_nan() { f64::INFINITY } else { r.1 }).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<(Var, f64)> {
        self.residuals.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

fn get(p: &PrimalPoint, v: Var) -> f64 {
    match v {
        Var::U { mu } => p.mus[mu].u,
        Var::T { mu } => p.mus[mu].t,
        Var::A { mu, slot } => p.mus[mu].a[slot],
        Var::F { mu, slot } => p.mus[mu].f[slot],
    }
}

fn set(p: &mut PrimalPoint, v: Var, x: f64) {
    match v {
        Var::U { mu } => p.mus[mu].u = x,
        Var::T { mu } => p.mus[mu].t = x,
        Var::A { mu, slot } => p.mus[mu].a[slot] = x,
        Var::F { mu, slot } => p.mus[mu].f[slot] = x,
    }
}

/// Finite-difference gradient of [`lagrangian_value`], one residual per
/// coordinate. Coordinates resting on a bound only count when the gradient
/// points into the feasible side. Slots that carry no bits are skipped: there
/// f is not identified.
pub fn stationarity_residuals(primal: &PrimalPoint, dual: &DualPoint, rho: f64, sc: &Scenario) -> Stationarity {
    // Objective scale: the all-local energy, or |L| when larger. Using |L|
    // alone would blow up wherever the optimum is tiny.
    let all_local: f64 = (0..sc.n_mus()).map(|i| user_energy(sc, i, 0.0, 0.0)).sum();
    let base = lagrangian_value(primal, dual, rho, sc).abs().max(all_local).max(f64::MIN_POSITIVE);
    let mut residuals = Vec::new();
    for i in 0..sc.n_mus() {
        let p = sc.mu(i);
        let u_min = (p.data_bits - p.deadline * p.max_cpu / p.cycles_per_bit).max(0.0);
        let mut vars = vec![(Var::U { mu: i }, p.data_bits, u_min, p.data_bits)];
        if primal.mus[i].u > 0.0 {
            vars.push((Var::T { mu: i }, p.deadline, 0.0, f64::INFINITY));
        }
        for (j, h) in sc.helpers_of_mu(i).iter().enumerate() {
            vars.push((Var::A { mu: i, slot: j }, p.data_bits.sqrt(), 0.0, f64::INFINITY));
            if primal.mus[i].a[j] > 0.0 {
                vars.push((Var::F { mu: i, slot: j }, sc.capacity(h.fog).max(1.0), 0.0, f64::INFINITY));
            }
        }
        for (var, scale, lo, hi) in vars {
            let x = get(primal, var);
            let wide = 1e-6 * scale.max(x.abs());
            let mut h = wide;
            // u/t enters through 2^(u/(W t)); a short slot needs a step small
            // enough to keep the rate change tiny.
            let t = primal.mus[i].t;
            if t > 0.0 {
                match var {
                    Var::U { .. } => h = h.min(1e-4 * sc.bandwidth * t),
                    Var::T { .. } => h = h.min(1e-3 * t),
                    _ => {}
                }
            }
            // An idle user has no slot to hold fixed, so each trial u gets
            // its best slot length.
            let idle = matches!(var, Var::U { .. }) && t <= 0.0;
            let eval = |y: f64| {
                let mut q = primal.clone();
                set(&mut q, var, y);
                if idle && y > 0.0 {
                    let at = |ln_t: f64| {
                        let mut r = q.clone();
                        r.mus[i].t = ln_t.exp();
                        mu_lagrangian(&r, dual, rho, sc, i)
                    };
                    // Spectral efficiency between 1e-3 and 1e3 bit/s/Hz.
                    let lo_t = (y / (1e3 * sc.bandwidth)).ln();
                    let hi_t = (y / (1e-3 * sc.bandwidth)).min(sc.mu(i).deadline).ln();
                    return at(golden_min(&at, lo_t, hi_t.max(lo_t)));
                }
                mu_lagrangian(&q, dual, rho, sc, i)
            };
            let mut grad = richardson(&eval, x, h, lo, hi);
            if let Var::U { .. } = var {
                grad += sc.mu(i).beta * richardson(&|y: f64| local_energy(sc, i, y), x, wide, lo, hi);
            }
            let at_lo = x <= lo + 1e-12 * scale;
            let at_hi = x >= hi - 1e-12 * scale;
            let g = if (at_lo && grad > 0.0) || (at_hi && grad < 0.0) { 0.0 } else { grad };
            residuals.push((var, g.abs() * scale / base));
        }
    }
    Stationarity { residuals }
}
