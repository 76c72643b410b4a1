//! Experiment harness behind the `fogmec` binary: convergence traces,
//! one-parameter sweeps and topology comparisons over generated scenarios.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use fogmec::{dual_solver, greedy, scenario, Error, GenSpec, Result, Scenario, Solution, SolverConfig, TopologyKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which algorithm produces a sweep row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Optimal,
    Greedy,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Optimal => "optimal",
            SolverKind::Greedy => "greedy",
        }
    }

    pub fn run(self, sc: &Scenario, cfg: &SolverConfig) -> Result<Solution> {
        match self {
            SolverKind::Optimal => dual_solver::solve(sc, cfg),
            SolverKind::Greedy => greedy::greedy_solve(sc, cfg),
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimal" => Ok(SolverKind::Optimal),
            "greedy" => Ok(SolverKind::Greedy),
            _ => Err(Error::InvalidConfig(format!("unknown solver '{s}'"))),
        }
    }
}

/// The generator field a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    /// Hz.
    Bandwidth,
    /// Seconds.
    Deadline,
    /// Bits.
    DataSize,
    /// Users per cell (values are rounded to integers).
    MusPerCell,
    /// Bits per second.
    BackhaulRate,
}

impl SweepParam {
    pub const ALL: [SweepParam; 5] =
        [SweepParam::Bandwidth, SweepParam::Deadline, SweepParam::DataSize, SweepParam::MusPerCell, SweepParam::BackhaulRate];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Bandwidth => "bandwidth",
            SweepParam::Deadline => "deadline",
            SweepParam::DataSize => "data-size",
            SweepParam::MusPerCell => "mus-per-cell",
            SweepParam::BackhaulRate => "backhaul-rate",
        }
    }

    /// `base` with this field set to `value`.
    pub fn apply(self, base: &GenSpec, value: f64) -> Result<GenSpec> {
        let mut spec = base.clone();
        match self {
            SweepParam::Bandwidth => spec.bandwidth_hz = value,
            SweepParam::Deadline => spec.deadline_s = value,
            SweepParam::DataSize => spec.data_bits = value,
            SweepParam::BackhaulRate => spec.backhaul_bps = value,
            SweepParam::MusPerCell => {
                if !(value >= 1.0 && value.fract() == 0.0 && value < 1e6) {
                    return Err(Error::InvalidConfig(format!("mus-per-cell must be a positive integer, got {value}")));
                }
                spec.mus_per_cell = value as usize;
            }
        }
        Ok(spec)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SweepParam::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown sweep parameter '{s}'")))
    }
}

/// A one-parameter sweep. Seeds run from `base.seed` to
/// `base.seed + repetitions - 1` and are shared by every topology and solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: GenSpec,
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub solvers: Vec<SolverKind>,
    pub topologies: Vec<TopologyKind>,
    pub repetitions: usize,
    /// Record wall-clock time per row. Off by default so that output files
    /// are reproducible bit for bit; `wall_ms` is then written as 0.
    #[serde(default)]
    pub wall_clock: bool,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.values.is_empty() {
            return bad("sweep needs at least one value");
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return bad("sweep values must be finite");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1");
        }
        if self.solvers.is_empty() || self.topologies.is_empty() {
            return bad("sweep needs at least one solver and one topology");
        }
        self.base.validate()?;
        for &v in &self.values {
            for &t in &self.topologies {
                self.spec_for(v, t, self.base.seed)?.validate()?;
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.repetitions as u64).map(move |r| self.base.seed.wrapping_add(r))
    }

    fn spec_for(&self, value: f64, topology: TopologyKind, seed: u64) -> Result<GenSpec> {
        let mut spec = self.param.apply(&self.base, value)?;
        spec.topology = topology;
        spec.seed = seed;
        Ok(spec)
    }
}

/// One line of the sweep CSV. A failed solve leaves the energy columns empty
/// and `converged` false.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub swept_value: f64,
    pub topology: TopologyKind,
    pub solver: SolverKind,
    pub seed: u64,
    pub total_j: Option<f64>,
    pub offloaded_bits: Option<f64>,
    pub converged: bool,
    pub wall_ms: f64,
}

impl SweepRow {
    pub fn is_failure(&self) -> bool {
        self.total_j.is_none()
    }
}

/// Runs every (value, topology, solver, seed) combination on the rayon pool.
/// Rows come back sorted by that tuple whatever the completion order.
pub fn run_sweep(spec: &SweepSpec, cfg: &SolverConfig) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    cfg.validate()?;
    let mut topologies = spec.topologies.clone();
    topologies.sort();
    topologies.dedup();
    let mut solvers = spec.solvers.clone();
    solvers.sort();
    solvers.dedup();
    let mut values = spec.values.clone();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut jobs = Vec::new();
    for &v in &values {
        for &t in &topologies {
            for &s in &solvers {
                for seed in spec.seeds() {
                    jobs.push((v, t, s, seed));
                }
            }
        }
    }
    let rows = jobs
        .par_iter()
        .map(|&(value, topology, solver, seed)| {
            let start = Instant::now();
            let outcome = spec.spec_for(value, topology, seed).and_then(|g| scenario::generate(&g)).and_then(|sc| solver.run(&sc, cfg));
            let wall_ms = if spec.wall_clock { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
            let (total_j, offloaded_bits, converged) = match outcome {
                Ok(sol) => (Some(sol.total()), Some(sol.offloaded_bits()), sol.converged),
                Err(_) => (None, None, false),
            };
            SweepRow { swept_value: value, topology, solver, seed, total_j, offloaded_bits, converged, wall_ms }
        })
        .collect();
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::Domain(e.to_string()))
}

/// One row of the convergence CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub iter: usize,
    pub total_j: f64,
    pub e_local_j: f64,
    pub e_off_j: f64,
    pub dual_value: f64,
    pub penalty_residual: f64,
}

/// Solves with the optimal solver and flattens every penalty stage's inner
/// trace; `iter` counts inner iterations across stages.
pub fn run_convergence(sc: &Scenario, cfg: &SolverConfig) -> Result<(Solution, Vec<ConvergenceRow>)> {
    let sol = dual_solver::solve(sc, cfg)?;
    let rows = sol
        .traces
        .iter()
        .flat_map(|t| t.rows.iter())
        .enumerate()
        .map(|(iter, r)| ConvergenceRow {
            iter,
            total_j: r.total,
            e_local_j: r.local,
            e_off_j: r.offload,
            dual_value: r.dual_value,
            penalty_residual: r.penalty_residual,
        })
        .collect();
    Ok((sol, rows))
}

pub fn write_convergence_csv<W: Write>(rows: &[ConvergenceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::Domain(e.to_string()))
}

fn io_err(e: csv::Error) -> Error {
    Error::Domain(format!("csv output failed: {e}"))
}

/// Seed-averaged energies per topology and solver, plus the ordering checks.
#[derive(Clone, Debug, PartialEq)]
pub struct TopologySummary {
    pub seeds: Vec<u64>,
    /// (topology, solver, mean total_j, seeds that failed).
    pub means: Vec<(TopologyKind, SolverKind, f64, usize)>,
    /// Human-readable ordering findings; empty when everything holds.
    pub violations: Vec<String>,
}

impl TopologySummary {
    pub fn mean(&self, t: TopologyKind, s: SolverKind) -> Option<f64> {
        self.means.iter().find(|m| m.0 == t && m.1 == s).map(|m| m.2)
    }

    /// Plain-text table, one line per topology.
    pub fn table(&self) -> String {
        let mut out = format!("{:<10} {:>14} {:>14}\n", "topology", "optimal_j", "greedy_j");
        for t in TopologyKind::ALL {
            let cell = |s| self.mean(t, s).map_or("-".to_string(), |v| format!("{v:.6e}"));
            out.push_str(&format!("{:<10} {:>14} {:>14}\n", t.name(), cell(SolverKind::Optimal), cell(SolverKind::Greedy)));
        }
        if self.violations.is_empty() {
            out.push_str("ordering: ok\n");
        } else {
            for v in &self.violations {
                out.push_str(&format!("ordering: {v}\n"));
            }
        }
        out
    }
}

/// Mean energy per topology over `repetitions` paired seeds and the soft
/// ordering check full-mesh ≤ star-max ≤ ring ≤ star-min ≤ no-coop, plus
/// optimal ≤ greedy per topology. Means include only seeds where every
/// topology and solver succeeded, so the comparison stays paired.
pub fn compare_topologies(base: &GenSpec, repetitions: usize, cfg: &SolverConfig) -> Result<TopologySummary> {
    if repetitions < 5 {
        return Err(Error::InvalidConfig("compare needs at least 5 seeds".into()));
    }
    let spec = SweepSpec {
        base: base.clone(),
        param: SweepParam::Bandwidth,
        values: vec![base.bandwidth_hz],
        solvers: vec![SolverKind::Optimal, SolverKind::Greedy],
        topologies: TopologyKind::ALL.to_vec(),
        repetitions,
        wall_clock: false,
    };
    let rows = run_sweep(&spec, cfg)?;
    let seeds: Vec<u64> = spec.seeds().collect();
    let good: Vec<u64> =
        seeds.iter().copied().filter(|&s| rows.iter().filter(|r| r.seed == s).all(|r| !r.is_failure())).collect();
    let mut means = Vec::new();
    for t in TopologyKind::ALL {
        for s in [SolverKind::Optimal, SolverKind::Greedy] {
            let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.topology == t && r.solver == s).collect();
            let failed = sel.iter().filter(|r| r.is_failure()).count();
            let vals: Vec<f64> = sel.iter().filter(|r| good.contains(&r.seed)).filter_map(|r| r.total_j).collect();
            let mean = if vals.is_empty() { f64::NAN } else { vals.iter().sum::<f64>() / vals.len() as f64 };
            means.push((t, s, mean, failed));
        }
    }
    let mut summary = TopologySummary { seeds, means, violations: Vec::new() };
    let opt = |t| summary.mean(t, SolverKind::Optimal).unwrap_or(f64::NAN);
    let mut violations = Vec::new();
    for w in TopologyKind::ALL.windows(2) {
        if !(opt(w[0]) <= opt(w[1])) {
            violations.push(format!("{} mean {:.6e} above {} mean {:.6e}", w[0], opt(w[0]), w[1], opt(w[1])));
        }
    }
    for t in TopologyKind::ALL {
        let g = summary.mean(t, SolverKind::Greedy).unwrap_or(f64::NAN);
        if !(opt(t) <= g * (1.0 + 1e-3)) {
            violations.push(format!("{t}: optimal mean {:.6e} above greedy mean {g:.6e}", opt(t)));
        }
    }
    if good.len() < summary.seeds.len() {
        violations.push(format!("{} of {} seeds had a failed solve", summary.seeds.len() - good.len(), summary.seeds.len()));
    }
    summary.violations = violations;
    Ok(summary)
}
