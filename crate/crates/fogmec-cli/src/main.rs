use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fogmec::{scenario, Error, GenSpec, Scenario, SolverConfig, TopologyKind};
use fogmec_cli::{
    compare_topologies, run_convergence, run_sweep, write_convergence_csv, write_sweep_csv, SolverKind, SweepParam,
    SweepSpec,
};

#[derive(Parser)]
#[command(name = "fogmec", version, about = "Energy-optimal offloading for cooperative multi-fog MEC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated scenario as JSON.
    Generate {
        #[command(flatten)]
        gen: GenArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Solve a scenario and write the solution JSON.
    Solve {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value = "optimal")]
        solver: SolverKind,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write the per-iteration energy trace of the optimal solver as CSV.
    Converge {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Sweep one generator parameter and write one CSV row per run.
    Sweep {
        #[command(flatten)]
        gen: GenArgs,
        /// bandwidth, deadline, data-size, mus-per-cell or backhaul-rate.
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "optimal")]
        solvers: Vec<SolverKind>,
        #[arg(long, value_delimiter = ',', default_value = "full-mesh")]
        topologies: Vec<TopologyKind>,
        /// Seeds used: seed, seed+1, …
        #[arg(long, default_value_t = 1)]
        repetitions: usize,
        /// Record real timings in wall_ms (makes the file non-reproducible).
        #[arg(long)]
        wall_clock: bool,
        /// Worker threads; 0 lets the pool decide.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print seed-averaged energy per topology and the ordering checks.
    Compare {
        #[command(flatten)]
        gen: GenArgs,
        #[arg(long, default_value_t = 20)]
        repetitions: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// Generator flags; unset fields keep the defaults or the values from --spec.
#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    seed: u64,
    /// GenSpec JSON used as the base before individual flags.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    n_cells: Option<usize>,
    #[arg(long)]
    mus_per_cell: Option<usize>,
    #[arg(long)]
    bs_spacing_m: Option<f64>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    mu_radius_m: Option<Vec<f64>>,
    #[arg(long)]
    carrier_ghz: Option<f64>,
    #[arg(long)]
    bandwidth_hz: Option<f64>,
    #[arg(long)]
    noise_w: Option<f64>,
    #[arg(long)]
    data_bits: Option<f64>,
    #[arg(long)]
    deadline_s: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    cycles_per_bit: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    mu_cpu_hz: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    fog_cpu_hz: Option<Vec<f64>>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    backhaul_bps: Option<f64>,
    #[arg(long)]
    topology: Option<TopologyKind>,
}

impl GenArgs {
    fn spec(&self) -> Result<GenSpec, Failure> {
        let mut g = match &self.spec {
            Some(p) => serde_json::from_str(&read(p)?).map_err(|e| Failure::Invalid(format!("{}: {e}", p.display())))?,
            None => GenSpec::default(),
        };
        g.seed = self.seed;
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f.clone() { g.$f = v; })* };
        }
        set!(n_cells, mus_per_cell, bs_spacing_m, carrier_ghz, bandwidth_hz, noise_w, data_bits, deadline_s, alpha);
        set!(mu_cpu_hz, fog_cpu_hz, beta, backhaul_bps, topology);
        if let Some(v) = &self.mu_radius_m {
            g.mu_radius_m = [v[0], v[1]];
        }
        if let Some(v) = &self.cycles_per_bit {
            g.cycles_per_bit = [v[0], v[1]];
        }
        g.validate()?;
        Ok(g)
    }
}

/// A scenario file, or generator flags.
#[derive(Args)]
struct InputArgs {
    /// Scenario JSON; when absent the scenario is generated from --seed.
    #[arg(long, conflicts_with = "seed")]
    scenario: Option<PathBuf>,
    #[arg(long, required_unless_present = "scenario")]
    seed: Option<u64>,
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    topology: Option<TopologyKind>,
}

impl InputArgs {
    fn load(&self) -> Result<Scenario, Failure> {
        if let Some(p) = &self.scenario {
            return Ok(Scenario::from_json(&read(p)?)?);
        }
        let mut g: GenSpec = match &self.spec {
            Some(p) => serde_json::from_str(&read(p)?).map_err(|e| Failure::Invalid(format!("{}: {e}", p.display())))?,
            None => GenSpec::default(),
        };
        g.seed = self.seed.expect("clap enforces --seed without --scenario");
        if let Some(t) = self.topology {
            g.topology = t;
        }
        Ok(scenario::generate(&g)?)
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// SolverConfig JSON.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<SolverConfig, Failure> {
        let cfg: SolverConfig = match &self.config {
            Some(p) => serde_json::from_str(&read(p)?).map_err(|e| Failure::Invalid(format!("{}: {e}", p.display())))?,
            None => SolverConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

enum Failure {
    Invalid(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_invalid_input() {
            Failure::Invalid(e.to_string())
        } else {
            Failure::Solver(e.to_string())
        }
    }
}

fn read(p: &Path) -> Result<String, Failure> {
    fs::read_to_string(p).map_err(|e| Failure::Invalid(format!("{}: {e}", p.display())))
}

fn emit(output: &Option<PathBuf>, bytes: &[u8]) -> Result<(), Failure> {
    let res = match output {
        Some(p) => fs::write(p, bytes),
        None => io::stdout().lock().write_all(bytes),
    };
    res.map_err(|e| Failure::Solver(format!("write failed: {e}")))
}

fn with_newline(mut s: String) -> Vec<u8> {
    s.push('\n');
    s.into_bytes()
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { gen, output } => {
            let sc = scenario::generate(&gen.spec()?)?;
            emit(&output, &with_newline(sc.to_json()))
        }
        Command::Solve { input, solver, cfg, output } => {
            let sc = input.load()?;
            let sol = solver.run(&sc, &cfg.load()?)?;
            emit(&output, &with_newline(sol.to_json(&sc, solver == SolverKind::Greedy)))
        }
        Command::Converge { input, cfg, output } => {
            let sc = input.load()?;
            let (_, rows) = run_convergence(&sc, &cfg.load()?)?;
            let mut buf = Vec::new();
            write_convergence_csv(&rows, &mut buf)?;
            emit(&output, &buf)
        }
        Command::Sweep { gen, param, values, solvers, topologies, repetitions, wall_clock, threads, cfg, output } => {
            let spec = SweepSpec { base: gen.spec()?, param, values, solvers, topologies, repetitions, wall_clock };
            let cfg = cfg.load()?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Failure::Solver(format!("thread pool: {e}")))?;
            let rows = pool.install(|| run_sweep(&spec, &cfg))?;
            let mut buf = Vec::new();
            write_sweep_csv(&rows, &mut buf)?;
            emit(&output, &buf)?;
            let failed = rows.iter().filter(|r| r.is_failure()).count();
            if failed > 0 {
                return Err(Failure::Solver(format!("{failed} of {} runs failed", rows.len())));
            }
            Ok(())
        }
        Command::Compare { gen, repetitions, cfg } => {
            let summary = compare_topologies(&gen.spec()?, repetitions, &cfg.load()?)?;
            emit(&None, summary.table().as_bytes())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
