//! `fracfb`: grid generation, value iteration, simulation and convergence
//! tables for the fractional feedback-control benchmarks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use chrono::{SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use fracfeedback::hjb::{kernel_for, Noise, ValueFunction};
use fracfeedback::pipeline::{self, Controller};
use fracfeedback::problems::{Problem, TestCase};
use fracfeedback::{io, Error};

#[derive(Parser)]
#[command(name = "fracfb", version, about = "Feedback control of fractional PDEs on scattered grids")]
struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the scattered grid from constant-control trajectories.
    Gridgen(Common),
    /// Select the shape parameter and solve the value iteration.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Grid CSV written by `gridgen` (its provenance.csv must sit next to it).
        #[arg(long)]
        grid: PathBuf,
        /// Use this single shape parameter instead of the configured scan.
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Simulate the closed loop (or the open-loop reference).
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output directory (or its values.csv) of `solve`.
        #[arg(long, required_unless_present = "open_loop")]
        values: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        noise_std: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Replay the manufactured optimal control instead of the feedback (test1).
        #[arg(long)]
        open_loop: bool,
        /// Simulation step (default: the configured dt_sim).
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Convergence table of the closed loop against the exact solution (test1).
    Table {
        #[command(flatten)]
        common: Common,
        /// Simulation steps, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.025, 0.0125])]
        dt: Vec<f64>,
        /// Reuse a `solve` output instead of generating the grid and solving.
        #[arg(long)]
        values: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config: {"name": "test1" | "test2" | "test3", ...overrides}.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// Written as `manifest.json` next to the outputs of every command.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    command: String,
    version: String,
    config: TestCase,
    seed: Option<u64>,
    noise_std: Option<f64>,
    started: String,
    finished: String,
    wall_time_s: f64,
    threads: usize,
    iterations: Vec<usize>,
    residuals: Vec<f64>,
    non_converged: bool,
    outputs: BTreeMap<String, PathBuf>,
    details: serde_json::Value,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Run(e) if e.is_blowup() => 3,
            Failure::Run(Error::LinearAlgebra(_)) => 1,
            _ => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Run(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_config(path: &Path) -> CliResult<TestCase> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    TestCase::from_json(&text).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
}

struct Run {
    command: &'static str,
    started: chrono::DateTime<Utc>,
    clock: Instant,
    out: PathBuf,
    outputs: BTreeMap<String, PathBuf>,
}

impl Run {
    fn start(command: &'static str, out: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(out).map_err(Error::from)?;
        Ok(Self {
            command,
            started: Utc::now(),
            clock: Instant::now(),
            out: out.to_path_buf(),
            outputs: BTreeMap::new(),
        })
    }

    /// Path of an output file, recorded in the manifest.
    fn output(&mut self, key: &str, file: &str) -> PathBuf {
        let path = self.out.join(file);
        self.outputs.insert(key.to_string(), path.clone());
        path
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        self,
        config: &TestCase,
        seed: Option<u64>,
        noise_std: Option<f64>,
        iterations: Vec<usize>,
        residuals: Vec<f64>,
        non_converged: bool,
        details: serde_json::Value,
    ) -> CliResult<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            seed,
            noise_std,
            started: self.started.to_rfc3339_opts(SecondsFormat::Millis, true),
            finished: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            wall_time_s: self.clock.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
            iterations,
            residuals,
            non_converged,
            outputs: self.outputs,
            details,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
        std::fs::write(self.out.join("manifest.json"), text).map_err(Error::from)?;
        Ok(())
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Gridgen(c) => gridgen(&c),
        Command::Solve { common, grid, theta } => solve(&common, &grid, theta),
        Command::Simulate { common, values, noise_std, seed, open_loop, dt } => {
            simulate(&common, values.as_deref(), noise_std, seed, open_loop, dt)
        }
        Command::Table { common, dt, values } => table(&common, &dt, values.as_deref()),
    }
}

fn gridgen(c: &Common) -> CliResult<()> {
    let case = load_config(&c.config)?;
    let mut run = Run::start("gridgen", &c.out)?;
    let problem = Problem::setup(&case)?;
    let grid = pipeline::build_grid(&problem)?;
    io::write_grid(&run.output("grid", "grid.csv"), &grid)?;
    io::write_provenance(&run.output("provenance", "provenance.csv"), &grid)?;
    eprintln!("{} nodes, separation distance {:e}", grid.len(), grid.separation());
    let details = serde_json::json!({ "nodes": grid.len(), "separation": grid.separation() });
    run.finish(&case, None, None, vec![], vec![], false, details)
}

fn provenance_path(grid: &Path) -> PathBuf {
    grid.with_file_name("provenance.csv")
}

fn solve(c: &Common, grid_path: &Path, theta: Option<f64>) -> CliResult<()> {
    let case = load_config(&c.config)?;
    if let Some(t) = theta {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure::Usage(format!("--theta must be positive, got {t}")));
        }
    }
    let mut run = Run::start("solve", &c.out)?;
    let problem = Problem::setup(&case)?;
    let prov = provenance_path(grid_path);
    let grid = Arc::new(io::read_grid(grid_path, &prov, case.dt_bar, 0.0)?);
    let thetas = theta.map_or_else(|| case.thetas(), |t| vec![t]);
    let scan = pipeline::solve(&problem, grid.clone(), &thetas)?;
    io::write_values(&run.output("values", "values.csv"), &scan.value.values)?;
    io::write_scan(&run.output("scan", "scan.csv"), &scan.rows)?;
    if !scan.converged() {
        eprintln!("warning: value iteration did not converge for any shape parameter");
    }
    eprintln!(
        "theta = {} (sigma = {:e}), {} iterations",
        scan.best_theta,
        scan.value.sigma(),
        scan.value.iterations
    );
    let details = serde_json::json!({
        "theta": scan.best_theta,
        "sigma": scan.value.sigma(),
        "separation": grid.separation(),
        "final_update": scan.value.final_update,
        "grid": absolute(grid_path),
        "provenance": absolute(&prov),
    });
    run.finish(
        &case,
        None,
        None,
        scan.rows.iter().map(|r| r.iterations).collect(),
        scan.rows.iter().map(|r| r.residual).collect(),
        !scan.converged(),
        details,
    )
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Value function stored by `solve` in `dir` (or next to `dir` if it is a file).
fn load_value_function(case: &TestCase, path: &Path) -> CliResult<ValueFunction> {
    let dir = if path.is_dir() { path.to_path_buf() } else { path.parent().unwrap_or(Path::new(".")).to_path_buf() };
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", manifest_path.display())))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(Error::from)?;
    let field = |k: &str| {
        manifest.details.get(k).cloned().ok_or_else(|| {
            Failure::Usage(format!("{} lacks details.{k}; is it a solve output?", manifest_path.display()))
        })
    };
    let sigma: f64 = serde_json::from_value(field("sigma")?).map_err(Error::from)?;
    let grid_path: PathBuf = serde_json::from_value(field("grid")?).map_err(Error::from)?;
    let prov_path: PathBuf = serde_json::from_value(field("provenance")?).map_err(Error::from)?;
    let grid = Arc::new(io::read_grid(&grid_path, &prov_path, case.dt_bar, 0.0)?);
    let values = io::read_values(&dir.join("values.csv"))?;
    if values.len() != grid.len() {
        return Err(Failure::Usage(format!("{} values for {} grid nodes", values.len(), grid.len())));
    }
    Ok(ValueFunction {
        kernel: kernel_for(&grid, sigma)?,
        grid,
        values,
        iterations: 0,
        final_update: f64::NAN,
        converged: !manifest.non_converged,
        updates: vec![],
    })
}

fn simulate(
    c: &Common,
    values: Option<&Path>,
    noise_std: f64,
    seed: u64,
    open_loop: bool,
    dt: Option<f64>,
) -> CliResult<()> {
    let case = load_config(&c.config)?;
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Failure::Usage(format!("--noise-std must be nonnegative, got {noise_std}")));
    }
    let dt = dt.unwrap_or(case.dt_sim);
    if !(dt > 0.0) {
        return Err(Failure::Usage(format!("--dt must be positive, got {dt}")));
    }
    let mut run = Run::start("simulate", &c.out)?;
    let problem = Problem::setup(&case)?;
    if open_loop && problem.analytic.is_none() {
        return Err(Failure::Usage("--open-loop needs a problem with a known optimal control (test1)".into()));
    }
    let vf = match values {
        Some(path) if !open_loop => Some(load_value_function(&case, path)?),
        _ => None,
    };
    let controller = match &vf {
        Some(v) => Controller::Feedback(v),
        None => Controller::OpenLoop,
    };
    let noise = Noise { std: noise_std, seed };
    let sim = pipeline::run(&problem, &controller, dt, &problem.x0, case.t_sim, noise)?;
    let states = pipeline::physical_states(&problem, &sim);
    io::write_trajectory(&run.output("trajectory", "trajectory.csv"), &sim.times, &states)?;
    io::write_controls(&run.output("control", "control.csv"), &sim)?;
    io::write_cost(&run.output("cost", "cost.csv"), &sim)?;
    let final_cost = *sim.cost.last().expect("cost path starts at 0");
    let final_norm = problem.system.mass_norm(states.last().expect("nonempty"));
    eprintln!("cost {final_cost:e}, final L2 norm {final_norm:e}");
    let details = serde_json::json!({
        "mode": if open_loop { "open_loop" } else { "feedback" },
        "dt": dt,
        "steps": sim.controls.len(),
        "final_cost": final_cost,
        "final_l2_norm": final_norm,
    });
    run.finish(&case, Some(seed), Some(noise_std), vec![], vec![], false, details)
}

fn table(c: &Common, dts: &[f64], values: Option<&Path>) -> CliResult<()> {
    let case = load_config(&c.config)?;
    if dts.is_empty() || dts.iter().any(|&d| !(d > 0.0)) {
        return Err(Failure::Usage("--dt needs positive step sizes".into()));
    }
    let problem = Problem::setup(&case)?;
    if problem.analytic.is_none() {
        return Err(Failure::Usage(format!(
            "{:?} has no analytic solution; the convergence table needs test1",
            case.name
        )));
    }
    let mut run = Run::start("table", &c.out)?;
    let (vf, iterations, residuals, theta) = match values {
        Some(path) => (load_value_function(&case, path)?, vec![], vec![], None),
        None => {
            let grid = Arc::new(pipeline::build_grid(&problem)?);
            io::write_grid(&run.output("grid", "grid.csv"), &grid)?;
            io::write_provenance(&run.output("provenance", "provenance.csv"), &grid)?;
            let scan = pipeline::solve(&problem, grid, &case.thetas())?;
            io::write_values(&run.output("values", "values.csv"), &scan.value.values)?;
            io::write_scan(&run.output("scan", "scan.csv"), &scan.rows)?;
            let it = scan.rows.iter().map(|r| r.iterations).collect();
            let res = scan.rows.iter().map(|r| r.residual).collect();
            (scan.value, it, res, Some(scan.best_theta))
        }
    };
    let rows = pipeline::convergence_table(&problem, &vf, dts)?;
    io::write_table(&run.output("table", "table.csv"), &rows)?;
    for r in &rows {
        eprintln!(
            "dt {:<8} {:.4e} {:.4e} {:.4e}",
            r.dt, r.hjb_vs_optimal, r.hjb_vs_replay, r.optimal_vs_replay
        );
    }
    let details = serde_json::json!({ "theta": theta, "sigma": vf.sigma(), "dt": dts });
    run.finish(&case, None, None, iterations, residuals, !vf.converged, details)
}
