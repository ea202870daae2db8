use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use selkov_core::integrator::TimeGrid;
use selkov_core::measure::{
    compute_absorbing_radius, dual_lipschitz_by_transport, dual_lipschitz_distance, subsampled_distance, DistanceMethod,
    LP_ATOM_BUDGET,
};
use selkov_lab::config::{ConfigError, RunConfig, MAX_SEED};
use selkov_lab::experiments::{self, ExperimentOutput};
use selkov_lab::output::{self, Meta, SeriesRow};
use selkov_lab::runner::{pullback, run_ensemble};

const SECTION7_CONFIG: &str = include_str!("../configs/section7.cfg");

#[derive(Parser)]
#[command(name = "selkov", version, about = "Stochastic reversible Selkov lattice simulator and experiment runner")]
struct Cli {
    /// Output root (overrides the config `output` key and SELKOV_OUTPUT_ROOT).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forward ensemble run over the configured grid.
    Simulate { config: PathBuf },
    /// Empirical law at `tau` of the ensemble started at `tau - horizon`.
    Pullback {
        config: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        tau: f64,
        #[arg(long)]
        horizon: f64,
    },
    /// Bounded-Lipschitz distance between two saved measures.
    Distance {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Auto)]
        method: Method,
        /// Atoms per side for subsampled estimates.
        #[arg(long, default_value_t = 100)]
        per_measure: usize,
        #[arg(long, default_value_t = 20)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Dissipativity rate, forcing integral and coefficient growth report.
    CheckDissipativity {
        config: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        tau: f64,
    },
    /// Run the bundled single-site demonstration.
    DemoSection7 {
        #[arg(long, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
        seed: Option<u64>,
    },
    /// Run the `[experiment]` section of a config.
    Experiment { config: PathBuf },
    /// Parse and validate a config, listing every violation.
    ValidateConfig { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    /// Exact LP when both measures fit the atom budget, else subsampled LP.
    Auto,
    Lp,
    Transport,
    Subsampled,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Experiment(#[from] experiments::ExperimentError),
    #[error(transparent)]
    Ensemble(#[from] selkov_core::integrator::EnsembleError),
    #[error(transparent)]
    Measure(#[from] selkov_core::MeasureError),
    #[error(transparent)]
    Read(#[from] output::ReadError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8, CliError> {
    let flag = cli.output.as_deref();
    match &cli.command {
        Command::Simulate { config } => simulate(&RunConfig::from_file(config)?, flag),
        Command::Pullback { config, tau, horizon } => pullback_cmd(&RunConfig::from_file(config)?, *tau, *horizon, flag),
        Command::Distance { a, b, method, per_measure, replicates, seed } => {
            distance(a, b, *method, *per_measure, *replicates, *seed)
        }
        Command::CheckDissipativity { config, tau } => check_dissipativity(&RunConfig::from_file(config)?, *tau),
        Command::DemoSection7 { seed } => {
            let mut cfg = RunConfig::parse(SECTION7_CONFIG)?;
            if let Some(s) = seed {
                cfg.seed = *s;
            }
            experiment(&cfg, flag, "demo-section7")
        }
        Command::Experiment { config } => experiment(&RunConfig::from_file(config)?, flag, "experiment"),
        Command::ValidateConfig { config } => match RunConfig::from_file(config) {
            Ok(cfg) => {
                println!("ok: run id {}", cfg.run_id());
                Ok(0)
            }
            Err(ConfigError::Invalid(v)) => {
                for x in &v {
                    println!("{x}");
                }
                Ok(1)
            }
            Err(e) => Err(e.into()),
        },
    }
}

fn write_all(dir: &Path, files: &[(String, Vec<u8>)], meta: &Meta) -> Result<(), CliError> {
    for (name, bytes) in files {
        output::write_file(dir, name, bytes)?;
    }
    output::write_file(dir, "meta.json", &output::json_bytes(meta))?;
    Ok(())
}

fn experiment(cfg: &RunConfig, flag: Option<&Path>, command: &str) -> Result<u8, CliError> {
    let start = Instant::now();
    let out: ExperimentOutput = experiments::run(cfg)?;
    let root = output::output_root(flag, cfg.output.as_deref());
    let dir = output::run_dir(&root, &cfg.run_id(), out.id);
    let meta = Meta::new(command, cfg.content_hash(), cfg.seed, start.elapsed().as_secs_f64());
    write_all(&dir, &out.result_files(cfg), &meta)?;
    for c in &out.checks {
        println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    println!("{}: {:?} ({})", out.id, out.verdict, dir.display());
    Ok(out.verdict.exit_code() as u8)
}

fn simulate(cfg: &RunConfig, flag: Option<&Path>) -> Result<u8, CliError> {
    let start = Instant::now();
    let system = cfg.system();
    system.validate().map_err(selkov_core::integrator::EnsembleError::from)?;
    let grid = cfg.grid.time_grid().map_err(selkov_core::integrator::EnsembleError::from)?;
    let steps = grid.every(cfg.grid.save_every);
    let out = run_ensemble(&system, &cfg.ensemble_config(), &grid, &steps)?;
    let rows: Vec<SeriesRow> = out
        .measures
        .iter()
        .map(|m| SeriesRow::point(m.origin.tau, m.second_moment(), "second_moment"))
        .collect();
    let last = out.measures.last().expect("grid saves its last step");
    let result = json!({
        "command": "simulate",
        "members": out.members,
        "blown_up": out.blown_up,
        "t_end": grid.t_end(),
        "final_second_moment": last.second_moment(),
        "seed": cfg.seed,
        "config_hash": cfg.content_hash(),
    });
    let files = vec![
        ("result.json".to_string(), output::json_bytes(&result)),
        ("series.csv".to_string(), output::series_csv(&rows)),
        ("measure.csv".to_string(), output::measure_csv(last, &cfg.truncation)),
    ];
    let dir = output::run_dir(&output::output_root(flag, cfg.output.as_deref()), &cfg.run_id(), "simulate");
    write_all(&dir, &files, &Meta::new("simulate", cfg.content_hash(), cfg.seed, start.elapsed().as_secs_f64()))?;
    println!("{}", dir.display());
    Ok(0)
}

fn pullback_cmd(cfg: &RunConfig, tau: f64, horizon: f64, flag: Option<&Path>) -> Result<u8, CliError> {
    let start = Instant::now();
    let system = cfg.system();
    system.validate().map_err(selkov_core::integrator::EnsembleError::from)?;
    let out = pullback(&system, &cfg.ensemble_config(), tau, horizon, cfg.grid.dt)?;
    let mu = &out.measures[0];
    let result = json!({
        "command": "pullback",
        "tau": tau,
        "horizon": horizon,
        "members": out.members,
        "blown_up": out.blown_up,
        "second_moment": mu.second_moment(),
        "seed": cfg.seed,
        "config_hash": cfg.content_hash(),
    });
    let files = vec![
        ("result.json".to_string(), output::json_bytes(&result)),
        ("measure.csv".to_string(), output::measure_csv(mu, &cfg.truncation)),
    ];
    let name = format!("pullback_tau{}_h{}", output::fmt_f64(tau), output::fmt_f64(horizon));
    let dir = output::run_dir(&output::output_root(flag, cfg.output.as_deref()), &cfg.run_id(), &name);
    write_all(&dir, &files, &Meta::new("pullback", cfg.content_hash(), cfg.seed, start.elapsed().as_secs_f64()))?;
    println!("{}", dir.join("measure.csv").display());
    Ok(0)
}

fn distance(a: &Path, b: &Path, method: Method, k: usize, replicates: usize, seed: u64) -> Result<u8, CliError> {
    let (mu, ha) = output::read_measure(a)?;
    let (nu, hb) = output::read_measure(b)?;
    if ha != hb {
        return Err(CliError::Other(format!("lattice windows differ: half widths {ha} and {hb}")));
    }
    let fits = mu.len() + nu.len() <= LP_ATOM_BUDGET;
    let report = match method {
        Method::Lp => json!({"method": "lp", "value": dual_lipschitz_distance(&mu, &nu, DistanceMethod::LpOracle)?.value}),
        Method::Auto if fits => {
            json!({"method": "lp", "value": dual_lipschitz_distance(&mu, &nu, DistanceMethod::LpOracle)?.value})
        }
        Method::Transport => json!({"method": "transport", "value": dual_lipschitz_by_transport(&mu, &nu)?}),
        Method::Auto | Method::Subsampled => {
            let est = subsampled_distance(&mu, &nu, k, replicates, seed)?;
            json!({
                "method": "subsampled_lp",
                "value": est.mean,
                "sd": est.sd,
                "ci": [est.ci_lo, est.ci_hi],
                "per_measure": k,
                "replicates": replicates,
            })
        }
    };
    print!("{}", String::from_utf8_lossy(&output::json_bytes(&report)));
    Ok(0)
}

fn check_dissipativity(cfg: &RunConfig, tau: f64) -> Result<u8, CliError> {
    let grid: TimeGrid = cfg.grid.time_grid().map_err(selkov_core::integrator::EnsembleError::from)?;
    let times: Vec<f64> = grid.every(cfg.grid.save_every).iter().map(|&s| grid.time(s)).collect();
    let report = compute_absorbing_radius(tau, &cfg.model, &cfg.forcing, &cfg.truncation, &times, 1e-3, 1.0);
    let doc = match report {
        Ok(r) => json!({"tau": tau, "varpi": r.varpi, "r_tau": r.r_tau, "hypothesis_holds": true}),
        Err(e) => json!({"tau": tau, "hypothesis_holds": false, "reason": e.to_string()}),
    };
    print!("{}", String::from_utf8_lossy(&output::json_bytes(&doc)));
    Ok(if doc["hypothesis_holds"] == json!(true) { 0 } else { 2 })
}
