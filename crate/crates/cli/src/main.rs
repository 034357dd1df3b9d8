//! `rotpump`: run rotational-cooling simulations from configuration files.
//!
//! Exit status is 0 on success, 2 when input is rejected and 3 when a
//! simulation aborts.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rotpump_core::analysis::{chain_estimate, lz_parameter, lz_prediction, populated_levels, scrap_margin, thermal_populations};
use rotpump_core::config::RunConfig;
use rotpump_core::sweep::{run_sweep, SweepPlan};
use rotpump_core::Error;
use serde_json::json;

const EXIT_INVALID: u8 = 2;
const EXIT_ABORTED: u8 = 3;

#[derive(Parser)]
#[command(name = "rotpump", version, about = "Rotational cooling of trapped molecular ions by adiabatic passage")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write trajectory.csv, summary.json and config.toml.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; falls back to `output` in the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the fully resolved configuration and exit.
        #[arg(long)]
        dump_config: bool,
    },
    /// Run a parameter grid and write sweep.csv and sweep.json.
    Sweep {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 uses every core.
        #[arg(long, env = "ROTPUMP_WORKERS", default_value_t = 0)]
        workers: usize,
    },
    /// Closed-form predictions.
    #[command(subcommand)]
    Oracle(Oracle),
    /// Population estimates.
    #[command(subcommand)]
    Estimate(Estimate),
}

#[derive(Subcommand)]
enum Oracle {
    /// Landau–Zener parameter and transferred population for one chirped passage.
    Lz {
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        omega0: f64,
        #[arg(long)]
        delta_p: f64,
        #[arg(long, allow_negative_numbers = true)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        p_init: f64,
    },
    /// Adiabaticity margin of delayed pulses.
    Scrap {
        #[arg(long)]
        omega0: f64,
        #[arg(long)]
        width: f64,
        #[arg(long, allow_negative_numbers = true)]
        tau: f64,
        #[arg(long, allow_negative_numbers = true)]
        delta_p: f64,
    },
}

#[derive(Subcommand)]
enum Estimate {
    /// Ground-state population after a ladder of passages.
    Chain {
        /// Efficiency of a single passage.
        #[arg(long)]
        epsilon: f64,
        #[command(flatten)]
        populations: Populations,
    },
    /// Rotational levels populated above a cutoff.
    Levels {
        #[arg(long)]
        kt_over_b: f64,
        #[arg(long)]
        p_cut: f64,
    },
}

#[derive(Args)]
#[group(required = true, multiple = true)]
struct Populations {
    /// Explicit initial populations, comma separated, starting at J = 0.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["j_max", "beta_b"])]
    populations: Option<Vec<f64>>,
    /// Thermal populations up to this level...
    #[arg(long, requires = "beta_b")]
    j_max: Option<u32>,
    /// ...at this B/kT.
    #[arg(long, requires = "j_max")]
    beta_b: Option<f64>,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_integration_failure() { EXIT_ABORTED } else { EXIT_INVALID };
        Failure { code, message: e.to_string() }
    }
}

fn io_failure(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure { code: EXIT_ABORTED, message: format!("cannot write {}: {e}", path.display()) }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_INVALID, message: message.into() }
}

fn output_dir(flag: Option<PathBuf>, fallback: Option<&PathBuf>) -> Result<PathBuf, Failure> {
    let dir = flag.or_else(|| fallback.cloned()).ok_or_else(|| invalid("no output directory: pass --out"))?;
    std::fs::create_dir_all(&dir).map_err(io_failure(&dir))?;
    Ok(dir)
}

fn simulate(config: &Path, out: Option<PathBuf>, dump: bool) -> Result<(), Failure> {
    let cfg = RunConfig::from_path(config).map_err(|e| invalid(format!("{}: {e}", config.display())))?;
    if dump {
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    let prepared = cfg.prepare()?;
    let dir = output_dir(out, cfg.output.as_ref())?;
    let result = prepared.run()?;

    let path = dir.join("config.toml");
    output::write_atomic(&path, |w| w.write_all(cfg.to_toml_string().as_bytes())).map_err(io_failure(&path))?;
    let path = dir.join("trajectory.csv");
    output::write_atomic(&path, |w| output::trajectory_csv(w, &prepared.basis, &result)).map_err(io_failure(&path))?;
    // Written last: its presence marks a complete run.
    let path = dir.join("summary.json");
    output::write_atomic(&path, |w| output::summary_json(w, &result)).map_err(io_failure(&path))?;

    if result.truncation_flag {
        eprintln!(
            "warning: population {:.2e} at the motional cutoff; increase n_max",
            result.edge_population
        );
    }
    println!("efficiency {:.6}  loss_u {:.6}  steps {}", result.efficiency, result.loss_u, result.step_count);
    Ok(())
}

fn sweep(plan: &Path, out: Option<PathBuf>, workers: usize) -> Result<(), Failure> {
    let plan_cfg = SweepPlan::from_path(plan).map_err(|e| invalid(format!("{}: {e}", plan.display())))?;
    let dir = output_dir(out, plan_cfg.output.as_ref())?;
    let rows = run_sweep(&plan_cfg, workers)?;

    let path = dir.join("sweep.csv");
    output::write_atomic(&path, |w| output::sweep_csv(w, &rows)).map_err(io_failure(&path))?;
    let path = dir.join("sweep.json");
    output::write_atomic(&path, |w| output::sweep_json(w, &rows)).map_err(io_failure(&path))?;

    let failed: Vec<_> = rows.iter().filter(|r| r.error.is_some()).collect();
    for row in &failed {
        eprintln!("point ({}, {:?}) failed: {}", row.axis1, row.axis2, row.error.as_deref().unwrap_or_default());
    }
    println!("{} points, {} failed", rows.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure { code: EXIT_ABORTED, message: format!("{} of {} points failed", failed.len(), rows.len()) })
    }
}

fn finite(name: &str, values: &[f64]) -> Result<(), Failure> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(invalid(format!("{name}: {v} is not finite"))),
        None => Ok(()),
    }
}

fn oracle(cmd: Oracle) -> Result<serde_json::Value, Failure> {
    Ok(match cmd {
        Oracle::Lz { eta, omega0, delta_p, alpha, p_init } => {
            finite("oracle lz", &[eta, omega0, delta_p, alpha, p_init])?;
            if !(0.0..=1.0).contains(&p_init) {
                return Err(invalid("--p-init must be a probability"));
            }
            json!({
                "lambda": lz_parameter(eta, omega0, delta_p, alpha)?,
                "prediction": lz_prediction(eta, omega0, delta_p, alpha, p_init)?,
            })
        }
        Oracle::Scrap { omega0, width, tau, delta_p } => {
            finite("oracle scrap", &[omega0, width, tau, delta_p])?;
            if width <= 0.0 {
                return Err(invalid("--width must be positive"));
            }
            if delta_p == 0.0 {
                return Err(invalid("--delta-p must be nonzero"));
            }
            let margin = scrap_margin(omega0, width, tau, delta_p);
            // JSON has no infinity; zero delay reports null.
            json!({ "margin": margin.is_finite().then_some(margin) })
        }
    })
}

fn estimate(cmd: Estimate) -> Result<serde_json::Value, Failure> {
    Ok(match cmd {
        Estimate::Chain { epsilon, populations } => {
            if !(0.0..=1.0).contains(&epsilon) {
                return Err(invalid("--epsilon must lie in [0, 1]"));
            }
            let pops = match populations {
                Populations { populations: Some(p), .. } => p,
                Populations { j_max: Some(j), beta_b: Some(b), .. } => {
                    finite("--beta-b", &[b])?;
                    if b <= 0.0 {
                        return Err(invalid("--beta-b must be positive"));
                    }
                    thermal_populations(j, b)
                }
                _ => return Err(invalid("give --populations or both --j-max and --beta-b")),
            };
            finite("--populations", &pops)?;
            if pops.iter().any(|&p| p < 0.0) {
                return Err(invalid("--populations must be non-negative"));
            }
            json!({ "total": chain_estimate(epsilon, &pops), "populations": pops })
        }
        Estimate::Levels { kt_over_b, p_cut } => json!({ "levels": populated_levels(kt_over_b, p_cut)? }),
    })
}

fn print_json(value: Result<serde_json::Value, Failure>) -> Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(&value?).expect("JSON values serialise"));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate { config, out, dump_config } => simulate(&config, out, dump_config),
        Command::Sweep { plan, out, workers } => sweep(&plan, out, workers),
        Command::Oracle(cmd) => print_json(oracle(cmd)),
        Command::Estimate(cmd) => print_json(estimate(cmd)),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
