use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use irs_core::harness::{self, recipes, ScenarioConfig};
use irs_core::phasemodel::sample_circuit_curve;
use irs_core::Error;

#[derive(Parser)]
#[command(
    name = "irs-sim",
    version,
    about = "IRS beamforming simulations under a practical phase shift model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed for channel draws.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo trials per sweep value.
    #[arg(long)]
    trials: Option<usize>,
    /// Results CSV path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-iteration convergence CSV path.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Append a wall-clock column to the results CSV.
    #[arg(long)]
    timing: bool,
    /// Write the effective config as JSON and exit.
    #[arg(long)]
    dump_config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Power loss (dB) of the ideal assumption over beta_min x alpha.
    Table1 {
        #[arg(long, value_delimiter = ',', default_values_t = harness::TABLE1_BETA_MIN)]
        beta_min: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = harness::TABLE1_ALPHA)]
        alpha: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Power versus number of IRS elements.
    SweepN {
        #[arg(long, value_delimiter = ',', default_values_t = recipes::SWEEP_N_VALUES)]
        values: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Power versus AP-user distance.
    SweepDistance {
        #[arg(long, value_delimiter = ',', default_values_t = recipes::SWEEP_DISTANCE_VALUES)]
        values: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Discrete phase designs with and without the amplitude model.
    Discrete {
        #[arg(long, value_delimiter = ',', default_values_t = recipes::DISCRETE_BITS)]
        bits: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_values_t = recipes::SWEEP_DISTANCE_VALUES)]
        values: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Histogram of optimized phases under ideal and practical models.
    PhaseHist {
        #[arg(long, default_value_t = 8)]
        bins: usize,
        #[arg(long)]
        beta_min: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Multiuser power versus SINR target (dB).
    SweepSinr {
        #[arg(long, value_delimiter = ',', default_values_t = recipes::SWEEP_SINR_VALUES)]
        values: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Multiuser power versus number of users.
    SweepUsers {
        #[arg(long, value_delimiter = ',', default_values_t = recipes::SWEEP_USERS_VALUES)]
        values: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Mean received-power loss of ideal-designed phases on practical hardware (M = 1).
    Asymptotic {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long)]
        beta_min: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a scenario described by a JSON config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Amplitude and phase of the equivalent circuit over a capacitance sweep.
    CircuitCurve {
        /// Effective resistances in ohms.
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 1.5, 2.0])]
        r: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Error> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn apply_common(mut cfg: ScenarioConfig, common: &Common) -> ScenarioConfig {
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.trials {
        cfg.trials = t;
    }
    cfg
}

fn run_config(cfg: ScenarioConfig, common: &Common) -> Result<(), Error> {
    let cfg = apply_common(cfg, common);
    if let Some(p) = &common.dump_config {
        return write_output(Some(p), &cfg.to_json());
    }
    let rows = harness::run_scenario(&cfg)?;
    write_output(common.out.as_deref(), &harness::results_csv(&rows, common.timing))?;
    if let Some(p) = &common.trace {
        write_output(Some(p), &harness::trace_csv(&rows))?;
    }
    eprint!("{}", harness::summary_csv(&harness::summarize(&rows)));
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Table1 { beta_min, alpha, out } => {
            let t = harness::table1(&beta_min, &alpha)?;
            write_output(out.as_deref(), &harness::table1_csv(&beta_min, &alpha, &t))
        }
        Command::SweepN { values, common } => run_config(recipes::sweep_n(&values), &common),
        Command::SweepDistance { values, common } => run_config(recipes::sweep_distance(&values), &common),
        Command::Discrete { bits, values, common } => run_config(recipes::discrete(&bits, &values), &common),
        Command::SweepSinr { values, common } => run_config(recipes::sweep_sinr(&values), &common),
        Command::SweepUsers { values, common } => run_config(recipes::sweep_users(&values), &common),
        Command::Run { config, common } => {
            let text = fs::read_to_string(&config).map_err(|e| Error::Io(format!("{}: {e}", config.display())))?;
            run_config(ScenarioConfig::from_json(&text)?, &common)
        }
        Command::PhaseHist { bins, beta_min, common } => {
            let mut cfg = apply_common(recipes::phase_hist(), &common);
            if let Some(b) = beta_min {
                cfg.model = cfg.model.with_beta_min(b)?;
            }
            cfg.validate()?;
            let h = harness::phase_histogram(&cfg, bins)?;
            write_output(common.out.as_deref(), &h.to_csv())
        }
        Command::Asymptotic { n, beta_min, common } => {
            let mut cfg = apply_common(recipes::asymptotic(n), &common);
            if let Some(b) = beta_min {
                cfg.model = cfg.model.with_beta_min(b)?;
            }
            cfg.validate()?;
            let db = harness::asymptotic_check(&cfg)?;
            let text = format!(
                "n,trials,beta_min,alpha,mean_ratio_db\n{},{},{},{},{:.8e}\n",
                n,
                cfg.trials,
                cfg.model.beta_min(),
                cfg.model.alpha(),
                db
            );
            write_output(common.out.as_deref(), &text)
        }
        Command::CircuitCurve { r, points, out } => {
            if points < 2 {
                return Err(Error::InvalidParameter("need at least 2 points".into()));
            }
            let (c_lo, c_hi) = (0.47e-12, 2.35e-12);
            let grid: Vec<f64> = (0..points)
                .map(|i| c_lo + (c_hi - c_lo) * i as f64 / (points - 1) as f64)
                .collect();
            let omega = 2.0 * std::f64::consts::PI * 2.4e9;
            let mut text = String::from("r_ohm,c_farad,phase,amplitude\n");
            for &res in &r {
                for p in sample_circuit_curve(2.5e-9, 0.7e-9, 377.0, omega, res, &grid)? {
                    text.push_str(&format!("{res:.8e},{:.8e},{:.8e},{:.8e}\n", p.c, p.phase, p.amplitude));
                }
            }
            write_output(out.as_deref(), &text)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
