use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use aipw_lab::bounds::{self, BoundSelection, BoundsConfig};
use aipw_lab::harness::{self, RunOptions, ScenarioConfig};
use aipw_lab::table::Table;

#[derive(Parser)]
#[command(name = "aipw-lab", version, about = "AIPW coverage simulations and bound calculators")]
struct Cli {
    /// Worker threads (default: logical cores). Output does not depend on it.
    #[arg(long, global = true, env = "AIPW_LAB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides base_seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo ground truth: truth.csv
    Truth(Common),
    /// Repeated estimation: estimates.csv and coverage.csv
    Simulate(Common),
    /// Oracle variances and QQ data: variance.csv and qq.csv
    Oracle(Common),
    /// Cross-fit variance-bias identity: identity.csv
    IdentityCheck(Common),
    /// Bound calculators: bounds.csv
    Bounds {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// K-rate grid: krate.csv
    Krate {
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<aipw_lab::Error> for Failure {
    fn from(e: aipw_lab::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn scenario(c: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg: ScenarioConfig = read_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.base_seed = s;
    }
    cfg.validate().map_err(|e| Failure::Config(format!("{}: {e}", c.config.display())))?;
    Ok(cfg)
}

fn write(table: &Table, dir: &Path, name: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    table.write_csv(&path)?;
    eprintln!("wrote {} ({} rows)", path.display(), table.len());
    Ok(())
}

fn progress(done: usize, total: usize) {
    eprintln!("runs {done}/{total}");
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Truth(c) => {
            let cfg = scenario(&c)?;
            let truth = cfg.truth()?;
            write(&truth.to_table(&cfg.scenario_id), &c.out, "truth.csv")
        }
        Command::Simulate(c) => {
            let cfg = scenario(&c)?;
            let res = harness::run_scenario(&cfg, &RunOptions { oracle: false, progress: Some(&progress) })?;
            write(&res.estimates_table(&cfg), &c.out, "estimates.csv")?;
            write(&res.coverage_table(), &c.out, "coverage.csv")
        }
        Command::Oracle(c) => {
            let cfg = scenario(&c)?;
            let res = harness::run_scenario(&cfg, &RunOptions { oracle: true, progress: Some(&progress) })?;
            write(&res.variance_table(), &c.out, "variance.csv")?;
            write(&res.qq_table()?, &c.out, "qq.csv")
        }
        Command::IdentityCheck(c) => {
            let cfg = scenario(&c)?;
            let rep = harness::variance_bias_identity_check(&cfg)?;
            write(&rep.to_table(), &c.out, "identity.csv")
        }
        Command::Bounds { config, out } => {
            let cfg: BoundsConfig = read_config(&config)?;
            for (i, inp) in cfg.inputs.iter().enumerate() {
                inp.validate().map_err(|e| Failure::Config(format!("{}: inputs[{i}]: {e}", config.display())))?;
            }
            if cfg.bounds == BoundSelection::Both {
                eprintln!("warning: bounds hold up to an unspecified constant; cross-fit and non-cross-fit totals are not comparable");
            }
            let reports = bounds::evaluate_config(&cfg)?;
            for (i, r) in reports.iter().enumerate() {
                for note in &r.notes {
                    eprintln!("row {i} ({}): {note}", r.bound);
                }
            }
            write(&bounds::bounds_table(&reports), &out, "bounds.csv")
        }
        Command::Krate { out } => write(&bounds::krate_table()?, &out, "krate.csv"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
