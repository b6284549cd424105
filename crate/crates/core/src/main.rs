//! `darkspace` command-line runner.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use darkspace::acceptance::Fixture;
use darkspace::config::{Experiment, GammaT, RunConfig};
use darkspace::runner::{self, ExitStatus};
use darkspace::{Error, Result};

#[derive(Parser)]
#[command(name = "darkspace", version, about = "Dark-space adiabatic Lindblad experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact one-period purity trajectory of the spin-3/2 loop.
    #[command(name = "spin32-purity")]
    Spin32Purity(ExperimentArgs),
    /// Purity loss and effective-equation error over a list of periods.
    Sweep(ExperimentArgs),
    /// Effective jump covariance and purity invariance under a dark-space gauge.
    #[command(name = "gauge-check")]
    GaugeCheck(ExperimentArgs),
    /// Effective dark-space evolution against the exact rotating-frame state.
    #[command(name = "effective-vs-full")]
    EffectiveVsFull(ExperimentArgs),
    /// Purity trajectory of a protocol defined in a config file.
    Custom(ExperimentArgs),
    /// Run whatever experiment a config file names.
    Run(ExperimentArgs),
    /// Run the acceptance battery.
    Check(CheckArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Period(s) γT, comma separated for sweeps.
    #[arg(long = "gammaT", value_delimiter = ',')]
    gamma_t: Vec<f64>,
    /// Initial dark Bloch vector `x,y,z`.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    n0: Option<Vec<f64>>,
    /// Output directory (overrides the environment and the config).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
    #[arg(long)]
    kernel_tol: Option<f64>,
    #[arg(long)]
    checkpoints: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write a gnuplot script next to the CSV.
    #[arg(long)]
    gnuplot: bool,
}

#[derive(Args)]
struct CheckArgs {
    /// Print machine-readable JSON instead of a table.
    #[arg(long)]
    json: bool,
    /// Only these criteria, comma separated.
    #[arg(long, value_delimiter = ',')]
    only: Vec<u8>,
    /// TOML fixture with the battery's numerical settings.
    #[arg(long)]
    fixture: Option<PathBuf>,
}

fn build_config(experiment: Option<Experiment>, args: &ExperimentArgs) -> Result<RunConfig> {
    let mut cfg = match (&args.config, experiment) {
        (Some(path), fixed) => {
            let mut c = RunConfig::load(path)?;
            if let Some(e) = fixed {
                c.experiment = e;
            }
            c
        }
        (None, Some(e)) => RunConfig::for_experiment(e),
        (None, None) => return Err(Error::Config("--config is required".into())),
    };
    if experiment == Some(Experiment::Custom) && args.config.is_none() {
        return Err(Error::Config("custom needs --config with a protocol section".into()));
    }
    match args.gamma_t.as_slice() {
        [] => {}
        [g] if !matches!(cfg.experiment, Experiment::Sweep | Experiment::GaugeCheck) => cfg.gamma_t = GammaT::One(*g),
        many => cfg.gamma_t = GammaT::Many(many.to_vec()),
    }
    if let Some(n) = &args.n0 {
        let n: [f64; 3] = n.as_slice().try_into().map_err(|_| Error::Config("--n0 takes three components".into()))?;
        cfg.initial.bloch = Some(n);
        cfg.initial.density = None;
    }
    let t = &mut cfg.tolerances;
    t.rtol = args.rtol.unwrap_or(t.rtol);
    t.atol = args.atol.unwrap_or(t.atol);
    t.kernel_tol = args.kernel_tol.unwrap_or(t.kernel_tol);
    cfg.checkpoints = args.checkpoints.unwrap_or(cfg.checkpoints);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.output.gnuplot |= args.gnuplot;
    Ok(cfg)
}

fn run_experiment(experiment: Option<Experiment>, args: &ExperimentArgs) -> ExitStatus {
    let cfg = match build_config(experiment, args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitStatus::Validation;
        }
    };
    match cfg.validate() {
        Ok(warnings) => warnings.iter().for_each(|w| eprintln!("warning: {w}")),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitStatus::Validation;
        }
    }
    let out_dir = cfg.resolve_out_dir(args.out_dir.as_deref());
    match runner::run(&cfg, &out_dir) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            for p in &outcome.artifacts {
                println!("wrote {}", p.display());
            }
            if !outcome.pass {
                println!("note: one or more pass flags are false (see the JSON report)");
            }
            ExitStatus::Success
        }
        Err(e) => {
            eprintln!("error: {e}");
            let status = ExitStatus::of(&e);
            if status == ExitStatus::Numerical {
                match runner::write_failure(&cfg, &out_dir, &e) {
                    Ok(p) => eprintln!("diagnostics written to {}", p.display()),
                    Err(w) => eprintln!("could not write diagnostics: {w}"),
                }
            }
            status
        }
    }
}

fn load_fixture(path: Option<&Path>) -> Result<Fixture> {
    match path {
        None => Ok(Fixture::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
        }
    }
}

fn run_check(args: &CheckArgs) -> ExitStatus {
    let report = load_fixture(args.fixture.as_deref()).and_then(|fx| runner::check(&fx, &args.only));
    match report {
        Ok(r) => {
            if args.json {
                println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
            } else {
                print!("{}", r.to_text());
            }
            if r.pass {
                ExitStatus::Success
            } else {
                ExitStatus::CheckFailed
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitStatus::of(&e)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(ExitStatus::Validation as u8) } else { ExitCode::SUCCESS };
        }
    };
    let status = match &cli.command {
        Command::Spin32Purity(a) => run_experiment(Some(Experiment::Spin32Purity), a),
        Command::Sweep(a) => run_experiment(Some(Experiment::Sweep), a),
        Command::GaugeCheck(a) => run_experiment(Some(Experiment::GaugeCheck), a),
        Command::EffectiveVsFull(a) => run_experiment(Some(Experiment::EffectiveVsFull), a),
        Command::Custom(a) => run_experiment(Some(Experiment::Custom), a),
        Command::Run(a) => run_experiment(None, a),
        Command::Check(a) => run_check(a),
    };
    ExitCode::from(status as u8)
}
