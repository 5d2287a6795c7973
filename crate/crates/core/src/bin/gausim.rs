use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use gausim::cli::{self, RunOptions, TrajectoryLayout};
use gausim::scenarios::Scenario;
use gausim::Error;

#[derive(Parser)]
#[command(name = "gausim", version, about = "Gaussian continuous-variable simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a config file and write CSV time series plus a
    /// manifest.
    Run(RunArgs),
    /// Summarize a result CSV: final values, var_p_at minimum, slope fits.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file.
    #[arg(long, short = 'c')]
    config: PathBuf,
    /// Override the scenario named in the config.
    #[arg(long)]
    scenario: Option<String>,
    /// Override the random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $GAUSIM_OUT_DIR, else the working
    /// directory).
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
    /// Override the number of trajectories.
    #[arg(long)]
    trajectories: Option<usize>,
    /// Override the recording cadence (steps).
    #[arg(long)]
    record_every: Option<usize>,
    /// Disable the decay/noise channel.
    #[arg(long)]
    no_decay: bool,
    /// Also write the closed-form noiseless curves at the recorded times.
    #[arg(long)]
    analytic: bool,
    /// Write one CSV per trajectory instead of one CSV with per-trajectory
    /// columns.
    #[arg(long)]
    per_trajectory_files: bool,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Result CSV to summarize.
    csv: PathBuf,
    /// Series to fit the log-log slope on (default: var_B, else var_p_at).
    #[arg(long)]
    slope_series: Option<String>,
    /// Slope-fit window as "t0:t1" in seconds.
    #[arg(long)]
    slope_window: Option<String>,
}

fn out_dir(arg: Option<PathBuf>) -> PathBuf {
    arg.or_else(|| std::env::var_os(cli::OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn run_command(args: RunArgs) -> Result<(), Error> {
    let mut cfg = cli::parse_config(&args.config)?;
    if let Some(name) = &args.scenario {
        cfg.scenario = Scenario::from_str(name)?;
    }
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(n) = args.trajectories {
        cfg.run.trajectories = n;
    }
    if let Some(k) = args.record_every {
        cfg.run.record_every = k;
    }
    if args.no_decay {
        cfg.options.decay = false;
    }
    let opts = RunOptions {
        layout: if args.per_trajectory_files {
            TrajectoryLayout::Files
        } else {
            TrajectoryLayout::Columns
        },
        analytic: args.analytic,
    };
    let manifest = cli::run(&cfg, &out_dir(args.out), &opts)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    for o in &manifest.outputs {
        println!("wrote {o}");
    }
    println!(
        "{}: seed {}, {:.2}s",
        manifest.scenario, manifest.seed, manifest.wall_time_seconds
    );
    Ok(())
}

fn parse_window(s: &str) -> Result<(f64, f64), Error> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!("slope window must be 't0:t1', got '{s}'")));
    }
    let t0 = parts[0]
        .parse::<f64>()
        .map_err(|e| Error::Config(format!("bad window start '{}': {e}", parts[0])))?;
    let t1 = parts[1]
        .parse::<f64>()
        .map_err(|e| Error::Config(format!("bad window end '{}': {e}", parts[1])))?;
    Ok((t0, t1))
}

fn summarize_command(args: SummarizeArgs) -> Result<(), Error> {
    let window = args.slope_window.as_deref().map(parse_window).transpose()?;
    let summary = cli::summarize(&args.csv, args.slope_series.as_deref(), window)?;
    println!("final values:");
    for (name, v) in &summary.final_values {
        println!("  {name} = {v:.6e}");
    }
    if let Some(min) = &summary.var_p_minimum {
        println!(
            "var_p_at minimum: {:.6e} at t = {:.6e} s ({})",
            min.value,
            min.t_min,
            if min.interior { "interior" } else { "boundary" }
        );
    }
    if let Some(slope) = &summary.slope {
        println!(
            "log-log slope of {} over [{:.3e}, {:.3e}] s: {:.4}",
            slope.series, slope.window.0, slope.window.1, slope.slope
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run_command(args),
        Command::Summarize(args) => summarize_command(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
