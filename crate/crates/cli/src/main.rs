use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use deep_hankel_cli::config::{load_key_values, KeyValues};
use deep_hankel_cli::{run, CliResult, Experiment, ExperimentConfig};

/// Data-driven Hankel model experiments with deterministic CSV output.
#[derive(Debug, Parser)]
#[command(name = "deep-hankel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rollouts of one input across output-noise redraws.
    Rollout(CommonArgs),
    /// Mean rollout RMSE over depth, data length and preprocessing.
    DepthSweep(CommonArgs),
    /// Smallest singular value of random Hankel matrices against its bounds.
    Singvals(CommonArgs),
    /// Monte Carlo frequencies of the concentration events.
    HwEvents(CommonArgs),
    /// Trajectory-space LQR servo on noisy versus noise-free data.
    Lqr(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat `key = value` config file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repetitions (rollouts, Monte Carlo trials or LQR seeds).
    #[arg(long)]
    trials: Option<usize>,
    /// Hankel depths, comma separated.
    #[arg(long = "L", value_delimiter = ',')]
    depths: Option<Vec<usize>>,
    /// Data lengths, comma separated.
    #[arg(long = "N", value_delimiter = ',')]
    data_lens: Option<Vec<usize>>,
    /// Output-noise variance.
    #[arg(long)]
    noise_var: Option<f64>,
    /// Preprocessing strategy: noisy, smooth or ssa.
    #[arg(long)]
    strategy: Option<String>,
    /// Draw a fresh probing input for every rollout.
    #[arg(long, action = ArgAction::Set)]
    resample_input: Option<bool>,
    /// Apply SSA to the input channel as well.
    #[arg(long, action = ArgAction::Set)]
    ssa_both: Option<bool>,
}

impl CommonArgs {
    fn overrides(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.insert(k.to_string(), v);
            }
        };
        put("seed", self.seed.map(|v| v.to_string()));
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        put("trials", self.trials.map(|v| v.to_string()));
        put("L", self.depths.as_deref().map(join));
        put("N", self.data_lens.as_deref().map(join));
        put("noise_var", self.noise_var.map(|v| v.to_string()));
        put("strategy", self.strategy.clone());
        put("resample_input", self.resample_input.map(|v| v.to_string()));
        put("ssa_both", self.ssa_both.map(|v| v.to_string()));
        kv
    }
}

fn execute(experiment: Experiment, args: &CommonArgs) -> CliResult<()> {
    let file = args.config.as_deref().map(load_key_values).transpose()?;
    let config = ExperimentConfig::resolve(experiment, file.as_ref(), &args.overrides())?;
    let artifacts = run(&config)?;
    println!("{}", artifacts.snapshot.display());
    for path in &artifacts.tables {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (experiment, args) = match &cli.command {
        Command::Rollout(a) => (Experiment::Rollout, a),
        Command::DepthSweep(a) => (Experiment::DepthSweep, a),
        Command::Singvals(a) => (Experiment::Singvals, a),
        Command::HwEvents(a) => (Experiment::HwEvents, a),
        Command::Lqr(a) => (Experiment::Lqr, a),
    };
    match execute(experiment, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("deep-hankel {experiment}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
