//! `sdmrac` command-line driver.

mod commands;
mod figures;
mod plot;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sdmrac::harness::Mode;

use commands::{Failure, Overrides, PeOptions, TrainOptions, EXIT_USAGE};

#[derive(Parser, Debug)]
#[command(name = "sdmrac", version, about = "Stochastic deep MRAC experiments on the wing-rock benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one closed-loop experiment and write its logs, diagnostics and plots.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Run two modes on the same setup and write both plus their differences.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Config for the second run; defaults to `--config`.
        #[arg(long)]
        config_b: Option<PathBuf>,
        /// Mode of the first run [default: sdmrac, or the config's mode when --config-b is given].
        #[arg(long, value_enum)]
        mode_a: Option<ModeArg>,
        /// Mode of the second run [default: dmrac, or the config's mode when --config-b is given].
        #[arg(long, value_enum)]
        mode_b: Option<ModeArg>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Train a network on a dumped replay buffer.
    TrainOffline {
        /// Buffer CSV as written by `simulate`.
        #[arg(long)]
        buffer: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// `dmrac` trains a point estimate on squared loss.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_parser = positive_usize)]
        batch_size: Option<usize>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Recompute the per-window excitation of a run's logged features.
    PeReport {
        /// Directory written by `simulate`.
        #[arg(long)]
        input_dir: PathBuf,
        #[arg(long, value_parser = positive_f64)]
        window: Option<f64>,
        #[arg(long, value_parser = positive_f64)]
        stride: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Defaults to `pe_report.csv` inside the input directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Regenerate the SVG plots of a `simulate` or `compare` directory from its logs.
    Plot {
        #[arg(long)]
        input_dir: PathBuf,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated time in seconds.
    #[arg(long, value_parser = positive_f64)]
    horizon: Option<f64>,
    /// Adaptation gain.
    #[arg(long, value_parser = positive_f64)]
    gamma: Option<f64>,
    /// Train on a background thread while the loop keeps running.
    #[arg(long)]
    pipelined: bool,
}

#[derive(Args, Debug)]
struct OutputArgs {
    #[arg(long, env = "SDMRAC_OUTPUT_DIR", default_value = "sdmrac-out")]
    output_dir: PathBuf,
    /// Reuse a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Sdmrac,
    Dmrac,
    #[value(name = "baseline_only", alias = "baseline-only")]
    BaselineOnly,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sdmrac => Mode::Sdmrac,
            ModeArg::Dmrac => Mode::Dmrac,
            ModeArg::BaselineOnly => Mode::BaselineOnly,
        }
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(_) => Err("must be a positive finite number".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

impl RunArgs {
    fn overrides(&self, mode: Option<ModeArg>) -> Overrides {
        Overrides {
            seed: self.seed,
            mode: mode.map(Mode::from),
            horizon: self.horizon,
            gamma: self.gamma,
            pipelined: self.pipelined,
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Simulate { run, mode, out } => {
            let cfg = commands::load_config(run.config.as_deref(), &run.overrides(mode))?;
            commands::simulate(&cfg, &out.output_dir, out.force)
        }
        Command::Compare {
            run,
            config_b,
            mode_a,
            mode_b,
            out,
        } => {
            let (default_a, default_b) = match config_b {
                Some(_) => (None, None),
                None => (Some(ModeArg::Sdmrac), Some(ModeArg::Dmrac)),
            };
            let a = commands::load_config(run.config.as_deref(), &run.overrides(mode_a.or(default_a)))?;
            let b_path = config_b.as_deref().or(run.config.as_deref());
            let b = commands::load_config(b_path, &run.overrides(mode_b.or(default_b)))?;
            commands::compare(&a, &b, &out.output_dir, out.force)
        }
        Command::TrainOffline {
            buffer,
            config,
            seed,
            mode,
            epochs,
            batch_size,
            out,
        } => {
            let overrides = Overrides {
                seed,
                mode: mode.map(Mode::from),
                ..Overrides::default()
            };
            let cfg = commands::load_config(config.as_deref(), &overrides)?;
            let opts = TrainOptions {
                buffer,
                epochs,
                batch_size,
            };
            commands::train_offline(&cfg, &opts, &out.output_dir, out.force)
        }
        Command::PeReport {
            input_dir,
            window,
            stride,
            threshold,
            output,
        } => commands::pe_report(&PeOptions {
            input_dir,
            window,
            stride,
            threshold,
            output,
        }),
        Command::Plot { input_dir } => commands::plot(&input_dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
