//! Command-line Monte-Carlo driver for the iterative multiuser receiver.
//!
//! `mudsim run` builds a [`SimConfig`] by layering three sources, most
//! specific last: the benchmark preset, an optional JSON config file, and
//! command-line flags. The finished report is written as CSV or JSON to
//! `--out` or stdout.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use mudsim::harness::{
    emit_report, run_simulation, DetectorKind, ReportFormat, SimConfig, SpreadingCadence,
};
use mudsim::Error;

/// Estimated detector work (scored-node units) beyond which a run needs
/// `--extended`. The benchmark preset at full overload stays well inside;
/// the long convergence studies do not.
const DEFAULT_WORK_BUDGET: f64 = 2e10;

#[derive(Parser)]
#[command(name = "mudsim", version, about = "Monte-Carlo simulation of iterative multiuser detection in overloaded channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and emit its BER report.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; keys mirror the flags below, flags win.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Named parameter set to start from (only `benchmark` exists).
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(["benchmark"]))]
    preset: Option<String>,

    /// Active users K.
    #[arg(long)]
    users: Option<usize>,

    /// Spreading gain L (chips per channel use).
    #[arg(long)]
    gain: Option<usize>,

    /// Per-bit SNR in dB.
    #[arg(long)]
    ebn0_db: Option<f64>,

    /// Detector/decoder exchanges per frame.
    #[arg(long = "iters")]
    iterations: Option<usize>,

    /// Inner detector: talg, pic, lmmse, or exhaustive.
    #[arg(long)]
    detector: Option<DetectorKind>,

    /// List-search threshold in units of N0.
    #[arg(long)]
    t_threshold: Option<f64>,

    /// Survivor cap per search level.
    #[arg(long = "pmax")]
    p_max: Option<usize>,

    /// Survivor floor per search level.
    #[arg(long = "pmin")]
    p_min: Option<usize>,

    /// Frames to simulate.
    #[arg(long)]
    frames: Option<usize>,

    /// Information bits per user per frame.
    #[arg(long = "info-bits")]
    info_bits_per_frame: Option<usize>,

    /// Master seed for all random streams.
    #[arg(long)]
    seed: Option<u64>,

    /// Probability floor for exchanged distributions.
    #[arg(long)]
    floor: Option<f64>,

    /// Spreading redraw cadence: per-frame or per-symbol.
    #[arg(long)]
    spreading: Option<SpreadingCadence>,

    /// Output path; stdout when omitted.
    #[arg(long = "out")]
    output: Option<String>,

    /// Report encoding: csv or json.
    #[arg(long)]
    format: Option<ReportFormat>,

    /// Allow runs beyond the default work budget.
    #[arg(long)]
    extended: bool,
}

/// The config-file schema: every scalar flag, all optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    users: Option<usize>,
    gain: Option<usize>,
    ebn0_db: Option<f64>,
    iterations: Option<usize>,
    detector: Option<DetectorKind>,
    t_threshold: Option<f64>,
    p_max: Option<usize>,
    p_min: Option<usize>,
    frames: Option<usize>,
    info_bits_per_frame: Option<usize>,
    seed: Option<u64>,
    floor: Option<f64>,
    spreading: Option<SpreadingCadence>,
    output: Option<String>,
    format: Option<ReportFormat>,
    extended: Option<bool>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("mudsim: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: RunArgs) -> mudsim::Result<()> {
    let file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<PartialConfig>(&text)?
        }
        None => PartialConfig::default(),
    };

    // Resolve the user count first so the preset's p_min schedule sees it.
    let users = args.users.or(file.users).unwrap_or(16);
    let mut config = SimConfig::benchmark(users);
    apply_file(&mut config, &file);
    apply_flags(&mut config, &args);
    config.validate()?;

    let format = args.format.or(file.format).unwrap_or(ReportFormat::Csv);
    let extended = args.extended || file.extended == Some(true);
    if !extended && config.work_estimate() > DEFAULT_WORK_BUDGET {
        return Err(Error::InvalidParameter(format!(
            "estimated detector work {:.2e} exceeds the default budget {DEFAULT_WORK_BUDGET:.0e}; \
             pass --extended to run anyway",
            config.work_estimate()
        )));
    }

    let report = run_simulation(&config)?;
    emit_report(&report, format, config.output.as_deref().map(Path::new))
}

fn apply_file(config: &mut SimConfig, file: &PartialConfig) {
    if let Some(v) = file.users {
        config.users = v;
    }
    if let Some(v) = file.gain {
        config.gain = v;
    }
    if let Some(v) = file.ebn0_db {
        config.ebn0_db = v;
    }
    if let Some(v) = file.iterations {
        config.iterations = v;
    }
    if let Some(v) = file.detector {
        config.detector = v;
    }
    if let Some(v) = file.t_threshold {
        config.t_threshold = v;
    }
    if let Some(v) = file.p_max {
        config.p_max = v;
    }
    if let Some(v) = file.p_min {
        config.p_min = v;
    }
    if let Some(v) = file.frames {
        config.frames = v;
    }
    if let Some(v) = file.info_bits_per_frame {
        config.info_bits_per_frame = v;
    }
    if let Some(v) = file.seed {
        config.seed = v;
    }
    if let Some(v) = file.floor {
        config.floor = v;
    }
    if let Some(v) = file.spreading {
        config.spreading = v;
    }
    if let Some(v) = &file.output {
        config.output = Some(v.clone());
    }
}

fn apply_flags(config: &mut SimConfig, args: &RunArgs) {
    if let Some(v) = args.users {
        config.users = v;
    }
    if let Some(v) = args.gain {
        config.gain = v;
    }
    if let Some(v) = args.ebn0_db {
        config.ebn0_db = v;
    }
    if let Some(v) = args.iterations {
        config.iterations = v;
    }
    if let Some(v) = args.detector {
        config.detector = v;
    }
    if let Some(v) = args.t_threshold {
        config.t_threshold = v;
    }
    if let Some(v) = args.p_max {
        config.p_max = v;
    }
    if let Some(v) = args.p_min {
        config.p_min = v;
    }
    if let Some(v) = args.frames {
        config.frames = v;
    }
    if let Some(v) = args.info_bits_per_frame {
        config.info_bits_per_frame = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.floor {
        config.floor = v;
    }
    if let Some(v) = args.spreading {
        config.spreading = v;
    }
    if let Some(v) = &args.output {
        config.output = Some(v.clone());
    }
}
