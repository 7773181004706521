//! `tfec`: simulate benchmarks, detect HFOs, score and report.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tfec::io::RunConfig;
use tfec::pipeline::BandMode;
use tfec::Error;

#[derive(Parser, Debug)]
#[command(
    name = "tfec",
    version,
    about = "Time-frequency event clustering HFO detector"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalOpts {
    /// Run configuration (TOML). Keys can be overridden with TFEC_<KEY>.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Band mode: both, ripple, fast_ripple or full.
    #[arg(long, global = true)]
    pub band: Option<String>,
    /// Seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic recording with reference annotations.
    Simulate {
        /// Overrides synth.snr_db.
        #[arg(long)]
        snr_db: Option<f64>,
        /// Overrides synth.background_id.
        #[arg(long)]
        background: Option<usize>,
    },
    /// Detect HFOs in a signal container.
    Detect {
        /// Container header (.json).
        container: PathBuf,
    },
    /// Score detections against reference annotations.
    Evaluate {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// Container the annotations belong to; enables range checks.
        #[arg(long)]
        container: Option<PathBuf>,
        /// SNR label for the score table.
        #[arg(long)]
        snr_db: Option<f64>,
        /// Background label for the score table.
        #[arg(long)]
        background: Option<usize>,
    },
    /// Choose clustering features by floating forward search.
    SelectFeatures {
        /// Container header; repeat together with --annotations.
        #[arg(long, required = true)]
        container: Vec<PathBuf>,
        #[arg(long, required = true)]
        annotations: Vec<PathBuf>,
    },
    /// Resected versus non-resected event rate ratio.
    RateRatio {
        #[arg(long)]
        detections: PathBuf,
        /// Container whose header holds the resected flags.
        #[arg(long)]
        container: PathBuf,
        /// Patient label for the ratio table.
        #[arg(long, default_value = "patient")]
        label: String,
    },
    /// Render SVG plots from score, ratio and correlation tables.
    Report {
        /// Directories searched for scores.csv, ratio.csv and correlation.csv.
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
    },
    /// Simulate, detect and evaluate over the configured SNR levels and
    /// backgrounds.
    Sweep,
}

/// Exit code for an error: 2 user or configuration, 3 data contract,
/// 1 anything else.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parameter(_) => 2,
        Error::Data(_) => 3,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
        Error::Io(_) => 1,
    }
}

fn load_config(g: &GlobalOpts) -> tfec::Result<RunConfig> {
    let mut cfg = RunConfig::load(g.config.as_deref())?;
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    if let Some(b) = &g.band {
        cfg.detector.band_mode = b.parse::<BandMode>()?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> tfec::Result<()> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut cfg = load_config(&cli.global)?;
    let out = &cli.global.out;
    match cli.command {
        Command::Simulate { snr_db, background } => {
            if let Some(s) = snr_db {
                cfg.synth.snr_db = s;
            }
            if let Some(b) = background {
                cfg.synth.background_id = b;
            }
            cfg.resolve()?;
            commands::simulate(&cfg, out)
        }
        Command::Detect { container } => {
            cfg.resolve()?;
            commands::detect(&cfg, &container, out)
        }
        Command::Evaluate {
            detections,
            annotations,
            container,
            snr_db,
            background,
        } => {
            cfg.resolve()?;
            let labels = commands::RunLabels { snr_db, background };
            commands::evaluate(
                &cfg,
                &detections,
                &annotations,
                container.as_deref(),
                labels,
                out,
            )
        }
        Command::SelectFeatures {
            container,
            annotations,
        } => {
            if container.len() != annotations.len() {
                return Err(Error::Config(
                    "give one --annotations per --container".into(),
                ));
            }
            cfg.resolve()?;
            commands::select_features(&cfg, &container, &annotations, out)
        }
        Command::RateRatio {
            detections,
            container,
            label,
        } => {
            cfg.resolve()?;
            commands::rate_ratio(&cfg, &detections, &container, &label, out)
        }
        Command::Report { input } => {
            cfg.resolve()?;
            commands::report(&cfg, &input, out)
        }
        Command::Sweep => {
            cfg.resolve()?;
            commands::sweep(&cfg, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
