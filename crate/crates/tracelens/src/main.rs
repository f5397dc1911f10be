use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use tracelens::cli::{self, AnalyzeWhich, CliError, RunConfig};
use tracelens::ingest::TraceFormat;

/// Screenshot-trace media-use measurement: ingestion, classification,
/// sessionization/segmentation, and the entangle/flatten/bundle
/// measurement-bias diagnostics. Logs go to stderr; data goes to files or
/// stdout, so every command is pipeable.
#[derive(Parser)]
#[command(name = "tracelens", version)]
struct Cli {
    /// Bound the internal worker count (does not affect output bytes).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a trace file and print the acceptance report as JSON.
    Validate {
        /// Trace file to check.
        trace: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: TraceFormat,
    },
    /// Cross-validate and fit the classifier; writes the model file and a
    /// training report.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the forest seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides paths.output_dir from the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Label every trace record with a trained model (labels.jsonl).
    Classify {
        #[arg(long)]
        config: PathBuf,
        /// Overrides paths.model from the config.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build maximal same-label segments from the trace and labels
    /// (segments.csv).
    Segment {
        #[arg(long)]
        config: PathBuf,
        /// Label sidecar; defaults to labels.jsonl in the output dir.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compute the entangle/flatten/bundle diagnostics (report.json + CSVs).
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Segments CSV; defaults to segments.csv in the output dir.
        #[arg(long)]
        segments: Option<PathBuf>,
        /// Label sidecar; defaults to labels.jsonl in the output dir.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Which sections to compute: entangle, flatten, bundle, or all.
        #[arg(long, default_value = "all")]
        which: AnalyzeWhich,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with ground truth.
    Synth {
        /// Synth config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (trace.jsonl, truth.jsonl, segments.csv,
        /// catalog.csv).
        #[arg(long)]
        output: PathBuf,
        /// Overrides the seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Stem list file; defaults to the built-in list.
        #[arg(long)]
        stems: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} worker threads: {e}");
            return ExitCode::from(3);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate { trace, format } => {
            let report = cli::cmd_validate(&trace, format)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            println!("{json}");
            if report.is_clean() {
                Ok(())
            } else {
                Err(CliError::Input(format!(
                    "{} of {} lines rejected",
                    report.rejected_count(),
                    report.lines_read
                )))
            }
        }
        Command::Train { config, seed, output } => {
            let (run_config, bytes) = RunConfig::load(&config)?;
            let report = cli::cmd_train(&run_config, &bytes, seed, output.as_deref())?;
            if let Some(cv) = &report.cross_validation {
                eprintln!(
                    "train: {} examples, mean CV F1 {:.4}, pooled F1 {:.4}",
                    report.examples, cv.mean_f1, cv.pooled.f1
                );
            } else {
                eprintln!("train: {} examples (cross-validation skipped)", report.examples);
            }
            eprintln!(
                "train: OOB F1 {:.4} over {} of {} examples, threshold {}",
                report.out_of_bag.metrics.f1,
                report.out_of_bag.covered,
                report.out_of_bag.total,
                report.threshold
            );
            Ok(())
        }
        Command::Classify { config, model, output } => {
            let (run_config, bytes) = RunConfig::load(&config)?;
            let path =
                cli::cmd_classify(&run_config, &bytes, model.as_deref(), output.as_deref())?;
            eprintln!("classify: wrote {}", path.display());
            Ok(())
        }
        Command::Segment { config, labels, output } => {
            let (run_config, bytes) = RunConfig::load(&config)?;
            let path =
                cli::cmd_segment(&run_config, &bytes, labels.as_deref(), output.as_deref())?;
            eprintln!("segment: wrote {}", path.display());
            Ok(())
        }
        Command::Analyze { config, segments, labels, which, output } => {
            let (run_config, bytes) = RunConfig::load(&config)?;
            cli::cmd_analyze(
                &run_config,
                &bytes,
                segments.as_deref(),
                labels.as_deref(),
                which,
                output.as_deref(),
            )?;
            eprintln!("analyze: report written");
            Ok(())
        }
        Command::Synth { config, output, seed, stems } => {
            let path = cli::cmd_synth(&config, stems.as_deref(), seed, &output)?;
            eprintln!("synth: wrote corpus at {}", path.display());
            Ok(())
        }
    }
}

#[allow(dead_code)]
fn assert_cli_parses() {
    Cli::command().debug_assert();
}
