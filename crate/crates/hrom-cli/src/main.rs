//! `hrom`: reduced-order state-space models from measured multichannel
//! impulse responses, with dead-time extraction.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hrom::{export_eval, Error, Geometry, Result, SynthConfig};
use hrom_cli::{
    cmd_delays, cmd_eval, cmd_reduce, cmd_respond, cmd_split, cmd_synth, error_kind,
    PipelineConfig,
};

#[derive(Parser)]
#[command(
    name = "hrom",
    version,
    about = "Reduced-order models from multichannel impulse responses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic impulse-response dataset with known delays
    Synth {
        /// Source/receiver layout: planar | semicircle
        #[arg(long, default_value = "planar")]
        geometry: String,
        /// Number of sources (inputs)
        #[arg(long, default_value_t = 4)]
        m: usize,
        /// Number of receivers (outputs)
        #[arg(long, default_value_t = 4)]
        p: usize,
        /// State dimension of the shared core filter
        #[arg(long = "n-modes", default_value_t = 16)]
        n_modes: usize,
        /// Sample rate in Hz
        #[arg(long, default_value_t = 16000.0)]
        fs: f64,
        /// Record length in seconds
        #[arg(long, default_value_t = 0.128)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output impulse-response container path
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate per-channel onset delays from a dataset
    Delays {
        /// Input impulse-response container
        #[arg(long = "in")]
        input: PathBuf,
        /// Relative onset threshold in (0, 1)
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        /// Optional JSON output path (stdout otherwise)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split a delay matrix into input/output dead times
    Split {
        /// Delay-matrix JSON produced by `delays`
        #[arg(long = "in")]
        input: PathBuf,
        /// Split mode: none | least-common | dts
        #[arg(long, default_value = "dts")]
        mode: String,
        /// Optional JSON output path (stdout otherwise)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reduce a dataset to a structured state-space model
    Reduce {
        /// Input impulse-response container
        #[arg(long = "in")]
        input: PathBuf,
        /// Output model container path
        #[arg(long)]
        out: PathBuf,
        /// Relative sketch tolerance
        #[arg(long, default_value_t = 0.05)]
        gamma: f64,
        /// Sketch block size
        #[arg(long, default_value_t = 32)]
        block: usize,
        /// Power iterations
        #[arg(long, default_value_t = 2)]
        power: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dead-time mode: none | least-common | dts
        #[arg(long, default_value = "dts")]
        mode: String,
        /// Relative onset threshold for delay estimation
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        /// Fixed core order (adaptive when omitted)
        #[arg(long)]
        order: Option<usize>,
    },
    /// Evaluate a stored model against a reference dataset (CSV)
    Eval {
        /// Reference impulse-response container
        #[arg(long = "in")]
        input: PathBuf,
        /// Model container produced by `reduce`
        #[arg(long)]
        rom: PathBuf,
        /// Scenario label for the CSV row
        #[arg(long, default_value = "default")]
        scenario: String,
        /// Optional CSV output path (stdout otherwise)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a stored model's frequency response (CSV)
    Respond {
        /// Model container produced by `reduce`
        #[arg(long)]
        rom: PathBuf,
        /// Angular frequencies in rad/sample, comma separated
        #[arg(long, value_delimiter = ',', required = true)]
        omegas: Vec<f64>,
        /// Optional CSV output path (stdout otherwise)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Serializes a report as pretty JSON, writing it to `out` when given and to
/// stdout otherwise.
fn emit_json<T: serde::Serialize>(report: &T, out: Option<&PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Format(format!("report serialization failed: {e}")))?;
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

/// Writes CSV text to `out` when given and to stdout otherwise.
fn emit_csv(text: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            geometry,
            m,
            p,
            n_modes,
            fs,
            duration,
            seed,
            out,
        } => {
            let cfg = SynthConfig {
                geometry: geometry.parse::<Geometry>()?,
                m,
                p,
                n_modes,
                n_samples: (fs * duration).round() as usize,
                sample_rate: fs,
                seed,
            };
            let report = cmd_synth(&cfg, &out)?;
            emit_json(&report, None)
        }
        Command::Delays {
            input,
            threshold,
            out,
        } => {
            let report = cmd_delays(&input, threshold)?;
            emit_json(&report, out.as_ref())
        }
        Command::Split { input, mode, out } => {
            let report = cmd_split(&input, mode.parse()?)?;
            emit_json(&report, out.as_ref())
        }
        Command::Reduce {
            input,
            out,
            gamma,
            block,
            power,
            seed,
            mode,
            threshold,
            order,
        } => {
            let cfg = PipelineConfig {
                gamma,
                block,
                power,
                seed,
                mode: mode.parse()?,
                threshold,
                order,
            };
            let report = cmd_reduce(&input, &out, &cfg)?;
            emit_json(&report, None)
        }
        Command::Eval {
            input,
            rom,
            scenario,
            out,
        } => {
            let record = cmd_eval(&input, &rom, &scenario)?;
            let text = export_eval(&[record])?;
            emit_csv(&text, out.as_ref())
        }
        Command::Respond { rom, omegas, out } => {
            let text = cmd_respond(&rom, &omegas)?;
            emit_csv(&text, out.as_ref())
        }
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("HROM_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            // Ignore failure: the global pool may already exist.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let envelope = serde_json::json!({
                "error": { "kind": error_kind(&e), "message": e.to_string() }
            });
            eprintln!("{envelope}");
            ExitCode::FAILURE
        }
    }
}
