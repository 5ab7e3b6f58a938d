//! `mxvit`: quantize, run, evaluate and explore MXInt Vision Transformers.

mod commands;
mod settings;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mxvit::dse::SweepTarget;
use mxvit::nonlinear::LutKind;
use mxvit::{Error, ErrorKind};

use settings::{Common, Settings};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  configuration or usage error (bad flag, bad config value, malformed input file)
  3  I/O error (missing or unreadable file, digest mismatch; an empty weights
     directory has no manifest.json and lands here)
  4  numeric error (non-finite input, accumulator or exponent overflow)";

#[derive(Debug, Parser)]
#[command(name = "mxvit", version, about, after_help = EXIT_CODES)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Quantize every weight into a packed archive with round-trip stats.
    Quantize {
        /// Also write the dequantized weights as a new model directory.
        #[arg(long)]
        export_dequantized: Option<PathBuf>,
    },
    /// Logits of one input.
    Run {
        /// Raw little-endian f32 image; defaults to a dataset sample.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Dataset sample to run when no --input is given.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Include every named intermediate activation.
        #[arg(long)]
        trace: bool,
    },
    /// Top-1 accuracy, loss against the reference and the cost report.
    Evaluate,
    /// Accuracy curve over one parameter.
    Sweep {
        #[arg(long)]
        target: SweepTarget,
        /// Explicit comma-separated values.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        values: Vec<f64>,
        /// First bit width when no --values are given.
        #[arg(long, default_value_t = 1)]
        from: u32,
        /// Last bit width when no --values are given.
        #[arg(long, default_value_t = 8)]
        to: u32,
    },
    /// Greedy bit-width search under an accuracy-loss budget.
    Search {
        /// Allowed top-1 loss in percentage points.
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        budget: f64,
    },
    /// Dump one lookup table as a memory-initialization file.
    LutDump {
        /// gelu | pow2 (softmax) | inv_sqrt (layernorm)
        #[arg(long)]
        kind: LutKind,
        /// Entry-address bits; defaults to the configured width.
        #[arg(long)]
        bits: Option<u32>,
        /// hex | csv
        #[arg(long, default_value = "hex")]
        format: String,
    },
    /// Per-layer divergence between the MXInt and reference paths.
    Compare {
        #[arg(long, default_value_t = 0.02)]
        threshold: f64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Io => 3,
        ErrorKind::Numeric => 4,
    }
}

/// Writes to stdout, ignoring a closed pipe (`mxvit ... | head`).
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json(v: &serde_json::Value) {
    emit(&(serde_json::to_string_pretty(v).expect("json values serialize") + "\n"));
}

fn dispatch(cli: Cli) -> mxvit::Result<()> {
    let s = Settings::resolve(&cli.common)?;
    match cli.command {
        Command::Quantize { export_dequantized } => {
            print_json(&commands::quantize(&s, export_dequantized.as_deref())?)
        }
        Command::Run {
            input,
            index,
            trace,
        } => print_json(&commands::run(&s, input.as_deref(), index, trace)?),
        Command::Evaluate => print_json(&commands::evaluate_cmd(&s)?),
        Command::Sweep {
            target,
            values,
            from,
            to,
        } => print_json(&commands::sweep_cmd(&s, target, &values, (from, to))?),
        Command::Search { budget } => print_json(&commands::search_cmd(&s, budget)?),
        Command::LutDump { kind, bits, format } => {
            let (text, fingerprint) = commands::lut_dump(&s, kind, bits, &format)?;
            match &s.out {
                Some(p) => emit(&format!("{} fingerprint {fingerprint}\n", p.display())),
                None => {
                    emit(&text);
                    eprintln!("fingerprint {fingerprint}");
                }
            }
        }
        Command::Compare { threshold } => print_json(&commands::compare_cmd(&s, threshold)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
