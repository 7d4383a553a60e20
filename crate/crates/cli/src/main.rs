//! `sopflow` command-line entry point.
//!
//! Exit codes: 0 success or completed diagnosis, 1 failure or aborted
//! episode, 2 usage error, 3 step budget exhausted.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "sopflow",
    version,
    about = "SOP-guided root cause analysis over a simulated microservice deployment"
)]
struct Cli {
    /// Run configuration file (TOML)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Knowledge base directory; overrides [kb] path
    #[arg(long, global = true, value_name = "DIR")]
    kb: Option<PathBuf>,

    #[command(flatten)]
    backend: BackendArgs,

    #[command(subcommand)]
    command: Command,
}

/// Backend overrides shared by every subcommand.
#[derive(Args, Debug, Default)]
struct BackendArgs {
    /// Chat-completions endpoint; switches the backend to remote
    #[arg(long, global = true, value_name = "URL")]
    endpoint: Option<String>,

    /// Chat model name for the remote backend
    #[arg(long, global = true)]
    model: Option<String>,

    /// Environment variable holding the API key
    #[arg(long, global = true, value_name = "NAME")]
    api_key_env: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect or extend the knowledge base
    Kb {
        #[command(subcommand)]
        action: KbAction,
    },
    /// Generate scenario files
    Simulate(SimulateArgs),
    /// Run one diagnosis episode
    Diagnose(DiagnoseArgs),
    /// Run every scenario of a corpus and report accuracy
    Benchmark(BenchmarkArgs),
    /// Render a transcript and optionally check flow-rule compliance
    Transcript(TranscriptArgs),
}

#[derive(Subcommand)]
enum KbAction {
    /// Count and list SOPs and incidents
    List,
    /// Validate a SOP (or incident) file and store it
    Add {
        #[arg(long, value_name = "FILE")]
        file: PathBuf,
        /// The file holds a historical incident instead of a SOP
        #[arg(long)]
        incident: bool,
    },
    /// Rank SOPs (or incidents) against a query
    Match {
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = sopflow::kb::DEFAULT_TOP_K)]
        k: usize,
        #[arg(long, default_value_t = sopflow::kb::DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Match historical incident manifestations instead of SOP names
        #[arg(long)]
        observation: bool,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated fault types, or `all`
    #[arg(long, default_value = "all")]
    types: String,
    #[arg(long, default_value_t = 9)]
    count: usize,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value = sopflow::sandbox::ONLINE_BOUTIQUE)]
    topology: String,
    /// Also write `corpus.toml` listing the generated files
    #[arg(long)]
    manifest: bool,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long, value_name = "FILE")]
    scenario: PathBuf,
    /// Scripted-backend responses (TOML)
    #[arg(long, value_name = "FILE")]
    script: Option<PathBuf>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Comma-separated mechanisms to turn off
    #[arg(long, value_name = "FLAGS")]
    ablate: Option<String>,
    /// Write the episode transcript (JSON lines)
    #[arg(long, value_name = "FILE")]
    transcript: Option<PathBuf>,
    /// Write the diagnosis report (JSON)
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Corpus manifest; overrides [eval] corpus
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Comma-separated mechanisms to turn off
    #[arg(long, value_name = "FLAGS")]
    ablate: Option<String>,
    /// Write the benchmark report (JSON)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Parallel episodes; 0 uses every core
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Write one transcript per scenario into this directory
    #[arg(long, value_name = "DIR")]
    transcripts: Option<PathBuf>,
}

#[derive(Args)]
struct TranscriptArgs {
    /// Transcript file (JSON lines)
    file: PathBuf,
    /// Replay the flow rules and report violations
    #[arg(long)]
    check: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("sopflow: {e}");
            ExitCode::from(e.code())
        }
    }
}
