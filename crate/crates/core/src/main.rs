use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;
use vote_monitor::election::OracleMode;
use vote_monitor::experiment::{audit_transcript, run_experiment, write_outputs, ExperimentConfig, RunOverrides};
use vote_monitor::harness::Transcript;
use vote_monitor::workload::{generate, stream_to_text, to_events, AssignmentPolicy, GeneratorSpec};

#[derive(Parser)]
#[command(name = "vote-monitor", version, about = "Distributed election-winner tracking experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment config and write report.csv, timing.csv and transcripts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        oracle: Option<OracleMode>,
    },
    /// Re-audit the declarations in a JSONL transcript.
    Audit {
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long, default_value = "exact")]
        oracle: OracleMode,
    },
    /// Generate a stream in the text format with a site column.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn round_robin() -> AssignmentPolicy {
    AssignmentPolicy::RoundRobin
}

/// Contents of a `gen --spec` file.
#[derive(Serialize, Deserialize)]
struct GenFile {
    workload: GeneratorSpec,
    k: usize,
    #[serde(default = "round_robin")]
    assignment: AssignmentPolicy,
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.cmd {
        Cmd::Run { config, out, trials, seed, oracle } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outputs = run_experiment(&cfg, &RunOverrides { trials, seed, oracle });
            write_outputs(&out, &outputs)?;
            let failures: u64 = outputs.iter().map(|o| o.row.failures).sum();
            let errors = outputs.iter().filter(|o| !o.row.error.is_empty()).count();
            println!("{} rows, {failures} audit failures, {errors} error rows -> {}", outputs.len(), out.display());
        }
        Cmd::Audit { transcript, oracle } => {
            let tr = Transcript::read_jsonl(BufReader::new(fs::File::open(&transcript)?))?;
            let s = audit_transcript(&tr, oracle)?;
            for r in &s.records {
                println!("{}", serde_json::to_string(r)?);
            }
            println!(
                "queries={} failures={} unknown={} inconsistent={} failure_rate={}",
                s.queries,
                s.failures,
                s.unknown,
                s.inconsistent,
                s.failure_rate()
            );
        }
        Cmd::Gen { spec, out } => {
            let file: GenFile = serde_json::from_str(&fs::read_to_string(&spec)?)?;
            let g = generate(&file.workload)?;
            let events = to_events(&g, &file.assignment, file.k)?;
            fs::write(&out, stream_to_text(g.m, g.kind, &events))?;
            println!("{} events -> {}", events.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
