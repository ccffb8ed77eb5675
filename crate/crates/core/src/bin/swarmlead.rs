use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use swarmlead::graph::{default_survey_topologies, spectrum_survey, survey_csv, TopologySpec};
use swarmlead::harness::output::{comparison_json, emit_comparison, emit_run, summary_json};
use swarmlead::harness::{compare_strategies, run_scenario, verify, ScenarioConfig};
use swarmlead::{Error, Result};

#[derive(Parser)]
#[command(name = "swarmlead", version, about = "Online leader selection for leader-follower swarms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its trace, summary and plot data.
    Run {
        config: PathBuf,
        /// Output directory (defaults to the config's, then `out`).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Accept gains outside the certified region, with a warning.
        #[arg(long)]
        allow_infeasible: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run constant, local, global and random selection from identical
    /// initial conditions.
    Compare {
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        allow_infeasible: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Grounded spectra for every topology and leader, as CSV.
    Survey {
        /// JSON array of topology specs, or `canonical` for the six
        /// ten-agent reference graphs.
        topologies: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check the grounding identities, interlacing, decay certificates,
    /// power iteration and cost equivalence for a configuration.
    Verify { config: PathBuf },
}

fn load_config(path: &Path, allow_infeasible: bool, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(path)?;
    cfg.allow_infeasible |= allow_infeasible;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn output_dir(flag: Option<PathBuf>, cfg: &ScenarioConfig) -> PathBuf {
    flag.or_else(|| cfg.outputs.directory.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn execute(command: Command) -> Result<bool> {
    match command {
        Command::Run {
            config,
            output,
            allow_infeasible,
            seed,
        } => {
            let cfg = load_config(&config, allow_infeasible, seed)?;
            let trace = run_scenario(&cfg)?;
            for w in &trace.warnings {
                eprintln!("warning: {w}");
            }
            let written = emit_run(&trace, &output_dir(output, &cfg))?;
            let mut summary = summary_json(&trace.summary);
            summary["files"] = json!(written);
            println!("{}", serde_json::to_string_pretty(&summary).expect("plain json"));
            Ok(true)
        }
        Command::Compare {
            config,
            output,
            allow_infeasible,
            seed,
        } => {
            let cfg = load_config(&config, allow_infeasible, seed)?;
            let (traces, report) = compare_strategies(&cfg)?;
            for w in traces.first().map(|t| t.warnings.as_slice()).unwrap_or_default() {
                eprintln!("warning: {w}");
            }
            emit_comparison(&traces, &report, &output_dir(output, &cfg))?;
            println!("{}", serde_json::to_string_pretty(&comparison_json(&report)).expect("plain json"));
            Ok(true)
        }
        Command::Survey { topologies, output } => {
            let specs: Vec<TopologySpec> = if topologies == "canonical" {
                default_survey_topologies()
            } else {
                serde_json::from_str(&read(Path::new(&topologies))?)
                    .map_err(|e| Error::InvalidConfig(format!("{topologies}: {e}")))?
            };
            let csv = survey_csv(&spectrum_survey(&specs)?);
            match output {
                Some(path) => std::fs::write(&path, csv).map_err(|e| Error::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?,
                None => print!("{csv}"),
            }
            Ok(true)
        }
        Command::Verify { config } => {
            let cfg = ScenarioConfig::load(&config)?;
            let report = verify(&cfg)?;
            let failures: Vec<_> = report.failures().collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "passed": report.passed(),
                    "checks": report.checks.len(),
                    "failures": failures,
                }))
                .expect("plain json")
            );
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}", json!({"error": "verification_failed", "message": "one or more checks failed"}));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::from(2)
        }
    }
}
