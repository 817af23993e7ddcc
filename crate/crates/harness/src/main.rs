use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use maas_core::bridge::Profile;
use maas_core::model::UnitStrategy;
use maas_harness::{run_scenario, ClockMode, HarnessError, RunOptions, ScenarioScript};

#[derive(Debug, Parser)]
#[command(
    name = "maas-harness",
    about = "Run control-plane scenarios against the simulated cloud"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute a scenario script and write its JSON and CSV reports.
    Run {
        scenario: PathBuf,
        /// Latency profile: vm, container or zero.
        #[arg(long)]
        profile: Option<Profile>,
        /// SINGLE_PROBE or MULTI_PROBE.
        #[arg(long)]
        strategy: Option<UnitStrategy>,
        #[arg(long)]
        seed: Option<u64>,
        /// Unit controller replicas.
        #[arg(long)]
        replicas: Option<usize>,
        /// Repetitions of every sweep value.
        #[arg(long = "repeat")]
        repetitions: Option<usize>,
        #[arg(long, default_value = "reports")]
        out: PathBuf,
        /// sim advances a modelled clock; wall sleeps and measures real time.
        #[arg(long, default_value = "sim")]
        clock: ClockMode,
        /// Real seconds per simulated second in wall-clock mode.
        #[arg(long, default_value_t = 0.001)]
        time_scale: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("maas-harness: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let Command::Run {
        scenario,
        profile,
        strategy,
        seed,
        replicas,
        repetitions,
        out,
        clock,
        time_scale,
    } = cli.command;
    let script = ScenarioScript::load(&scenario)?;
    let opts = RunOptions {
        strategy,
        profile,
        seed,
        replicas,
        repetitions,
        clock,
        time_scale,
    };
    let report = run_scenario(&script, &opts)?;
    let (json, csv) = report.write(&out)?;
    for run in &report.runs {
        println!(
            "{} rep {}: {} ticks, {} assertions passed, {} bridge ops",
            run.name,
            run.repetition,
            run.ticks,
            run.assertions,
            run.bridge_op_count()
        );
        for m in &run.measures {
            println!(
                "  {:<24} total {:>10.1} ms  claim {:>8.1}  unit {:>8.1}  deploy {:>10.1}  ops {}",
                m.label, m.total, m.claim_processing, m.unit_processing, m.probes_deployment, m.bridge_op_count
            );
        }
    }
    println!("wrote {} and {}", json.display(), csv.display());
    Ok(())
}
