use std::path::PathBuf;
use std::process::ExitCode;

use adaptive_mpc_cli::{run, validate_scenario, ControllerChoice, RunConfig, Scenario};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(version, about = "Adaptive MPC experiments on the three-tank benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-loop simulation; writes `<name>_<controller>.csv` and an audit JSON.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        controller: ControllerChoice,
        /// Overrides the scenario's step count.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the scenario's noise seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Exit with status 2 if the adaptive run breaks an invariant.
        #[arg(long)]
        audit: bool,
        /// Steps between nestedness and cost checks.
        #[arg(long, default_value_t = 25)]
        audit_stride: usize,
    },
    /// Check that the truth parameters respect the prior and rate bounds.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
        /// Print the per-step margins too.
        #[arg(long)]
        verbose: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            scenario,
            controller,
            steps,
            out,
            seed,
            audit,
            audit_stride,
        } => {
            let cfg = RunConfig {
                scenario,
                controller,
                steps,
                out_dir: out,
                seed,
                audit,
                audit_stride,
            };
            run(&cfg).map(|(reports, code)| {
                for r in &reports {
                    println!(
                        "{:?}: {}/{} steps, {} output-violation steps, {:.2} ms/step (max {:.2}){}",
                        r.controller,
                        r.steps_completed,
                        r.steps_requested,
                        r.output_violation_steps,
                        r.wall.mean_step_ms,
                        r.wall.max_step_ms,
                        r.error.as_ref().map(|e| format!(", stopped: {e}")).unwrap_or_default()
                    );
                }
                code
            })
        }
        Command::Validate { scenario, verbose } => Scenario::load(&scenario)
            .and_then(|s| validate_scenario(&s))
            .map(|mut report| {
                if !verbose {
                    report.margins.clear();
                }
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
                if report.passed {
                    0
                } else {
                    1
                }
            }),
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
