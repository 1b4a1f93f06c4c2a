use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fieldflow_cli::checks;
use fieldflow_cli::config::{ScenarioConfig, StudyAxis};
use fieldflow_cli::error::CliError;
use fieldflow_cli::output::run_scenario;
use fieldflow_cli::study::{convergence_study, STUDY_FILE};

/// Run field-theory scenarios, refinement studies and the invariant suite.
#[derive(Debug, Parser)]
#[command(name = "fieldflow", version)]
struct Args {
    /// Scenario configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "fieldflow-out")]
    out: PathBuf,
    /// Comma-separated refinement levels; runs a convergence study.
    #[arg(long, value_delimiter = ',', value_name = "N,N,N")]
    levels: Option<Vec<usize>>,
    /// Refined quantity of a study: `h` or `dt`.
    #[arg(long)]
    axis: Option<StudyAxis>,
    /// Run the invariant suite instead of a scenario.
    #[arg(long)]
    check: bool,
    /// Overrides the seed of the configuration or of the suite.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(args: Args) -> Result<(), CliError> {
    if args.check {
        let seed = args.seed.unwrap_or(0);
        let outcomes = checks::run_all(seed);
        for o in &outcomes {
            println!("{o}");
        }
        let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name.to_string()).collect();
        return if failed.is_empty() { Ok(()) } else { Err(CliError::ChecksFailed(failed)) };
    }

    let path = args.config.ok_or_else(|| CliError::config("--config is required unless --check is given"))?;
    let mut cfg = ScenarioConfig::load(&path)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }

    let study = cfg.study.as_ref();
    let levels = args.levels.or_else(|| study.map(|s| s.levels.clone()));
    let axis = args.axis.or_else(|| study.map(|s| s.axis));
    match (levels, axis) {
        (Some(levels), Some(axis)) => {
            let report = convergence_study(&cfg, axis, &levels, None)?;
            std::fs::create_dir_all(&args.out)
                .map_err(|source| CliError::Write { path: args.out.clone(), source })?;
            report.write_csv(&args.out.join(STUDY_FILE))?;
            for line in &report.lines {
                let slope = line.slope.map_or("exact".to_string(), |s| format!("{s:.3}"));
                println!(
                    "{:<18} slope {:>7}  target {}  {}",
                    line.diagnostic.name(),
                    slope,
                    line.diagnostic.target(),
                    if line.passed { "ok" } else { "MISSED" }
                );
            }
            report.verdict()
        }
        (Some(_), None) => Err(CliError::config("--levels needs --axis (or a [study] block)")),
        (None, Some(_)) => Err(CliError::config("--axis needs --levels (or a [study] block)")),
        (None, None) => {
            let result = run_scenario(&cfg, &args.out)?;
            let s = &result.summary;
            println!(
                "{}: {} rows, energy {:.12e} -> {:.12e}, max balance residual {:.3e}",
                cfg.scenario.name(),
                result.rows.len(),
                s.energy_initial,
                s.energy_final,
                s.balance
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
