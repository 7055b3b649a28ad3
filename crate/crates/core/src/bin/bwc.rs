use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bw_consensus::harness::{
    explore_exhaustive, load_scenario, run_once, sweep, verify_trace, write_trace, ExploreConfig, ExploreError, Mix,
};
use bw_consensus::netsim::Scenario;

#[derive(Parser)]
#[command(name = "bwc", version, about = "Simulate, sweep, explore and verify consensus runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and check the resulting trace.
    Run {
        file: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[arg(long)]
        summary: bool,
    },
    /// Run a family of scenarios derived from a template.
    Sweep {
        file: PathBuf,
        /// Half-open seed range such as 0..1000.
        #[arg(long, value_parser = parse_range)]
        seeds: Range<u64>,
        #[arg(long, default_value = "none", value_parser = parse_mix)]
        mix: Mix,
        #[arg(long)]
        summary: bool,
    },
    /// Enumerate every schedule of a tiny scenario.
    Explore {
        file: PathBuf,
        #[arg(long, default_value_t = 2)]
        max_rounds: u32,
        #[arg(long, default_value_t = ExploreConfig::default().state_budget)]
        state_budget: u64,
        /// Lift the size and adversary preconditions.
        #[arg(long)]
        unrestricted: bool,
        /// Where to write the first violating schedule's trace.
        #[arg(long)]
        witness_out: Option<PathBuf>,
        #[arg(long)]
        summary: bool,
    },
    /// Re-check a trace file.
    Verify {
        trace: PathBuf,
        #[arg(long)]
        summary: bool,
    },
}

fn parse_range(s: &str) -> Result<Range<u64>, String> {
    let (a, b) = s.split_once("..").ok_or("expected A..B")?;
    let a: u64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if a >= b {
        return Err(format!("empty range {s}"));
    }
    Ok(a..b)
}

fn parse_mix(s: &str) -> Result<Mix, String> {
    Mix::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Mix::ALL.iter().map(|m| m.name()).collect();
        format!("unknown mix `{s}`, expected one of {}", names.join(", "))
    })
}

const USAGE: u8 = 2;

fn load(path: &Path) -> Result<Scenario, ExitCode> {
    load_scenario(path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::from(USAGE)
    })
}

fn verdict_code(passed: bool) -> ExitCode {
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(code) | Err(code) => code,
    }
}

fn execute(command: Command) -> Result<ExitCode, ExitCode> {
    let fail = |e: &dyn std::fmt::Display| {
        eprintln!("error: {e}");
        ExitCode::from(USAGE)
    };
    match command {
        Command::Run {
            file,
            seed,
            trace_out,
            summary,
        } => {
            let scenario = load(&file)?;
            let seed = seed.unwrap_or(scenario.seed);
            let (report, _) = run_once(&scenario, seed, trace_out.as_deref()).map_err(|e| fail(&e))?;
            print!("{}", if summary { report.summary() } else { report.lines() });
            Ok(verdict_code(report.passed()))
        }
        Command::Sweep {
            file,
            seeds,
            mix,
            summary,
        } => {
            let scenario = load(&file)?;
            let report = sweep(&scenario, seeds, mix).map_err(|e| fail(&e))?;
            print!("{}", if summary { report.summary() } else { report.lines() });
            Ok(verdict_code(report.passed()))
        }
        Command::Explore {
            file,
            max_rounds,
            state_budget,
            unrestricted,
            witness_out,
            summary,
        } => {
            let scenario = load(&file)?;
            let config = ExploreConfig {
                max_rounds,
                state_budget,
                strict: !unrestricted,
            };
            let report = match explore_exhaustive(&scenario, config) {
                Ok(r) => r,
                Err(e @ ExploreError::BudgetExceeded { .. }) => {
                    eprintln!("error: {e}");
                    return Err(ExitCode::from(1));
                }
                Err(e) => return Err(fail(&e)),
            };
            if let (Some(path), Some(v)) = (&witness_out, report.violations.first()) {
                write_trace(path, &v.trace).map_err(|e| fail(&e))?;
            }
            if summary {
                println!(
                    "{}: {} schedules, {} states, {} leaves, {} violations",
                    scenario.name, report.schedules, report.states, report.leaves, report.violation_count
                );
                for v in &report.violations {
                    println!("  {:<18} {}", v.property, v.explanation);
                }
            } else {
                println!(
                    "explore\t{}\tmax_rounds={max_rounds}\tschedules={}\tstates={}\tleaves={}\tviolations={}",
                    scenario.name, report.schedules, report.states, report.leaves, report.violation_count
                );
                for v in &report.violations {
                    println!("violation\t{}\t{}", v.property, v.explanation);
                }
            }
            Ok(verdict_code(report.passed()))
        }
        Command::Verify { trace, summary } => {
            let verdicts = verify_trace(&trace).map_err(|e| fail(&e))?;
            for v in &verdicts {
                if summary {
                    println!("{:<18} {:<12} {}", v.property, v.status.label(), v.explanation);
                } else {
                    println!("check\t{v}");
                }
            }
            Ok(verdict_code(!verdicts.iter().any(|v| v.status.is_failure())))
        }
    }
}
