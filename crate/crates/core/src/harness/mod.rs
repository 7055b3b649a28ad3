//! Scenario loading, single runs, sweeps, exhaustive exploration and trace
//! verification.
//!
//! Reports are line-delimited and tab-separated. A run report is one `run`
//! line followed by one `check` line per verdict; wall-clock time is kept
//! out of the lines so that equal runs print equal reports.

mod explore;
mod scenario_file;
mod sweep;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use thiserror::Error;

pub use explore::{explore_exhaustive, outcome, ExploreConfig, ExploreError, ExploreReport, Violation, MAX_REPORTED};
pub use scenario_file::{load_scenario, parse_scenario, ScenarioFileError};
pub use sweep::{sweep, Mix, SweepReport};

use crate::checkers::{check_all, measure_complexity, Verdict};
use crate::model::ProcessId;
use crate::netsim::{Scenario, ScenarioError, Simulation, Trace, TraceError, DEFAULT_EVENT_BUDGET};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    File(#[from] ScenarioFileError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    /// Value digest decided by each correct process that decided.
    pub decisions: BTreeMap<ProcessId, String>,
    pub rounds: BTreeMap<ProcessId, u32>,
    pub steps: Option<u32>,
    pub hops: Option<u32>,
    pub messages: usize,
    pub messages_per_step: BTreeMap<u32, usize>,
    pub events: u64,
    pub budget_exhausted: bool,
    pub verdicts: Vec<Verdict>,
    pub wall_clock: Duration,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        !self.verdicts.iter().any(|v| v.status.is_failure())
    }

    pub fn verdict(&self, property: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.property == property)
    }

    pub fn lines(&self) -> String {
        let opt = |x: Option<u32>| x.map_or_else(|| "-".to_string(), |v| v.to_string());
        let join = |m: Vec<String>| if m.is_empty() { "-".to_string() } else { m.join(",") };
        let mut s = String::new();
        write!(
            s,
            "run\t{}\tseed={}\t{}\tsteps={}\thops={}\tmessages={}\tevents={}\tdecisions={}\trounds={}",
            self.scenario,
            self.seed,
            if self.passed() { "pass" } else { "fail" },
            opt(self.steps),
            opt(self.hops),
            self.messages,
            self.events,
            join(self.decisions.iter().map(|(p, d)| format!("{p}:{d}")).collect()),
            join(self.rounds.iter().map(|(p, r)| format!("{p}:{r}")).collect()),
        )
        .unwrap();
        if self.budget_exhausted {
            s.push_str("\tevent-budget-exhausted");
        }
        s.push('\n');
        for v in &self.verdicts {
            writeln!(s, "check\t{v}").unwrap();
        }
        s
    }

    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "{} (seed {}): {} in {:.1?}",
            self.scenario,
            self.seed,
            if self.passed() { "PASS" } else { "FAIL" },
            self.wall_clock
        )
        .unwrap();
        writeln!(
            s,
            "  steps to first decision: {}   message hops: {}   messages: {}",
            self.steps.map_or("-".into(), |v| v.to_string()),
            self.hops.map_or("-".into(), |v| v.to_string()),
            self.messages
        )
        .unwrap();
        for (p, r) in &self.rounds {
            writeln!(s, "  {p} decided {} in round {r}", self.decisions[p]).unwrap();
        }
        for v in &self.verdicts {
            writeln!(s, "  {:<18} {:<12} {}", v.property, v.status.label(), v.explanation).unwrap();
        }
        s
    }
}

/// Runs `scenario` under `seed`, checks the trace, and writes it to
/// `trace_out` if given.
pub fn run_once(scenario: &Scenario, seed: u64, trace_out: Option<&Path>) -> Result<(RunReport, Trace), HarnessError> {
    let started = Instant::now();
    let mut scenario = scenario.clone();
    scenario.seed = seed;
    let outcome = Simulation::new(scenario.clone())?.run(DEFAULT_EVENT_BUDGET);
    if let Some(path) = trace_out {
        write_trace(path, &outcome.trace)?;
    }
    let mut report = report_for(&scenario.name, seed, &outcome.trace);
    report.events = outcome.events;
    report.budget_exhausted = outcome.budget_exhausted;
    report.wall_clock = started.elapsed();
    Ok((report, outcome.trace))
}

fn report_for(name: &str, seed: u64, trace: &Trace) -> RunReport {
    let complexity = measure_complexity(trace);
    let decisions = trace
        .records
        .iter()
        .filter(|r| r.kind == crate::netsim::RecordKind::Decide && trace.header.is_correct(r.actor))
        .filter_map(|r| Some((r.actor, r.value.clone()?)))
        .collect();
    RunReport {
        scenario: name.to_string(),
        seed,
        decisions,
        rounds: complexity.decision_rounds,
        steps: complexity.steps_to_first_decision,
        hops: complexity.hops_to_first_decision,
        messages: complexity.total_messages,
        messages_per_step: complexity.messages_per_step,
        events: 0,
        budget_exhausted: false,
        verdicts: check_all(trace),
        wall_clock: Duration::ZERO,
    }
}

pub fn write_trace(path: &Path, trace: &Trace) -> Result<(), HarnessError> {
    std::fs::write(path, trace.to_text()).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_trace(path: &Path) -> Result<Trace, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(Trace::parse(&text)?)
}

/// Re-checks a persisted trace without simulating anything.
pub fn verify_trace(path: &Path) -> Result<Vec<Verdict>, HarnessError> {
    Ok(check_all(&read_trace(path)?))
}
