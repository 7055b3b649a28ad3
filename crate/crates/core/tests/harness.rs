mod common;

use std::process::Command;

use bw_consensus::checkers::Status;
use bw_consensus::harness::{
    explore_exhaustive, outcome, parse_scenario, read_trace, run_once, sweep, verify_trace, write_trace,
    ExploreConfig, ExploreError, Mix, ScenarioFileError,
};
use bw_consensus::netsim::{ScenarioError, Trace};
use common::{scenario, scenario_path};

const HEADER: &str = "[system]\nn = 4\nt = 1\n[values]\ndefault = \"a\"\n";

#[test]
fn every_sample_scenario_loads() {
    for name in [
        "favorable",
        "bisource",
        "winning",
        "mixed",
        "split_coordinator",
        "delayer",
        "crash_small",
        "mutated_split",
    ] {
        scenario(name);
    }
}

#[test]
fn too_many_byzantine_processes_are_rejected() {
    let text = format!("{HEADER}[byzantine]\np1 = \"Mute\"\np2 = \"Mute\"\n");
    let err = parse_scenario(&text, "x").unwrap_err();
    assert!(matches!(
        err,
        ScenarioFileError::Invalid(ScenarioError::TooManyByzantine { count: 2, t: 1 })
    ));
}

#[test]
fn overlapping_bw_sets_are_rejected() {
    let text = format!("{HEADER}[bw]\npivot = \"p1\"\ny = [\"p2\"]\nz = [\"p2\"]\n");
    let err = parse_scenario(&text, "x").unwrap_err();
    assert!(matches!(err, ScenarioFileError::Invalid(ScenarioError::BwOverlap)), "{err}");
}

#[test]
fn unknown_fields_and_strategies_are_rejected() {
    assert!(matches!(
        parse_scenario(&format!("colour = \"red\"\n{HEADER}"), "x"),
        Err(ScenarioFileError::Parse(_))
    ));
    assert!(parse_scenario(&format!("{HEADER}[byzantine]\np1 = \"Teleporter\"\n"), "x").is_err());
}

#[test]
fn persisted_trace_verifies_like_the_live_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.trace");
    let s = scenario("bisource");
    let (report, trace) = run_once(&s, s.seed, Some(&path)).unwrap();
    assert_eq!(read_trace(&path).unwrap(), trace);
    assert_eq!(verify_trace(&path).unwrap(), report.verdicts);
}

#[test]
fn truncated_trace_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("favorable");
    let (_, trace) = run_once(&s, 0, None).unwrap();
    let text = trace.to_text();
    let cut: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
    let path = dir.path().join("cut.trace");
    std::fs::write(&path, cut).unwrap();
    assert!(verify_trace(&path).is_err());
}

#[test]
fn injected_second_decision_fails_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("favorable");
    let (_, mut trace) = run_once(&s, 0, None).unwrap();
    let mut extra = trace
        .records
        .iter()
        .find(|r| r.actor.index() == 2 && r.kind == bw_consensus::netsim::RecordKind::Decide)
        .unwrap()
        .clone();
    extra.value = Some(bw_consensus::model::Value::proposal("other").short_digest());
    trace.records.push(extra);
    let path = dir.path().join("bad.trace");
    write_trace(&path, &trace).unwrap();
    let verdicts = verify_trace(&path).unwrap();
    let agreement = verdicts.iter().find(|v| v.property == "agreement").unwrap();
    assert_eq!(agreement.status, Status::Fail);
    assert_eq!(agreement.witness, Some(trace.records.len() - 1));
}

#[test]
fn strict_explorer_refuses_active_adversaries() {
    let s = scenario("bisource");
    assert!(matches!(
        explore_exhaustive(&s, ExploreConfig::default()),
        Err(ExploreError::Unsupported(_))
    ));
}

#[test]
fn explorer_stops_at_its_state_budget() {
    let s = scenario("crash_small");
    let config = ExploreConfig {
        state_budget: 50,
        ..ExploreConfig::default()
    };
    assert!(matches!(
        explore_exhaustive(&s, config),
        Err(ExploreError::BudgetExceeded { .. })
    ));
}

#[test]
fn explored_outcomes_cover_simulated_outcomes() {
    let mut s = scenario("crash_small");
    s.max_rounds = 2;
    let report = explore_exhaustive(&s, ExploreConfig::default()).unwrap();
    assert!(report.passed());
    assert!(report.schedules > 1);
    let mut template = s.clone();
    template.default_link = bw_consensus::netsim::LinkModel::ASYNC;
    let runs = sweep(&template, 0..40, Mix::None).unwrap();
    for seed in 0..40 {
        let (_, trace): (_, Trace) = run_once(&template, seed, None).unwrap();
        assert!(report.outcomes.contains(&outcome(&trace)), "seed {seed}: {:?}", outcome(&trace));
    }
    assert!(runs.passed());
}

#[test]
fn sweep_is_reproducible() {
    let s = scenario("favorable");
    let x = sweep(&s, 0..12, Mix::Adversarial).unwrap();
    let y = sweep(&s, 0..12, Mix::Adversarial).unwrap();
    assert_eq!(x.lines().lines().count(), y.lines().lines().count());
    for (l, r) in x.runs.iter().zip(&y.runs) {
        assert_eq!((l.seed, &l.scenario, &l.decisions, l.events), (r.seed, &r.scenario, &r.decisions, r.events));
    }
    assert_eq!(Mix::Bw.scenarios(&s, 3).len(), 3);
}

fn bwc(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_bwc")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned())
}

#[test]
fn cli_exit_codes() {
    let path = |name: &str| scenario_path(name).display().to_string();
    let (code, out) = bwc(&["run", &path("favorable")]);
    assert_eq!(code, 0);
    assert!(out.starts_with("run\tfavorable\t"));
    assert_eq!(bwc(&["run", &path("too_few")]).0, 2);
    assert_eq!(bwc(&["sweep", &path("favorable"), "--seeds", "0..5", "--mix", "validity"]).0, 0);
    let (code, out) = bwc(&["explore", &path("crash_small"), "--max-rounds", "1"]);
    assert_eq!(code, 0);
    assert!(out.contains("violations=0"));

    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.trace").display().to_string();
    assert_eq!(bwc(&["run", &path("winning"), "--trace-out", &trace]).0, 0);
    let (code, out) = bwc(&["verify", &trace]);
    assert_eq!(code, 0);
    assert!(out.lines().all(|l| l.starts_with("check\t")));
}
