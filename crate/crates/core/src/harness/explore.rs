//! Exhaustive schedule exploration for tiny systems.
//!
//! Starting from the state after every process has started, the explorer
//! enumerates every order in which pending messages can be delivered and
//! armed timers can fire. Time plays no role: any timer may fire before any
//! delivery. Global states are memoized, so schedules that reach the same
//! state are explored once; the schedule count is the number of distinct
//! paths through the resulting state graph.
//!
//! Three reductions keep the space small without losing outcomes:
//! - a message for a collection a correct process has already completed,
//!   or for any process that has decided, halted or never acts, is dropped,
//!   since it cannot change anything;
//! - a phase message for a collection the receiver is not waiting on yet is
//!   deferred until it is. Buffering produces no output, and any quorum the
//!   early delivery would have selected is selected by delivering the same
//!   messages later in the same order;
//! - when exactly n−t processes ever send (every other process is silent
//!   and nobody equivocates), every quorum is forced. A delivery that only
//!   buffers then commutes with every other step of its receiver and with
//!   all steps of other processes, so it is taken alone without branching.
//!
//! The schedule count is therefore a count of schedules up to these
//! equivalences, not of raw interleavings.
//!
//! Memoized states ignore each daemon's duplicate memory, which only
//! matters for exact re-deliveries, and include the safety log, so every
//! state's set of reachable verdicts is determined by its key.

use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::adversary::Strategy;
use crate::auth::{Digest, MsgKind, SignedMessage};
use crate::checkers::{check_agreement, check_unforgeability, check_unique_certified, check_validity, Status};
use crate::engine::{Event, Phase, TimerHandle};
use crate::model::ProcessId;
use crate::netsim::{Effect, Input, Record, RecordKind, Scenario, ScenarioError, Trace, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExploreConfig {
    /// Round budget; processes halt instead of starting a later round.
    pub max_rounds: u32,
    /// Maximum number of distinct states to visit.
    pub state_budget: u64,
    /// Enforce the small-scale preconditions (n ≤ 4, at most two rounds,
    /// crash-like adversaries only).
    pub strict: bool,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            max_rounds: 2,
            state_budget: 5_000_000,
            strict: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Violation {
    pub property: &'static str,
    pub explanation: String,
    pub trace: Trace,
}

#[derive(Debug, Clone, Default)]
pub struct ExploreReport {
    /// Complete schedules covered.
    pub schedules: u128,
    pub states: u64,
    pub leaves: u64,
    /// At most [`MAX_REPORTED`] violations, each with its witness trace.
    pub violations: Vec<Violation>,
    pub violation_count: u64,
    /// Distinct end results: the value digest each correct process decided,
    /// `None` for processes that never decided.
    pub outcomes: BTreeSet<Vec<(ProcessId, Option<String>)>>,
}

pub const MAX_REPORTED: usize = 8;

impl ExploreReport {
    pub fn passed(&self) -> bool {
        self.violation_count == 0
    }
}

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("exhaustive exploration does not support this scenario: {0}")]
    Unsupported(String),
    #[error("state-space budget exceeded after {states} states ({leaves} leaves checked)")]
    BudgetExceeded { states: u64, leaves: u64 },
}

#[derive(Debug, Clone)]
enum Item {
    Deliver { to: ProcessId, message: SignedMessage },
    Timer { at: ProcessId, handle: TimerHandle },
}

impl Item {
    fn sort_key(&self) -> (u8, u32, [u8; 32], u32) {
        match self {
            Item::Deliver { to, message } => (0, to.index() as u32, *message.digest().as_bytes(), 0),
            Item::Timer { at, handle } => (1, at.index() as u32, [0; 32], handle.0),
        }
    }
}

/// Records of one path, shared between states.
struct Link {
    record: Record,
    prev: Option<Rc<Link>>,
}

#[derive(Clone)]
struct State {
    world: World,
    pending: Vec<Item>,
    trace: Option<Rc<Link>>,
    depth: u64,
}

struct Explorer<'a> {
    scenario: &'a Scenario,
    silent: Vec<bool>,
    /// Every collection's quorum is all the processes that ever send, so
    /// the order in which a quorum fills up cannot matter.
    forced_quorums: bool,
}

pub fn explore_exhaustive(scenario: &Scenario, config: ExploreConfig) -> Result<ExploreReport, ExploreError> {
    scenario.validate()?;
    if config.strict {
        if scenario.params.n() > 4 {
            return Err(ExploreError::Unsupported(format!("n={} > 4", scenario.params.n())));
        }
        if config.max_rounds > 2 {
            return Err(ExploreError::Unsupported(format!(
                "round budget {} > 2",
                config.max_rounds
            )));
        }
        if let Some((p, s)) = scenario.byzantine.iter().find(|(_, s)| !s.is_crash_like()) {
            return Err(ExploreError::Unsupported(format!("{p} runs {s}, which is not crash-like")));
        }
    }
    let mut scenario = scenario.clone();
    scenario.max_rounds = config.max_rounds;
    let explorer = Explorer {
        silent: ProcessId::all(scenario.params)
            .map(|p| {
                matches!(
                    scenario.byzantine.get(&p),
                    Some(Strategy::Mute | Strategy::Crash { after: 0 })
                )
            })
            .collect(),
        forced_quorums: false,
        scenario: &scenario,
    };
    let active = explorer.silent.iter().filter(|s| !**s).count();
    let explorer = Explorer {
        forced_quorums: active <= scenario.params.quorum()
            && scenario.byzantine.values().all(Strategy::is_crash_like),
        ..explorer
    };
    explorer.run(config)
}

impl Explorer<'_> {
    fn run(&self, config: ExploreConfig) -> Result<ExploreReport, ExploreError> {
        let mut report = ExploreReport::default();
        let root = self.initial(config.max_rounds);
        if config.max_rounds == 0 {
            self.check_leaf(&root, &mut report);
            report.schedules = 1;
            report.states = 1;
            return Ok(report);
        }

        struct Frame {
            key: Digest,
            state: State,
            choices: Vec<usize>,
            next: usize,
            paths: u128,
        }

        let mut memo: HashMap<Digest, u128> = HashMap::new();
        let root_choices = self.enabled(&root);
        report.states = 1;
        if root_choices.is_empty() {
            self.check_leaf(&root, &mut report);
            report.schedules = 1;
            return Ok(report);
        }
        let mut stack = vec![Frame {
            key: self.key(&root),
            state: root,
            choices: root_choices,
            next: 0,
            paths: 0,
        }];
        while let Some(top) = stack.last_mut() {
            if top.next < top.choices.len() {
                let choice = top.choices[top.next];
                top.next += 1;
                let child = self.step(&top.state, choice);
                let key = self.key(&child);
                if let Some(&paths) = memo.get(&key) {
                    top.paths = top.paths.saturating_add(paths);
                    continue;
                }
                report.states += 1;
                if report.states > config.state_budget {
                    return Err(ExploreError::BudgetExceeded {
                        states: report.states - 1,
                        leaves: report.leaves,
                    });
                }
                let choices = self.enabled(&child);
                if choices.is_empty() {
                    self.check_leaf(&child, &mut report);
                    memo.insert(key, 1);
                    top.paths = top.paths.saturating_add(1);
                } else {
                    stack.push(Frame {
                        key,
                        state: child,
                        choices,
                        next: 0,
                        paths: 0,
                    });
                }
            } else {
                let done = stack.pop().expect("loop guard");
                memo.insert(done.key, done.paths);
                match stack.last_mut() {
                    Some(parent) => parent.paths = parent.paths.saturating_add(done.paths),
                    None => report.schedules = done.paths,
                }
            }
        }
        Ok(report)
    }

    fn initial(&self, max_rounds: u32) -> State {
        let keyring = self.scenario.keyring();
        let mut options = self.scenario.engine_options();
        options.max_rounds = Some(max_rounds);
        let mut state = State {
            world: World::new(self.scenario.params, &keyring, options, &self.scenario.byzantine),
            pending: Vec::new(),
            trace: None,
            depth: 0,
        };
        if max_rounds == 0 {
            return state;
        }
        for p in ProcessId::all(self.scenario.params) {
            let v = self.scenario.values[&p].clone();
            self.apply(&mut state, p, Input::Start(v));
        }
        self.normalize(&mut state);
        state
    }

    fn apply(&self, state: &mut State, at: ProcessId, input: Input) {
        let mut effects = Vec::new();
        let mut records = Vec::new();
        state.world.apply(state.depth, at, input, &mut effects, &mut records);
        for record in records {
            state.trace = Some(Rc::new(Link {
                record,
                prev: state.trace.take(),
            }));
        }
        for effect in effects {
            match effect {
                Effect::Send(out) => state.pending.push(Item::Deliver {
                    to: out.to,
                    message: out.message,
                }),
                Effect::SetTimer { at, handle, .. } => state.pending.push(Item::Timer { at, handle }),
                Effect::CancelTimer { at, handle } => state
                    .pending
                    .retain(|i| !matches!(i, Item::Timer { at: a, handle: h } if *a == at && *h == handle)),
            }
        }
    }

    fn step(&self, state: &State, choice: usize) -> State {
        let mut next = state.clone();
        next.depth += 1;
        let item = next.pending.remove(choice);
        match item {
            Item::Deliver { to, message } => self.apply(&mut next, to, Input::Deliver(message)),
            Item::Timer { at, handle } => self.apply(&mut next, at, Input::Timer(handle)),
        }
        self.normalize(&mut next);
        next
    }

    /// Drops items that can no longer matter and sorts the rest.
    fn normalize(&self, state: &mut State) {
        let world = &state.world;
        state.pending.retain(|item| self.relevance(world, item) != Relevance::Never);
        state.pending.sort_by_key(Item::sort_key);
    }

    fn enabled(&self, state: &State) -> Vec<usize> {
        let now: Vec<usize> = (0..state.pending.len())
            .filter(|&i| self.relevance(&state.world, &state.pending[i]) == Relevance::Now)
            .collect();
        if self.forced_quorums {
            if let Some(&i) = now.iter().find(|&&i| buffers_only(&state.world, &state.pending[i])) {
                return vec![i];
            }
        }
        now
    }

    fn relevance(&self, world: &World, item: &Item) -> Relevance {
        let (p, timer) = match item {
            Item::Deliver { to, .. } => (*to, None),
            Item::Timer { at, handle } => (*at, Some(*handle)),
        };
        if self.silent[p.slot()] {
            return Relevance::Never;
        }
        let Some(engine) = world.engine(p) else {
            return Relevance::Now;
        };
        if matches!(engine.phase(), Phase::Decided | Phase::Halted) {
            return Relevance::Never;
        }
        if let Some(handle) = timer {
            let current = engine.current_round().map_or(0, |r| r.get());
            return if engine.phase() == Phase::Phase1 && current == handle.0 && !engine.timer_fired() {
                Relevance::Now
            } else {
                Relevance::Never
            };
        }
        let Item::Deliver { message, .. } = item else {
            unreachable!("timers handled above")
        };
        let kind = message.kind();
        if matches!(kind, MsgKind::Query | MsgKind::Dec) {
            return Relevance::Now;
        }
        let round = message.round().map_or(0, |r| r.get());
        if engine.is_past(round, kind) {
            Relevance::Never
        } else if engine.awaiting() == Some((round, kind)) {
            Relevance::Now
        } else {
            Relevance::Later
        }
    }

    fn key(&self, state: &State) -> Digest {
        let mut h = Sha256::new();
        h.update(state.world.state_digest().as_bytes());
        for item in &state.pending {
            let (tag, p, d, r) = item.sort_key();
            h.update([tag]);
            h.update(p.to_be_bytes());
            h.update(d);
            h.update(r.to_be_bytes());
        }
        Digest::of(&h.finalize())
    }

    fn check_leaf(&self, state: &State, report: &mut ExploreReport) {
        report.leaves += 1;
        let mut records = Vec::new();
        let mut link = state.trace.as_ref();
        while let Some(l) = link {
            records.push(l.record.clone());
            link = l.prev.as_ref();
        }
        records.reverse();
        let mut header = self.scenario.trace_header();
        header.max_rounds = self.scenario.max_rounds;
        let trace = Trace { header, records };
        report.outcomes.insert(outcome(&trace));
        for verdict in [
            check_agreement(&trace),
            check_validity(&trace),
            check_unique_certified(&trace),
            check_unforgeability(&trace),
        ] {
            if verdict.status == Status::Fail {
                report.violation_count += 1;
                if report.violations.len() < MAX_REPORTED {
                    report.violations.push(Violation {
                        property: verdict.property,
                        explanation: verdict.explanation,
                        trace: trace.clone(),
                    });
                }
            }
        }
    }
}

/// Decision of every correct process in a finished trace.
pub fn outcome(trace: &Trace) -> Vec<(ProcessId, Option<String>)> {
    trace
        .header
        .correct()
        .map(|p| {
            let decided = trace
                .records
                .iter()
                .find(|r| r.kind == RecordKind::Decide && r.actor == p)
                .and_then(|r| r.value.clone());
            (p, decided)
        })
        .collect()
}

/// Whether delivering `item` only adds a message to a quorum that is not
/// yet full. With forced quorums such a delivery commutes with everything
/// else the receiver can do, so one order suffices.
fn buffers_only(world: &World, item: &Item) -> bool {
    let Item::Deliver { to, message } = item else {
        return false;
    };
    if matches!(message.kind(), MsgKind::Query | MsgKind::Dec) {
        return false;
    }
    let Some(engine) = world.engine(*to) else {
        return false;
    };
    let mut probe = engine.clone();
    let before = (probe.phase(), probe.current_round());
    matches!(probe.step(Event::MessageDelivery(message.clone())), Ok(actions) if actions.is_empty())
        && (probe.phase(), probe.current_round()) == before
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Relevance {
    Now,
    Later,
    Never,
}
