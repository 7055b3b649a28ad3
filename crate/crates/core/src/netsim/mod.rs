//! Deterministic discrete-event network.
//!
//! Time is an integer tick count. Processes compute in zero time; only
//! message latency and timers advance the clock. Links are reliable: every
//! message is delivered exactly once, after a delay chosen by its link
//! class. Simultaneous events run in the order they were scheduled.
//!
//! Timely links deliver within their bound once stabilized. Winning links
//! constrain order, not latency: after stabilization the pivot's RESPONSE to
//! a winning neighbour's query is always among the first n−t responses that
//! neighbour receives. The simulator enforces this by holding back other
//! responses until the pivot's has arrived.

mod trace;
mod world;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use trace::{bottom_digest, Record, RecordKind, Trace, TraceError, TraceHeader};
pub use world::{Effect, Input, Node, Outgoing, SafetyLog, World};

use crate::adversary::Strategy;
use crate::auth::{Keyring, MsgKind, Rules, SignedMessage};
use crate::engine::{EngineOptions, TimerHandle};
use crate::model::{ModelError, ProcessId, SystemParams, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkClass {
    Asynchronous,
    Timely,
    Winning,
}

impl LinkClass {
    pub fn parse(s: &str) -> Option<LinkClass> {
        match s.to_ascii_lowercase().as_str() {
            "async" | "asynchronous" => Some(LinkClass::Asynchronous),
            "timely" => Some(LinkClass::Timely),
            "winning" => Some(LinkClass::Winning),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkModel {
    pub class: LinkClass,
    /// Delivery bound for timely links.
    pub delta_bound: u64,
    /// Time from which the class's guarantee holds; before it the link
    /// behaves asynchronously.
    pub stabilization: u64,
}

impl LinkModel {
    pub const ASYNC: LinkModel = LinkModel {
        class: LinkClass::Asynchronous,
        delta_bound: 1,
        stabilization: 0,
    };

    pub fn timely(delta_bound: u64, stabilization: u64) -> Self {
        LinkModel {
            class: LinkClass::Timely,
            delta_bound,
            stabilization,
        }
    }

    pub fn winning(stabilization: u64) -> Self {
        LinkModel {
            class: LinkClass::Winning,
            delta_bound: 1,
            stabilization,
        }
    }
}

/// Delay range for asynchronous deliveries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AsyncDelays {
    pub min: u64,
    pub max: u64,
    /// When set, the upper bound grows by one every `drift_every` ticks.
    pub drift_every: Option<u64>,
}

impl Default for AsyncDelays {
    fn default() -> Self {
        AsyncDelays {
            min: 1,
            max: 8,
            drift_every: None,
        }
    }
}

impl AsyncDelays {
    pub fn upper_at(&self, now: u64) -> u64 {
        self.max + self.drift_every.map_or(0, |k| now / k.max(1))
    }
}

/// The pivot and its privileged neighbours: `y` over timely links in both
/// directions, `z` receiving winning responses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BwAssignment {
    pub pivot: ProcessId,
    pub y: BTreeSet<ProcessId>,
    pub z: BTreeSet<ProcessId>,
    pub delta_bound: u64,
    pub stabilization: u64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub params: SystemParams,
    pub values: BTreeMap<ProcessId, Value>,
    pub byzantine: BTreeMap<ProcessId, Strategy>,
    pub default_link: LinkModel,
    pub overrides: BTreeMap<(ProcessId, ProcessId), LinkModel>,
    pub async_delays: AsyncDelays,
    pub bw: Option<BwAssignment>,
    pub seed: u64,
    pub max_rounds: u32,
    pub rules: Rules,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{count} Byzantine processes but t={t}")]
    TooManyByzantine { count: usize, t: usize },
    #[error("no initial value for {0}")]
    MissingValue(ProcessId),
    #[error("{0} is not a process of this system")]
    UnknownProcess(ProcessId),
    #[error("bw: Y and Z overlap")]
    BwOverlap,
    #[error("bw: pivot belongs to its own neighbour set")]
    BwPivotInSet,
    #[error("bw: |Y|+|Z| = {got}, expected {expected}")]
    BwSize { got: usize, expected: usize },
    #[error("bw: pivot {0} is Byzantine")]
    BwPivotByzantine(ProcessId),
    #[error("link {from}->{to} contradicts the bw assignment")]
    BwLinkConflict { from: ProcessId, to: ProcessId },
    #[error("invalid link setting: {0}")]
    BadLink(&'static str),
    #[error("max_rounds must be at least 1")]
    NoRounds,
}

impl Scenario {
    /// A scenario with every link timely (bound `delta_bound`, stable from
    /// time 0) and no faults.
    pub fn synchronous(params: SystemParams, values: Vec<Value>, delta_bound: u64) -> Self {
        Scenario {
            name: "synchronous".into(),
            params,
            values: ProcessId::all(params).zip(values).collect(),
            byzantine: BTreeMap::new(),
            default_link: LinkModel::timely(delta_bound, 0),
            overrides: BTreeMap::new(),
            async_delays: AsyncDelays::default(),
            bw: None,
            seed: 0,
            max_rounds: 4 * params.n() as u32,
            rules: Rules::default(),
        }
    }

    pub fn is_correct(&self, p: ProcessId) -> bool {
        !self.byzantine.contains_key(&p)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let params = SystemParams::new(self.params.n(), self.params.t())?;
        let in_range = |p: &ProcessId| {
            if p.index() >= 1 && p.index() <= params.n() {
                Ok(())
            } else {
                Err(ScenarioError::UnknownProcess(*p))
            }
        };
        if self.byzantine.len() > params.t() {
            return Err(ScenarioError::TooManyByzantine {
                count: self.byzantine.len(),
                t: params.t(),
            });
        }
        for p in self.byzantine.keys().chain(self.values.keys()) {
            in_range(p)?;
        }
        for p in ProcessId::all(params) {
            match self.values.get(&p) {
                Some(v) if !v.is_bottom() => {}
                _ => return Err(ScenarioError::MissingValue(p)),
            }
        }
        if self.max_rounds == 0 {
            return Err(ScenarioError::NoRounds);
        }
        if self.async_delays.min == 0 || self.async_delays.min > self.async_delays.max {
            return Err(ScenarioError::BadLink("async delays need 1 <= min <= max"));
        }
        for link in self.overrides.values().chain([&self.default_link]) {
            if link.delta_bound == 0 {
                return Err(ScenarioError::BadLink("timely bound must be at least 1"));
            }
        }
        for (from, to) in self.overrides.keys() {
            in_range(from)?;
            in_range(to)?;
        }
        if let Some(bw) = &self.bw {
            in_range(&bw.pivot)?;
            for p in bw.y.iter().chain(&bw.z) {
                in_range(p)?;
            }
            if !bw.y.is_disjoint(&bw.z) {
                return Err(ScenarioError::BwOverlap);
            }
            if bw.y.contains(&bw.pivot) || bw.z.contains(&bw.pivot) {
                return Err(ScenarioError::BwPivotInSet);
            }
            if bw.y.len() + bw.z.len() != 2 * params.t() {
                return Err(ScenarioError::BwSize {
                    got: bw.y.len() + bw.z.len(),
                    expected: 2 * params.t(),
                });
            }
            if !self.is_correct(bw.pivot) {
                return Err(ScenarioError::BwPivotByzantine(bw.pivot));
            }
            if bw.delta_bound == 0 {
                return Err(ScenarioError::BadLink("timely bound must be at least 1"));
            }
            for (&(from, to), link) in &self.overrides {
                if let Some(required) = self.bw_link(from, to) {
                    if link.class != required.class {
                        return Err(ScenarioError::BwLinkConflict { from, to });
                    }
                }
            }
        }
        Ok(())
    }

    fn bw_link(&self, from: ProcessId, to: ProcessId) -> Option<LinkModel> {
        let bw = self.bw.as_ref()?;
        if (from == bw.pivot && bw.y.contains(&to)) || (to == bw.pivot && bw.y.contains(&from)) {
            Some(LinkModel::timely(bw.delta_bound, bw.stabilization))
        } else if from == bw.pivot && bw.z.contains(&to) {
            Some(LinkModel::winning(bw.stabilization))
        } else {
            None
        }
    }

    /// The model governing messages from `from` to `to`.
    pub fn link(&self, from: ProcessId, to: ProcessId) -> LinkModel {
        self.bw_link(from, to)
            .or_else(|| self.overrides.get(&(from, to)).copied())
            .unwrap_or(self.default_link)
    }

    pub fn engine_options(&self) -> EngineOptions {
        EngineOptions {
            rules: self.rules,
            max_rounds: Some(self.max_rounds),
        }
    }

    pub fn keyring(&self) -> Keyring {
        Keyring::simulated(self.params.n(), self.seed)
    }

    pub fn trace_header(&self) -> TraceHeader {
        TraceHeader {
            n: self.params.n(),
            t: self.params.t(),
            seed: self.seed,
            byzantine: self.byzantine.keys().copied().collect(),
            proposals: self
                .values
                .iter()
                .map(|(p, v)| (*p, v.short_digest()))
                .collect(),
            bw_pivot: self.bw.as_ref().map(|b| b.pivot),
            max_rounds: self.max_rounds,
        }
    }
}

/// Upper bound on processed events; a run hitting it is reported, not
/// failed.
pub const DEFAULT_EVENT_BUDGET: u64 = 2_000_000;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: Trace,
    pub events: u64,
    pub end_time: u64,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone)]
enum Pending {
    Deliver {
        from: ProcessId,
        to: ProcessId,
        message: SignedMessage,
    },
    Timer {
        at: ProcessId,
        handle: TimerHandle,
    },
}

/// Response bookkeeping for one query by a winning neighbour of the pivot.
#[derive(Debug, Default)]
struct QueryBook {
    responders: BTreeSet<ProcessId>,
    pivot_in: bool,
    held: Vec<(ProcessId, SignedMessage)>,
}

pub struct Simulation {
    scenario: Scenario,
    world: World,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    pending: HashMap<u64, Pending>,
    seq: u64,
    now: u64,
    cancelled: HashSet<(ProcessId, TimerHandle)>,
    books: HashMap<(ProcessId, u32), QueryBook>,
    records: Vec<Record>,
    events: u64,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let keyring = scenario.keyring();
        let world = World::new(scenario.params, &keyring, scenario.engine_options(), &scenario.byzantine);
        Ok(Simulation {
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            scenario,
            world,
            queue: BinaryHeap::new(),
            pending: HashMap::new(),
            seq: 0,
            now: 0,
            cancelled: HashSet::new(),
            books: HashMap::new(),
            records: Vec::new(),
            events: 0,
        })
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn run(mut self, budget: u64) -> RunOutcome {
        for p in ProcessId::all(self.scenario.params) {
            let v = self.scenario.values[&p].clone();
            self.apply(p, Input::Start(v));
        }
        let mut budget_exhausted = false;
        loop {
            let Some(Reverse((time, seq))) = self.queue.pop() else {
                if !self.release_all_held() {
                    break;
                }
                continue;
            };
            if self.events >= budget {
                budget_exhausted = true;
                break;
            }
            self.now = time;
            match self.pending.remove(&seq).expect("queued events are pending") {
                Pending::Timer { at, handle } => {
                    if self.cancelled.remove(&(at, handle)) {
                        continue;
                    }
                    self.events += 1;
                    self.apply(at, Input::Timer(handle));
                }
                Pending::Deliver { from, to, message } => {
                    if self.hold_back(from, to, &message) {
                        continue;
                    }
                    self.events += 1;
                    self.apply(to, Input::Deliver(message));
                }
            }
        }
        RunOutcome {
            trace: Trace {
                header: self.scenario.trace_header(),
                records: self.records,
            },
            events: self.events,
            end_time: self.now,
            budget_exhausted,
        }
    }

    fn schedule(&mut self, time: u64, event: Pending) {
        let seq = self.seq;
        self.seq += 1;
        self.pending.insert(seq, event);
        self.queue.push(Reverse((time, seq)));
    }

    fn apply(&mut self, at: ProcessId, input: Input) {
        let mut effects = Vec::new();
        let first = self.records.len();
        self.world.apply(self.now, at, input, &mut effects, &mut self.records);
        self.track_queries_and_responses(first);
        for effect in effects {
            match effect {
                Effect::Send(out) => {
                    let delay = self.delay(out.from, out.to) + out.extra_delay;
                    let time = self.now + delay;
                    self.schedule(
                        time,
                        Pending::Deliver {
                            from: out.from,
                            to: out.to,
                            message: out.message,
                        },
                    );
                }
                Effect::SetTimer { at, handle, duration } => {
                    self.schedule(self.now + duration, Pending::Timer { at, handle });
                }
                Effect::CancelTimer { at, handle } => {
                    self.cancelled.insert((at, handle));
                }
            }
        }
    }

    fn delay(&mut self, from: ProcessId, to: ProcessId) -> u64 {
        let link = self.scenario.link(from, to);
        if link.class == LinkClass::Timely && self.now >= link.stabilization {
            return self.rng.gen_range(1..=link.delta_bound);
        }
        let d = self.scenario.async_delays;
        self.rng.gen_range(d.min..=d.upper_at(self.now))
    }

    /// Opens a book for each post-stabilization query a winning neighbour
    /// issues, and counts the responses it receives.
    fn track_queries_and_responses(&mut self, first: usize) {
        let Some(bw) = self.scenario.bw.clone() else {
            return;
        };
        for i in first..self.records.len() {
            let r = &self.records[i];
            let Some(round) = r.round else { continue };
            match (r.kind, r.msg_kind()) {
                (RecordKind::Send, "QUERY")
                    if r.peer == Some(r.actor)
                        && bw.z.contains(&r.actor)
                        && self.now >= bw.stabilization
                        && self.scenario.is_correct(r.actor) =>
                {
                    self.books.entry((r.actor, round)).or_default();
                }
                (RecordKind::Deliver, "RESPONSE") => {
                    let (actor, peer) = (r.actor, r.peer.expect("deliveries name the signer"));
                    if let Some(book) = self.books.get_mut(&(actor, round)) {
                        book.responders.insert(peer);
                        if peer == bw.pivot && !book.pivot_in {
                            book.pivot_in = true;
                            let held = std::mem::take(&mut book.held);
                            for (from, message) in held {
                                self.schedule(self.now, Pending::Deliver { from, to: actor, message });
                            }
                        }
                    }
                }
                _ => {}
            }
        }
    }

    /// Holds a non-pivot response that would otherwise fill the last
    /// winning slot of a book whose pivot response is still missing.
    fn hold_back(&mut self, from: ProcessId, to: ProcessId, message: &SignedMessage) -> bool {
        let Some(bw) = &self.scenario.bw else {
            return false;
        };
        if message.kind() != MsgKind::Response || message.sender() == bw.pivot {
            return false;
        }
        let Some(round) = message.round() else {
            return false;
        };
        let quorum = self.scenario.params.quorum();
        let Some(book) = self.books.get_mut(&(to, round.get())) else {
            return false;
        };
        if book.pivot_in || book.responders.contains(&message.sender()) || book.responders.len() + 1 < quorum {
            return false;
        }
        book.held.push((from, message.clone()));
        true
    }

    /// Releases held responses once nothing else can happen.
    fn release_all_held(&mut self) -> bool {
        let mut keys: Vec<(ProcessId, u32)> = self
            .books
            .iter()
            .filter(|(_, b)| !b.held.is_empty())
            .map(|(k, _)| *k)
            .collect();
        keys.sort();
        for key in &keys {
            let book = self.books.get_mut(key).expect("key from map");
            book.pivot_in = true;
            let held = std::mem::take(&mut book.held);
            for (from, message) in held {
                self.schedule(self.now, Pending::Deliver { from, to: key.0, message });
            }
        }
        !keys.is_empty()
    }
}

/// Runs `scenario` with its own seed.
pub fn run(scenario: &Scenario) -> Result<RunOutcome, ScenarioError> {
    Ok(Simulation::new(scenario.clone())?.run(DEFAULT_EVENT_BUDGET))
}
