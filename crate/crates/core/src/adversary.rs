//! Byzantine behaviours.
//!
//! A Byzantine process holds only its own [`Signer`], so everything it emits
//! is either signed by itself or a verbatim replay of something it received.
//! Several strategies run an honest [`Engine`] underneath and distort its
//! output; the rest are scripted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::auth::{
    build_certificate, CertKind, Certificate, Digest, Keyring, MessageBody, MsgKind, SignedMessage,
    Signer, Validator,
};
use crate::engine::{
    init_majority, resolve_phase2, resolve_phase3_with, Action, Destination, Engine, EngineOptions, Event,
    TimerHandle,
};
use crate::model::{coordinator_of, ProcessId, Round, SystemParams, Value, ValueSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    /// Behaves correctly for `after` steps, then goes silent.
    Crash { after: u32 },
    /// Never sends anything.
    Mute,
    /// Correct, except that it never answers queries for rounds it coordinates.
    SilentCoordinator,
    /// Sends different INIT values to different processes and, as
    /// coordinator, answers each querier with that querier's own estimate.
    Equivocator,
    /// Correct, but every message it sends (to `victim` only, if given) takes
    /// `extra` additional ticks.
    Delayer { extra: u64, victim: Option<ProcessId> },
    /// Correct, plus up to `budget` malformed, forged-looking or badly
    /// certified messages.
    InvalidSpammer { budget: u32 },
    /// Builds every round-1 estimate it can certify and, as coordinator,
    /// hands different certified values to different queriers.
    CertifiedBothValues,
}

impl Strategy {
    /// One instance of every strategy with its default parameters.
    pub fn catalog() -> Vec<Strategy> {
        vec![
            Strategy::Crash { after: 0 },
            Strategy::Crash { after: 12 },
            Strategy::Mute,
            Strategy::SilentCoordinator,
            Strategy::Equivocator,
            Strategy::Delayer {
                extra: 6,
                victim: None,
            },
            Strategy::InvalidSpammer { budget: 24 },
            Strategy::CertifiedBothValues,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Crash { .. } => "Crash",
            Strategy::Mute => "Mute",
            Strategy::SilentCoordinator => "SilentCoordinator",
            Strategy::Equivocator => "Equivocator",
            Strategy::Delayer { .. } => "Delayer",
            Strategy::InvalidSpammer { .. } => "InvalidSpammer",
            Strategy::CertifiedBothValues => "CertifiedBothValues",
        }
    }

    /// Whether the strategy never sends anything after some point, which
    /// keeps exhaustive exploration finite.
    pub fn is_crash_like(&self) -> bool {
        matches!(self, Strategy::Crash { .. } | Strategy::Mute)
    }

    pub fn build(&self, ctx: ByzContext) -> Box<dyn Adversary> {
        match *self {
            Strategy::Mute | Strategy::Crash { after: 0 } => Box::new(Silent),
            Strategy::Crash { after } => Box::new(Distorted::new(ctx, Distortion::Crash { left: after })),
            Strategy::SilentCoordinator => Box::new(Distorted::new(ctx, Distortion::SilentCoordinator)),
            Strategy::Delayer { extra, victim } => {
                Box::new(Distorted::new(ctx, Distortion::Delay { extra, victim }))
            }
            Strategy::InvalidSpammer { budget } => Box::new(Distorted::new(
                ctx,
                Distortion::Spam {
                    budget,
                    emitted: 0,
                    last_sent: None,
                    last_cert: None,
                },
            )),
            Strategy::Equivocator => Box::new(Equivocator::new(ctx)),
            Strategy::CertifiedBothValues => Box::new(SplitCoordinator::new(ctx)),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Crash { after } => write!(f, "Crash({after})"),
            Strategy::Delayer { extra, victim } => match victim {
                Some(v) => write!(f, "Delayer(extra={extra}, victim={v})"),
                None => write!(f, "Delayer(extra={extra})"),
            },
            Strategy::InvalidSpammer { budget } => write!(f, "InvalidSpammer(budget={budget})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StrategyParseError {
    #[error("unknown strategy `{0}`")]
    Unknown(String),
    #[error("bad parameter `{param}` for {strategy}")]
    BadParameter { strategy: &'static str, param: String },
}

impl FromStr for Strategy {
    type Err = StrategyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) if s.ends_with(')') => (&s[..open], &s[open + 1..s.len() - 1]),
            _ => (s, ""),
        };
        let args: Vec<&str> = args.split(',').map(str::trim).filter(|a| !a.is_empty()).collect();
        let bad = |strategy: &'static str, param: &str| StrategyParseError::BadParameter {
            strategy,
            param: param.to_string(),
        };
        let keyed = |strategy: &'static str| -> Result<BTreeMap<&str, &str>, StrategyParseError> {
            args.iter()
                .map(|a| {
                    a.split_once('=')
                        .map(|(k, v)| (k.trim(), v.trim()))
                        .ok_or_else(|| bad(strategy, a))
                })
                .collect()
        };
        match name.trim() {
            "Crash" => {
                let after = match args.as_slice() {
                    [] => 0,
                    [k] => k
                        .trim_start_matches("after=")
                        .parse()
                        .map_err(|_| bad("Crash", k))?,
                    _ => return Err(bad("Crash", &args.join(","))),
                };
                Ok(Strategy::Crash { after })
            }
            "Mute" => Ok(Strategy::Mute),
            "SilentCoordinator" => Ok(Strategy::SilentCoordinator),
            "Equivocator" => Ok(Strategy::Equivocator),
            "CertifiedBothValues" => Ok(Strategy::CertifiedBothValues),
            "Delayer" => {
                let mut extra = 6;
                let mut victim = None;
                for (k, v) in keyed("Delayer")? {
                    match k {
                        "extra" => extra = v.parse().map_err(|_| bad("Delayer", v))?,
                        "victim" => victim = Some(parse_pid(v).ok_or_else(|| bad("Delayer", v))?),
                        _ => return Err(bad("Delayer", k)),
                    }
                }
                Ok(Strategy::Delayer { extra, victim })
            }
            "InvalidSpammer" => {
                let mut budget = 24;
                for (k, v) in keyed("InvalidSpammer")? {
                    match k {
                        "budget" => budget = v.parse().map_err(|_| bad("InvalidSpammer", v))?,
                        _ => return Err(bad("InvalidSpammer", k)),
                    }
                }
                Ok(Strategy::InvalidSpammer { budget })
            }
            other => Err(StrategyParseError::Unknown(other.to_string())),
        }
    }
}

/// Parses `p3` (1-based) into a process id; range is checked by the caller.
pub fn parse_pid(s: &str) -> Option<ProcessId> {
    let idx: usize = s.trim().strip_prefix('p')?.parse().ok()?;
    (idx >= 1).then(|| ProcessId::from_index(idx as u32))
}

/// What a Byzantine process is told about.
#[derive(Debug, Clone)]
pub enum Stimulus {
    Start(Value),
    Delivered(SignedMessage),
    Timer(TimerHandle),
}

/// An action plus extra latency the adversary asks the network to add to its
/// sends.
#[derive(Debug, Clone)]
pub struct Emission {
    pub action: Action,
    pub extra_delay: u64,
}

impl Emission {
    fn now(action: Action) -> Self {
        Emission {
            action,
            extra_delay: 0,
        }
    }
}

pub trait Adversary: Send {
    fn act(&mut self, stimulus: Stimulus) -> Vec<Emission>;
    fn clone_box(&self) -> Box<dyn Adversary>;
    /// Digest of everything that influences future behaviour.
    fn state_digest(&self) -> Digest;
}

impl Clone for Box<dyn Adversary> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Everything a strategy may use: its own signing capability and public
/// verification.
#[derive(Debug, Clone)]
pub struct ByzContext {
    pub signer: Signer,
    pub keyring: Keyring,
    pub params: SystemParams,
    pub options: EngineOptions,
}

impl ByzContext {
    fn engine(&self) -> Engine {
        Engine::new(self.signer.clone(), self.keyring.clone(), self.params, self.options)
    }
}

#[derive(Debug, Clone, Copy)]
struct Silent;

impl Adversary for Silent {
    fn act(&mut self, _: Stimulus) -> Vec<Emission> {
        Vec::new()
    }

    fn clone_box(&self) -> Box<dyn Adversary> {
        Box::new(*self)
    }

    fn state_digest(&self) -> Digest {
        Digest::of(b"silent")
    }
}

fn to_event(stimulus: Stimulus) -> Event {
    match stimulus {
        Stimulus::Start(v) => Event::Start(v),
        Stimulus::Delivered(m) => Event::MessageDelivery(m),
        Stimulus::Timer(h) => Event::TimerExpiry(h),
    }
}

/// Runs the honest engine; Byzantine processes never decide or halt
/// observably, so those actions are dropped.
fn honest_step(engine: &mut Engine, stimulus: Stimulus) -> Vec<Action> {
    engine
        .step(to_event(stimulus))
        .unwrap_or_default()
        .into_iter()
        .filter(|a| !matches!(a, Action::Decide(_) | Action::Halt))
        .collect()
}

#[derive(Debug, Clone)]
enum Distortion {
    Crash {
        left: u32,
    },
    SilentCoordinator,
    Delay {
        extra: u64,
        victim: Option<ProcessId>,
    },
    Spam {
        budget: u32,
        emitted: u32,
        last_sent: Option<SignedMessage>,
        last_cert: Option<Certificate>,
    },
}

/// An honest engine whose output is post-processed.
#[derive(Debug, Clone)]
struct Distorted {
    ctx: ByzContext,
    engine: Engine,
    distortion: Distortion,
    round_seen: u32,
}

impl Distorted {
    fn new(ctx: ByzContext, distortion: Distortion) -> Self {
        Distorted {
            engine: ctx.engine(),
            ctx,
            distortion,
            round_seen: 1,
        }
    }

    fn spam(&mut self, out: &mut Vec<Emission>) {
        let Distortion::Spam {
            budget,
            emitted,
            last_sent,
            last_cert,
        } = &mut self.distortion
        else {
            return;
        };
        if *emitted >= *budget {
            return;
        }
        *emitted += 1;
        let round = Round::new(self.round_seen).expect("rounds start at 1");
        let me = self.ctx.signer.id();
        let junk = Value::proposal(format!("junk-{me}"));
        let message = match *emitted % 5 {
            // Unsigned garbage: a valid body with a broken tag.
            0 => self
                .ctx
                .signer
                .sign_corrupted(MessageBody::new(MsgKind::Relay, round, junk, None)),
            // A QUERY without an estimate.
            1 => self
                .ctx
                .signer
                .sign(MessageBody::new(MsgKind::Query, round, Value::Bottom, None)),
            // A phase message with a certificate from the wrong phase.
            2 => self.ctx.signer.sign(MessageBody::new(
                MsgKind::Filt1,
                round,
                junk,
                last_cert.clone(),
            )),
            // A decision nobody justified.
            3 => self.ctx.signer.sign(MessageBody::new(
                MsgKind::Dec,
                round,
                junk,
                last_cert.clone(),
            )),
            // A replay of its own earlier message.
            _ => match last_sent {
                Some(m) => m.clone(),
                None => return,
            },
        };
        out.push(Emission::now(Action::Send {
            to: Destination::All,
            message,
        }));
    }
}

impl Adversary for Distorted {
    fn act(&mut self, stimulus: Stimulus) -> Vec<Emission> {
        if let Distortion::Crash { left } = &mut self.distortion {
            if *left == 0 {
                return Vec::new();
            }
            *left -= 1;
        }
        let incoming = match &stimulus {
            Stimulus::Delivered(m) => Some(m.clone()),
            _ => None,
        };
        let actions = honest_step(&mut self.engine, stimulus);
        if let Some(r) = self.engine.current_round() {
            self.round_seen = self.round_seen.max(r.get());
        }
        let me = self.ctx.signer.id();
        let params = self.ctx.params;
        let mut out = Vec::new();
        for action in actions {
            match (&self.distortion, &action) {
                (Distortion::SilentCoordinator, Action::Send { message, .. })
                    if message.kind() == MsgKind::Response
                        && message
                            .round()
                            .map_or(false, |r| coordinator_of(r, params) == me) => {}
                (Distortion::Delay { extra, victim }, Action::Send { to, message }) => {
                    match (victim, to) {
                        (None, _) => out.push(Emission {
                            action,
                            extra_delay: *extra,
                        }),
                        (Some(v), Destination::To(p)) => out.push(Emission {
                            extra_delay: if p == v { *extra } else { 0 },
                            action,
                        }),
                        // Split a broadcast so only the victim's copy is slowed.
                        (Some(v), Destination::All) => {
                            for p in ProcessId::all(params) {
                                out.push(Emission {
                                    action: Action::Send {
                                        to: Destination::To(p),
                                        message: message.clone(),
                                    },
                                    extra_delay: if p == *v { *extra } else { 0 },
                                });
                            }
                        }
                    }
                }
                _ => {
                    if let (Distortion::Spam { last_sent, .. }, Action::Send { message, .. }) =
                        (&mut self.distortion, &action)
                    {
                        *last_sent = Some(message.clone());
                    }
                    out.push(Emission::now(action));
                }
            }
        }
        if let Distortion::Spam { last_cert, .. } = &mut self.distortion {
            if let Some(cert) = incoming.as_ref().and_then(|m| m.certificate()) {
                *last_cert = Some(cert.clone());
            }
        }
        if incoming.is_some() {
            self.spam(&mut out);
        }
        out
    }

    fn clone_box(&self) -> Box<dyn Adversary> {
        Box::new(self.clone())
    }

    fn state_digest(&self) -> Digest {
        let mut h = Sha256::new();
        h.update(self.engine.state_digest().as_bytes());
        h.update(self.round_seen.to_be_bytes());
        match &self.distortion {
            Distortion::Crash { left } => h.update(left.to_be_bytes()),
            Distortion::Spam { emitted, .. } => h.update(emitted.to_be_bytes()),
            _ => {}
        }
        Digest::of(&h.finalize())
    }
}

/// Equivocates on INIT and, as coordinator, echoes each querier's own
/// estimate back to it as the coordination value.
#[derive(Debug, Clone)]
struct Equivocator {
    ctx: ByzContext,
    engine: Engine,
}

impl Equivocator {
    fn new(ctx: ByzContext) -> Self {
        Equivocator {
            engine: ctx.engine(),
            ctx,
        }
    }
}

impl Adversary for Equivocator {
    fn act(&mut self, stimulus: Stimulus) -> Vec<Emission> {
        let me = self.ctx.signer.id();
        let params = self.ctx.params;
        let mut out = Vec::new();
        if let Stimulus::Start(v) = &stimulus {
            let alt = Value::proposal(format!("{v}'"));
            for p in ProcessId::all(params) {
                // Itself and the lower half see the real value.
                let value = if p == me || p.index() <= params.n() / 2 {
                    v.clone()
                } else {
                    alt.clone()
                };
                if p != me {
                    out.push(Emission::now(Action::Send {
                        to: Destination::To(p),
                        message: self.ctx.signer.sign(MessageBody::init(value)),
                    }));
                }
            }
        }
        let query = match &stimulus {
            Stimulus::Delivered(m) if m.kind() == MsgKind::Query => Some(m.clone()),
            _ => None,
        };
        for action in honest_step(&mut self.engine, stimulus.clone()) {
            match &action {
                Action::Send { message, .. } if message.kind() == MsgKind::Init => {
                    out.push(Emission::now(Action::Send {
                        to: Destination::To(me),
                        message: message.clone(),
                    }));
                }
                Action::Send { message, .. }
                    if message.kind() == MsgKind::Response
                        && message
                            .round()
                            .map_or(false, |r| coordinator_of(r, params) == me) =>
                {
                    let q = query.as_ref().expect("responses answer a query");
                    let round = q.round().expect("queries carry a round");
                    let cert =
                        build_certificate(&self.ctx.keyring, params, CertKind::AdoptedQuery, vec![q.clone()], None)
                            .ok();
                    out.push(Emission::now(Action::Send {
                        to: Destination::To(q.sender()),
                        message: self.ctx.signer.sign(MessageBody::new(
                            MsgKind::Response,
                            round,
                            q.value().clone(),
                            cert,
                        )),
                    }));
                }
                _ => out.push(Emission::now(action)),
            }
        }
        out
    }

    fn clone_box(&self) -> Box<dyn Adversary> {
        Box::new(self.clone())
    }

    fn state_digest(&self) -> Digest {
        self.engine.state_digest()
    }
}

/// Collects every certifiable estimate for the rounds it coordinates and
/// splits the queriers between them. In the later phases it sends ⊥
/// whenever ⊥ is certifiable, which lets both halves reach their quorums,
/// and splits FILT2 values whenever more than one is certifiable.
#[derive(Debug, Clone)]
struct SplitCoordinator {
    ctx: ByzContext,
    engine: Engine,
    validator: Validator,
    inits: Vec<SignedMessage>,
    /// Certifiable queries per round, one per distinct value, in discovery
    /// order.
    candidates: BTreeMap<u32, Vec<SignedMessage>>,
    /// Valid messages received, one per sender, by round and kind.
    seen: BTreeMap<(u32, MsgKind), Vec<SignedMessage>>,
    sent: BTreeSet<(u32, MsgKind)>,
}

impl SplitCoordinator {
    fn new(ctx: ByzContext) -> Self {
        SplitCoordinator {
            engine: ctx.engine(),
            validator: Validator::new(ctx.keyring.clone(), ctx.params, ctx.options.rules),
            ctx,
            inits: Vec::new(),
            candidates: BTreeMap::new(),
            seen: BTreeMap::new(),
            sent: BTreeSet::new(),
        }
    }

    fn add_candidate(&mut self, query: SignedMessage) {
        let round = query.round().map_or(0, Round::get);
        let list = self.candidates.entry(round).or_default();
        if !list.iter().any(|q| q.value() == query.value()) {
            list.push(query);
        }
    }

    /// Signs a round-1 QUERY for every value some n−t subset of the INITs
    /// seen so far can justify.
    fn craft_round_one(&mut self) {
        let params = self.ctx.params;
        let me = self.ctx.signer.id();
        let quorum = params.quorum();
        if self.inits.len() < quorum {
            return;
        }
        for subset in subsets(self.inits.len(), quorum) {
            let evidence: Vec<SignedMessage> = subset.iter().map(|&i| self.inits[i].clone()).collect();
            let set = values_of(&evidence);
            let value = match init_majority(&set, params) {
                Some(v) => v,
                None => match set.get(me) {
                    Some(own) => own.clone(),
                    None => continue,
                },
            };
            if self.candidates.get(&1).map_or(false, |l| l.iter().any(|q| *q.value() == value)) {
                continue;
            }
            let Ok(cert) = build_certificate(&self.ctx.keyring, params, CertKind::InitQuorum, evidence, None)
            else {
                continue;
            };
            let query = self
                .ctx
                .signer
                .sign(MessageBody::new(MsgKind::Query, Round::FIRST, value, Some(cert)));
            self.add_candidate(query);
        }
    }

    fn observe(&mut self, m: &SignedMessage) {
        if self.validator.check_message(m).is_err() {
            return;
        }
        match m.kind() {
            MsgKind::Init => {
                if !self.inits.iter().any(|i| i.sender() == m.sender()) {
                    self.inits.push(m.clone());
                    self.craft_round_one();
                }
            }
            MsgKind::Query => self.add_candidate(m.clone()),
            kind => {
                let round = m.round().map_or(0, Round::get);
                let list = self.seen.entry((round, kind)).or_default();
                if !list.iter().any(|x| x.sender() == m.sender()) {
                    list.push(m.clone());
                }
            }
        }
    }

    /// Every distinct value it can certify for `kind` in `round`, with a
    /// certificate for each.
    fn options(&self, round: u32, kind: MsgKind) -> Vec<(Value, Certificate)> {
        let params = self.ctx.params;
        let quorum = params.quorum();
        let source = match kind {
            MsgKind::Relay => MsgKind::Response,
            MsgKind::Filt1 => MsgKind::Relay,
            _ => MsgKind::Filt1,
        };
        let src = self.seen.get(&(round, source)).map(Vec::as_slice).unwrap_or(&[]);
        let mut out: Vec<(Value, Certificate)> = Vec::new();
        let mut push = |v: Value, kind: CertKind, evidence: Vec<SignedMessage>| {
            if out.iter().any(|(x, _)| *x == v) {
                return;
            }
            if let Ok(c) = build_certificate(&self.ctx.keyring, params, kind, evidence, None) {
                out.push((v, c));
            }
        };
        if kind == MsgKind::Relay {
            let Ok(r) = Round::new(round) else { return out };
            let coordinator = coordinator_of(r, params);
            if let Some(resp) = src.iter().find(|m| m.sender() == coordinator) {
                push(resp.value().clone(), CertKind::CoordResponse, vec![resp.clone()]);
            }
            if src.len() >= quorum {
                push(Value::Bottom, CertKind::ResponseQuorum, src[..quorum].to_vec());
            }
            return out;
        }
        if src.len() < quorum {
            return out;
        }
        for subset in subsets(src.len(), quorum) {
            let evidence: Vec<SignedMessage> = subset.iter().map(|&i| src[i].clone()).collect();
            let set = values_of(&evidence);
            if kind == MsgKind::Filt1 {
                push(resolve_phase2(&set), CertKind::RelayQuorum, evidence);
            } else {
                push(
                    resolve_phase3_with(&set, self.ctx.options.rules),
                    CertKind::Filt1Quorum,
                    evidence,
                );
            }
        }
        out
    }

    fn emit_phase_messages(&mut self, out: &mut Vec<Emission>) {
        let params = self.ctx.params;
        let me = self.ctx.signer.id();
        let rounds: BTreeSet<u32> = self.seen.keys().map(|(r, _)| *r).filter(|r| *r > 0).collect();
        for round in rounds {
            for (kind, source) in [
                (MsgKind::Relay, MsgKind::Response),
                (MsgKind::Filt1, MsgKind::Relay),
                (MsgKind::Filt2, MsgKind::Filt1),
            ] {
                if self.sent.contains(&(round, kind)) {
                    continue;
                }
                let options = self.options(round, kind);
                let all_in = self.seen.get(&(round, source)).map_or(0, Vec::len) == params.n();
                let bottom = options.iter().find(|(v, _)| v.is_bottom()).cloned();
                let proposals: Vec<&(Value, Certificate)> =
                    options.iter().filter(|(v, _)| !v.is_bottom()).collect();
                if bottom.is_none() && proposals.len() < 2 && !all_in {
                    continue;
                }
                if options.is_empty() {
                    continue;
                }
                self.sent.insert((round, kind));
                let r = Round::new(round).expect("positive round");
                for p in ProcessId::all(params).filter(|p| *p != me) {
                    let (value, cert) = match (&bottom, proposals.as_slice()) {
                        (_, many @ [_, _, ..]) if kind == MsgKind::Filt2 || bottom.is_none() => {
                            many[p.slot() % many.len()].clone()
                        }
                        (Some(b), _) => b.clone(),
                        (None, [one]) => (*one).clone(),
                        (None, _) => unreachable!("options is not empty"),
                    };
                    out.push(Emission::now(Action::Send {
                        to: Destination::To(p),
                        message: self.ctx.signer.sign(MessageBody::new(kind, r, value, Some(cert))),
                    }));
                }
            }
        }
    }
}

fn values_of(msgs: &[SignedMessage]) -> ValueSet {
    msgs.iter().map(|m| (m.sender(), m.value().clone())).collect()
}

/// All `k`-element index subsets of `0..n`, in lexicographic order.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn go(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            if n - i < k - current.len() {
                break;
            }
            current.push(i);
            go(i + 1, n, k, current, out);
            current.pop();
        }
    }
    go(0, n, k, &mut current, &mut out);
    out
}

impl Adversary for SplitCoordinator {
    fn act(&mut self, stimulus: Stimulus) -> Vec<Emission> {
        let me = self.ctx.signer.id();
        let params = self.ctx.params;
        let query = match &stimulus {
            Stimulus::Delivered(m) if m.kind() == MsgKind::Query => Some(m.clone()),
            _ => None,
        };
        if let Stimulus::Delivered(m) = &stimulus {
            self.observe(m);
        }
        let mut out = Vec::new();
        for action in honest_step(&mut self.engine, stimulus) {
            match &action {
                Action::Send { message, .. }
                    if matches!(message.kind(), MsgKind::Relay | MsgKind::Filt1 | MsgKind::Filt2) => {}
                Action::Send { message, .. }
                    if message.kind() == MsgKind::Response
                        && message
                            .round()
                            .map_or(false, |r| coordinator_of(r, params) == me) =>
                {
                    let q = query.as_ref().expect("responses answer a query");
                    let round = q.round().expect("queries carry a round");
                    let list = &self.candidates[&round.get()];
                    let adopted = list[q.sender().slot() % list.len()].clone();
                    let Ok(cert) = build_certificate(
                        &self.ctx.keyring,
                        params,
                        CertKind::AdoptedQuery,
                        vec![adopted.clone()],
                        None,
                    ) else {
                        continue;
                    };
                    out.push(Emission::now(Action::Send {
                        to: Destination::To(q.sender()),
                        message: self.ctx.signer.sign(MessageBody::new(
                            MsgKind::Response,
                            round,
                            adopted.value().clone(),
                            Some(cert),
                        )),
                    }));
                }
                _ => out.push(Emission::now(action)),
            }
        }
        self.emit_phase_messages(&mut out);
        out
    }

    fn clone_box(&self) -> Box<dyn Adversary> {
        Box::new(self.clone())
    }

    fn state_digest(&self) -> Digest {
        let mut h = Sha256::new();
        h.update(self.engine.state_digest().as_bytes());
        for m in &self.inits {
            h.update(m.digest().as_bytes());
        }
        for (r, list) in &self.candidates {
            h.update(r.to_be_bytes());
            for q in list {
                h.update(q.digest().as_bytes());
            }
        }
        for ((r, kind), list) in &self.seen {
            h.update(r.to_be_bytes());
            h.update(kind.label().as_bytes());
            for m in list {
                h.update(m.digest().as_bytes());
            }
        }
        for (r, kind) in &self.sent {
            h.update(r.to_be_bytes());
            h.update(kind.label().as_bytes());
        }
        Digest::of(&h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::catalog() {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!(
            "Delayer(extra=9, victim=p2)".parse::<Strategy>().unwrap(),
            Strategy::Delayer {
                extra: 9,
                victim: Some(ProcessId::from_index(2))
            }
        );
        assert_eq!("Crash(0)".parse::<Strategy>().unwrap(), Strategy::Crash { after: 0 });
        assert!("Teleporter".parse::<Strategy>().is_err());
        assert!("Delayer(speed=3)".parse::<Strategy>().is_err());
    }

    #[test]
    fn subsets_enumerates_binomial_count() {
        assert_eq!(subsets(4, 3).len(), 4);
        assert_eq!(subsets(7, 5).len(), 21);
        assert_eq!(subsets(3, 3), vec![vec![0, 1, 2]]);
    }
}
