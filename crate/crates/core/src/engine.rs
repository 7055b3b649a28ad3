//! The per-process protocol automaton.
//!
//! An [`Engine`] consumes [`Event`]s one at a time and answers with the
//! [`Action`]s the surrounding runtime must carry out. It covers the main task
//! (init phase followed by four-phase rounds), the per-round query/response
//! coordination task and the decision relay task. It performs no I/O and reads
//! no clock: timers are requested through actions and come back as events.
//!
//! Waits are guards re-evaluated after every accepted event. In phase 1 the
//! coordinator arm wins whenever the coordinator's RESPONSE is present at
//! evaluation time, even if the timer already fired and the response quorum
//! is not yet complete.

use std::collections::BTreeMap;

use sha2::{Digest as _, Sha256};

use crate::auth::{
    build_certificate, CertKind, Certificate, Daemon, Digest, Discard, Keyring, MessageBody,
    MsgKind, Rules, SignedMessage, Signer, Validator,
};
use crate::model::{coordinator_of, ProcessId, Round, SystemParams, Value, ValueSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    NotStarted,
    InitWait,
    Phase1,
    Phase2,
    Phase3,
    Phase4,
    Decided,
    Halted,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::NotStarted => "NOT_STARTED",
            Phase::InitWait => "INIT_WAIT",
            Phase::Phase1 => "PHASE1",
            Phase::Phase2 => "PHASE2",
            Phase::Phase3 => "PHASE3",
            Phase::Phase4 => "PHASE4",
            Phase::Decided => "DECIDED",
            Phase::Halted => "HALTED",
        }
    }

    fn is_final(self) -> bool {
        matches!(self, Phase::Decided | Phase::Halted)
    }
}

/// Identifies the round timer; one timer per round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimerHandle(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Destination {
    All,
    To(ProcessId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Send {
        to: Destination,
        message: SignedMessage,
    },
    SetTimer {
        duration: u64,
        handle: TimerHandle,
    },
    DisableTimer {
        handle: TimerHandle,
    },
    Decide(Value),
    Halt,
}

#[derive(Debug, Clone)]
pub enum Event {
    Start(Value),
    MessageDelivery(SignedMessage),
    TimerExpiry(TimerHandle),
}

/// A value together with the certificate that makes it sendable.
#[derive(Debug, Clone)]
pub struct Certified {
    pub value: Value,
    pub certificate: Certificate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct TimerState {
    handle: TimerHandle,
    coordinator: ProcessId,
    fired: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EngineOptions {
    pub rules: Rules,
    /// Last round the engine is allowed to start; it halts instead of
    /// starting the next one.
    pub max_rounds: Option<u32>,
}

/// One process's protocol state.
#[derive(Debug, Clone)]
pub struct Engine {
    me: ProcessId,
    params: SystemParams,
    options: EngineOptions,
    signer: Signer,
    keyring: Keyring,
    daemon: Daemon,
    phase: Phase,
    round: u32,
    proposal: Option<Value>,
    est: Option<Certified>,
    aux: Option<Certified>,
    delta: Vec<u64>,
    timer: Option<TimerState>,
    c_est: BTreeMap<u32, (SignedMessage, Certificate)>,
    decided: Option<Value>,
    decided_round: Option<Round>,
    inbox: BTreeMap<(u32, MsgKind), Vec<SignedMessage>>,
    collected: ValueSet,
}

impl Engine {
    pub fn new(signer: Signer, keyring: Keyring, params: SystemParams, options: EngineOptions) -> Self {
        let validator = Validator::new(keyring.clone(), params, options.rules);
        Engine {
            me: signer.id(),
            params,
            options,
            signer,
            keyring,
            daemon: Daemon::new(validator),
            phase: Phase::NotStarted,
            round: 0,
            proposal: None,
            est: None,
            aux: None,
            delta: vec![1; params.n()],
            timer: None,
            c_est: BTreeMap::new(),
            decided: None,
            decided_round: None,
            inbox: BTreeMap::new(),
            collected: ValueSet::new(),
        }
    }

    /// Creates the engine and performs its first step: broadcast INIT(v).
    pub fn start(
        signer: Signer,
        keyring: Keyring,
        params: SystemParams,
        options: EngineOptions,
        initial_value: Value,
    ) -> (Self, Vec<Action>) {
        let mut engine = Engine::new(signer, keyring, params, options);
        let actions = engine
            .step(Event::Start(initial_value))
            .expect("start events are never discarded");
        (engine, actions)
    }

    /// Consumes one event. A delivery the daemon rejects never reaches the
    /// protocol state and comes back as `Err`.
    pub fn step(&mut self, event: Event) -> Result<Vec<Action>, Discard> {
        let mut out = Vec::new();
        match event {
            Event::Start(v) => {
                if self.phase == Phase::NotStarted && !v.is_bottom() {
                    self.proposal = Some(v.clone());
                    self.phase = Phase::InitWait;
                    let init = self.signer.sign(MessageBody::init(v));
                    out.push(Action::Send {
                        to: Destination::All,
                        message: init,
                    });
                }
            }
            Event::TimerExpiry(handle) => {
                if let Some(timer) = self.timer.as_mut() {
                    if timer.handle == handle && !timer.fired && self.phase == Phase::Phase1 {
                        timer.fired = true;
                    }
                }
            }
            Event::MessageDelivery(m) => {
                // Decided and halted processes no longer listen.
                if self.phase.is_final() {
                    return Ok(out);
                }
                self.daemon.filter(self.current_round(), &m)?;
                match m.kind() {
                    MsgKind::Query => self.respond_to_query(&m, &mut out),
                    MsgKind::Dec => {
                        self.handle_dec(&m, &mut out);
                        return Ok(out);
                    }
                    kind => {
                        let round = m.round().map_or(0, Round::get);
                        if !self.is_past(round, kind) {
                            self.inbox.entry((round, kind)).or_default().push(m);
                        }
                    }
                }
            }
        }
        self.progress(&mut out);
        Ok(out)
    }

    pub fn me(&self) -> ProcessId {
        self.me
    }

    pub fn params(&self) -> SystemParams {
        self.params
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Current round, `None` before the first one starts.
    pub fn current_round(&self) -> Option<Round> {
        Round::new(self.round).ok()
    }

    pub fn est(&self) -> Option<&Certified> {
        self.est.as_ref()
    }

    pub fn aux(&self) -> Option<&Certified> {
        self.aux.as_ref()
    }

    /// Timeout currently used for rounds coordinated by `p`.
    pub fn delta(&self, p: ProcessId) -> u64 {
        self.delta[p.slot()]
    }

    pub fn decided(&self) -> Option<&Value> {
        self.decided.as_ref()
    }

    /// Round whose FILT2 quorum justified the decision.
    pub fn decided_round(&self) -> Option<Round> {
        self.decided_round
    }

    /// Coordination value adopted for `round`, if this process coordinates it
    /// and has answered a query.
    pub fn coordination_value(&self, round: Round) -> Option<&Value> {
        self.c_est.get(&round.get()).map(|(q, _)| q.value())
    }

    /// Values of the most recently completed collection.
    pub fn collected(&self) -> &ValueSet {
        &self.collected
    }

    /// Whether the current round's timer has fired.
    pub fn timer_fired(&self) -> bool {
        self.timer.map_or(false, |t| t.fired)
    }

    pub fn validator(&mut self) -> &mut Validator {
        self.daemon.validator()
    }

    /// Digest of the protocol-relevant state. Two engines with equal digests
    /// react identically to every future event.
    pub fn state_digest(&self) -> Digest {
        let mut h = Sha256::new();
        h.update([self.phase as u8]);
        if self.phase.is_final() {
            if let Some(v) = &self.decided {
                h.update(v.canonical_bytes());
            }
            return Digest::of(&h.finalize());
        }
        h.update(self.round.to_be_bytes());
        for c in [&self.est, &self.aux] {
            match c {
                Some(c) => {
                    h.update(c.value.canonical_bytes());
                    h.update(c.certificate.digest().as_bytes());
                }
                None => h.update([0xff]),
            }
        }
        for d in &self.delta {
            h.update(d.to_be_bytes());
        }
        if let Some(t) = self.timer {
            h.update([1, t.fired as u8]);
            h.update(t.handle.0.to_be_bytes());
        }
        for (r, (q, _)) in &self.c_est {
            h.update(r.to_be_bytes());
            h.update(q.digest().as_bytes());
        }
        // Only membership of the first quorum matters, not its order.
        let quorum = self.params.quorum();
        for ((r, kind), msgs) in &self.inbox {
            h.update(r.to_be_bytes());
            h.update(kind.label().as_bytes());
            let head = by_sender(&msgs[..msgs.len().min(quorum)]);
            for m in head.iter().chain(msgs.iter().skip(quorum)) {
                h.update(m.digest().as_bytes());
            }
        }
        Digest::of(&h.finalize())
    }

    /// Whether messages of this kind and round can no longer matter: their
    /// collection is over.
    pub fn is_past(&self, round: u32, kind: MsgKind) -> bool {
        if kind == MsgKind::Init {
            return !matches!(self.phase, Phase::NotStarted | Phase::InitWait);
        }
        if round != self.round {
            return round < self.round;
        }
        let current = match self.phase {
            Phase::NotStarted | Phase::InitWait => return false,
            Phase::Phase1 => 1,
            Phase::Phase2 => 2,
            Phase::Phase3 => 3,
            Phase::Phase4 => 4,
            Phase::Decided | Phase::Halted => return true,
        };
        let rank = match kind {
            MsgKind::Response => 1,
            MsgKind::Relay => 2,
            MsgKind::Filt1 => 3,
            MsgKind::Filt2 => 4,
            _ => return false,
        };
        rank < current
    }

    /// The (round, kind) collection the engine is currently waiting on.
    pub fn awaiting(&self) -> Option<(u32, MsgKind)> {
        let kind = match self.phase {
            Phase::InitWait => return Some((0, MsgKind::Init)),
            Phase::Phase1 => MsgKind::Response,
            Phase::Phase2 => MsgKind::Relay,
            Phase::Phase3 => MsgKind::Filt1,
            Phase::Phase4 => MsgKind::Filt2,
            _ => return None,
        };
        Some((self.round, kind))
    }

    fn progress(&mut self, out: &mut Vec<Action>) {
        loop {
            let moved = match self.phase {
                Phase::InitWait => self.try_finish_init(out),
                Phase::Phase1 => self.try_finish_phase1(out),
                Phase::Phase2 => self.try_finish_collect(MsgKind::Relay, out),
                Phase::Phase3 => self.try_finish_collect(MsgKind::Filt1, out),
                Phase::Phase4 => self.try_finish_collect(MsgKind::Filt2, out),
                Phase::NotStarted | Phase::Decided | Phase::Halted => false,
            };
            if !moved {
                break;
            }
        }
    }

    fn try_finish_init(&mut self, out: &mut Vec<Action>) -> bool {
        let quorum = self.params.quorum();
        let inits = self.inbox.get(&(0, MsgKind::Init)).map(Vec::as_slice).unwrap_or(&[]);
        // The own INIT is self-delivered at start; the fallback branch needs
        // it inside the evidence.
        let Some(own) = inits.iter().find(|m| m.sender() == self.me) else {
            return false;
        };
        if inits.len() < quorum {
            return false;
        }
        let mut others: Vec<SignedMessage> = inits
            .iter()
            .filter(|m| m.sender() != self.me)
            .take(quorum - 1)
            .cloned()
            .collect();
        others.sort_by_key(|m| m.sender());
        let mut chosen = vec![own.clone()];
        chosen.extend(others);
        let set = values_of(&chosen);
        let proposal = self.proposal.clone().expect("started engines have a proposal");
        let est = resolve_init(&set, &proposal, self.params);
        self.collected = set;
        self.inbox.remove(&(0, MsgKind::Init));
        match self.certify(CertKind::InitQuorum, chosen, None) {
            Some(certificate) => {
                self.est = Some(Certified {
                    value: est,
                    certificate,
                });
                self.begin_round(out);
            }
            None => self.halt(out),
        }
        true
    }

    fn begin_round(&mut self, out: &mut Vec<Action>) {
        if let Some(max) = self.options.max_rounds {
            if self.round >= max {
                self.halt(out);
                return;
            }
        }
        self.round += 1;
        let current = self.round;
        self.inbox.retain(|(r, _), _| *r >= current);
        let round = Round::new(self.round).expect("incremented from zero");
        let coordinator = coordinator_of(round, self.params);
        let est = self.est.clone().expect("estimate set before any round");
        let query = self.signer.sign(MessageBody::new(
            MsgKind::Query,
            round,
            est.value,
            Some(est.certificate),
        ));
        if !self.send_checked(Destination::All, query, out) {
            return;
        }
        let handle = TimerHandle(self.round);
        self.timer = Some(TimerState {
            handle,
            coordinator,
            fired: false,
        });
        out.push(Action::SetTimer {
            duration: self.delta[coordinator.slot()],
            handle,
        });
        self.aux = None;
        self.phase = Phase::Phase1;
    }

    fn try_finish_phase1(&mut self, out: &mut Vec<Action>) -> bool {
        let timer = self.timer.expect("phase 1 always has a timer");
        let coordinator = timer.coordinator;
        let responses = self
            .inbox
            .get(&(self.round, MsgKind::Response))
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let (aux, evidence, kind) =
            if let Some(resp) = responses.iter().find(|m| m.sender() == coordinator) {
                if !timer.fired {
                    out.push(Action::DisableTimer {
                        handle: timer.handle,
                    });
                }
                (resp.value().clone(), vec![resp.clone()], CertKind::CoordResponse)
            } else if timer.fired && responses.len() >= self.params.quorum() {
                self.delta[coordinator.slot()] += 1;
                let evidence = by_sender(&responses[..self.params.quorum()]);
                (Value::Bottom, evidence, CertKind::ResponseQuorum)
            } else {
                return false;
            };
        self.collected = values_of(&evidence);
        self.inbox.remove(&(self.round, MsgKind::Response));
        let Some(certificate) = self.certify(kind, evidence, None) else {
            self.halt(out);
            return true;
        };
        self.advance_with(aux, certificate, MsgKind::Relay, Phase::Phase2, out);
        true
    }

    fn try_finish_collect(&mut self, kind: MsgKind, out: &mut Vec<Action>) -> bool {
        let quorum = self.params.quorum();
        let Some(msgs) = self.inbox.get(&(self.round, kind)) else {
            return false;
        };
        if msgs.len() < quorum {
            return false;
        }
        let evidence = by_sender(&msgs[..quorum]);
        self.inbox.remove(&(self.round, kind));
        let set = values_of(&evidence);
        self.collected = set.clone();
        match kind {
            MsgKind::Relay => {
                let aux = resolve_phase2(&set);
                match self.certify(CertKind::RelayQuorum, evidence, None) {
                    Some(c) => self.advance_with(aux, c, MsgKind::Filt1, Phase::Phase3, out),
                    None => self.halt(out),
                }
            }
            MsgKind::Filt1 => {
                let aux = resolve_phase3_with(&set, self.options.rules);
                match self.certify(CertKind::Filt1Quorum, evidence, None) {
                    Some(c) => self.advance_with(aux, c, MsgKind::Filt2, Phase::Phase4, out),
                    None => self.halt(out),
                }
            }
            MsgKind::Filt2 => self.resolve_phase4(&set, evidence, out),
            _ => unreachable!("only phase messages are collected here"),
        }
        true
    }

    /// Stores the new aux value and broadcasts it as the next phase message.
    fn advance_with(
        &mut self,
        aux: Value,
        certificate: Certificate,
        next: MsgKind,
        phase: Phase,
        out: &mut Vec<Action>,
    ) {
        let round = Round::new(self.round).expect("inside a round");
        let message = self.signer.sign(MessageBody::new(
            next,
            round,
            aux.clone(),
            Some(certificate.clone()),
        ));
        self.aux = Some(Certified {
            value: aux,
            certificate,
        });
        if self.send_checked(Destination::All, message, out) {
            self.phase = phase;
        }
    }

    fn resolve_phase4(&mut self, set: &ValueSet, evidence: Vec<SignedMessage>, out: &mut Vec<Action>) {
        let round = Round::new(self.round).expect("inside a round");
        match classify_phase4(set) {
            Phase4Outcome::Decide(v) => {
                let Some(cert) = self.certify(CertKind::DecQuorum, evidence, None) else {
                    return self.halt(out);
                };
                let dec = self
                    .signer
                    .sign(MessageBody::new(MsgKind::Dec, round, v.clone(), Some(cert)));
                if self.send_checked(Destination::All, dec, out) {
                    self.decide(v, round, out);
                }
            }
            Phase4Outcome::Adopt(v) => {
                let Some(certificate) = self.certify(CertKind::Filt2Quorum, evidence, None) else {
                    return self.halt(out);
                };
                self.est = Some(Certified {
                    value: v,
                    certificate,
                });
                self.begin_round(out);
            }
            Phase4Outcome::Retain => {
                let old = self.est.clone().expect("estimate set before any round");
                let Some(certificate) =
                    self.certify(CertKind::ChainedEstimate, evidence, Some(old.certificate))
                else {
                    return self.halt(out);
                };
                self.est = Some(Certified {
                    value: old.value,
                    certificate,
                });
                self.begin_round(out);
            }
            Phase4Outcome::Conflict => self.halt(out),
        }
    }

    fn respond_to_query(&mut self, query: &SignedMessage, out: &mut Vec<Action>) {
        let round = query.round().expect("daemon checked QUERY shape");
        let response = if coordinator_of(round, self.params) == self.me {
            if !self.c_est.contains_key(&round.get()) {
                let Some(cert) = self.certify(CertKind::AdoptedQuery, vec![query.clone()], None) else {
                    return;
                };
                self.c_est.insert(round.get(), (query.clone(), cert));
            }
            let (adopted, cert) = &self.c_est[&round.get()];
            MessageBody::new(MsgKind::Response, round, adopted.value().clone(), Some(cert.clone()))
        } else {
            // Only the coordinator's value matters; others echo their estimate.
            let echo = self
                .est
                .as_ref()
                .map(|e| e.value.clone())
                .or_else(|| self.proposal.clone())
                .unwrap_or(Value::Bottom);
            MessageBody::new(MsgKind::Response, round, echo, None)
        };
        let message = self.signer.sign(response);
        self.send_checked(Destination::To(query.sender()), message, out);
    }

    fn handle_dec(&mut self, dec: &SignedMessage, out: &mut Vec<Action>) {
        if self.decided.is_some() {
            return;
        }
        let round = dec.round().expect("daemon checked DEC shape");
        let relay = self.signer.sign(MessageBody::new(
            MsgKind::Dec,
            round,
            dec.value().clone(),
            dec.certificate().cloned(),
        ));
        if let Some(timer) = self.timer {
            if self.phase == Phase::Phase1 && !timer.fired {
                out.push(Action::DisableTimer {
                    handle: timer.handle,
                });
            }
        }
        if self.send_checked(Destination::All, relay, out) {
            self.decide(dec.value().clone(), round, out);
        }
    }

    fn decide(&mut self, v: Value, round: Round, out: &mut Vec<Action>) {
        self.decided = Some(v.clone());
        self.decided_round = Some(round);
        self.phase = Phase::Decided;
        out.push(Action::Decide(v));
    }

    fn halt(&mut self, out: &mut Vec<Action>) {
        self.phase = Phase::Halted;
        out.push(Action::Halt);
    }

    fn certify(
        &self,
        kind: CertKind,
        evidence: Vec<SignedMessage>,
        nested: Option<Certificate>,
    ) -> Option<Certificate> {
        build_certificate(&self.keyring, self.params, kind, evidence, nested).ok()
    }

    /// Sends only messages the local validator accepts; halts otherwise.
    fn send_checked(&mut self, to: Destination, message: SignedMessage, out: &mut Vec<Action>) -> bool {
        if self.daemon.validator().check_message(&message).is_err() {
            self.halt(out);
            return false;
        }
        out.push(Action::Send { to, message });
        true
    }
}

/// Evidence in sender order, so equal quorums give equal certificates.
fn by_sender(msgs: &[SignedMessage]) -> Vec<SignedMessage> {
    let mut v = msgs.to_vec();
    v.sort_by_key(|m| m.sender());
    v
}

fn values_of(msgs: &[SignedMessage]) -> ValueSet {
    msgs.iter().map(|m| (m.sender(), m.value().clone())).collect()
}

/// A value occurring at least n−2t times in the INIT quorum, if any.
pub fn init_majority(collected: &ValueSet, params: SystemParams) -> Option<Value> {
    collected
        .distinct_proposals()
        .into_iter()
        .find(|v| collected.count(v) >= params.init_threshold())
        .cloned()
}

/// Estimate after the init phase: the majority value if one reaches n−2t,
/// the own proposal otherwise.
pub fn resolve_init(collected: &ValueSet, own_value: &Value, params: SystemParams) -> Value {
    init_majority(collected, params).unwrap_or_else(|| own_value.clone())
}

/// `v` when the non-⊥ RELAY values are exactly `{v}`, ⊥ otherwise.
pub fn resolve_phase2(collected: &ValueSet) -> Value {
    match collected.distinct_proposals().as_slice() {
        [v] => (*v).clone(),
        _ => Value::Bottom,
    }
}

/// `v` when every FILT1 value is `v`, ⊥ otherwise.
pub fn resolve_phase3(collected: &ValueSet) -> Value {
    let mut values = collected.values();
    match values.next() {
        Some(first) if !first.is_bottom() && values.all(|v| v == first) => first.clone(),
        _ => Value::Bottom,
    }
}

pub fn resolve_phase3_with(collected: &ValueSet, rules: Rules) -> Value {
    if rules.phase3_filter() {
        resolve_phase3(collected)
    } else {
        resolve_phase2(collected)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Phase4Outcome {
    /// Every FILT2 carries `v`.
    Decide(Value),
    /// FILT2 values are `{v, ⊥}`: continue with estimate `v`.
    Adopt(Value),
    /// Only ⊥: keep the current estimate.
    Retain,
    /// Two distinct non-⊥ values; unreachable under valid certificates.
    Conflict,
}

pub fn classify_phase4(collected: &ValueSet) -> Phase4Outcome {
    let proposals = collected.distinct_proposals();
    match proposals.as_slice() {
        [] => Phase4Outcome::Retain,
        [v] if collected.values().all(|x| x == *v) => Phase4Outcome::Decide((*v).clone()),
        [v] => Phase4Outcome::Adopt((*v).clone()),
        _ => Phase4Outcome::Conflict,
    }
}
