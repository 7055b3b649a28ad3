//! The set of simulated processes and how one input to one of them unfolds.
//!
//! Scheduling is left to the caller (the discrete-event simulator or the
//! exhaustive explorer). A process's messages to itself are handled here,
//! immediately after the step that produced them.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use sha2::{Digest as _, Sha256};

use super::trace::{bottom_digest, Record, RecordKind};
use crate::adversary::{Adversary, ByzContext, Emission, Stimulus, Strategy};
use crate::auth::{Digest, Keyring, MsgKind, SignedMessage};
use crate::engine::{Action, Destination, Engine, EngineOptions, Event, Phase, TimerHandle};
use crate::model::{ProcessId, SystemParams, Value};

#[derive(Debug, Clone)]
pub enum Input {
    Start(Value),
    Deliver(SignedMessage),
    Timer(TimerHandle),
}

#[derive(Clone)]
pub enum Node {
    Correct(Engine),
    Byzantine(Box<dyn Adversary>),
}

/// A message leaving a process for another one.
#[derive(Debug, Clone)]
pub struct Outgoing {
    pub from: ProcessId,
    pub to: ProcessId,
    pub message: SignedMessage,
    pub extra_delay: u64,
}

#[derive(Debug, Clone)]
pub enum Effect {
    Send(Outgoing),
    SetTimer {
        at: ProcessId,
        handle: TimerHandle,
        duration: u64,
    },
    CancelTimer {
        at: ProcessId,
        handle: TimerHandle,
    },
}

/// Safety-relevant facts observed so far at correct processes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct SafetyLog {
    pub decisions: BTreeMap<ProcessId, String>,
    /// Non-⊥ FILT2 values accepted or sent by correct processes, per round.
    pub filt2: BTreeMap<u32, BTreeSet<String>>,
}

#[derive(Clone)]
pub struct World {
    params: SystemParams,
    nodes: Vec<Node>,
    safety: SafetyLog,
}

impl World {
    pub fn new(
        params: SystemParams,
        keyring: &Keyring,
        options: EngineOptions,
        byzantine: &BTreeMap<ProcessId, Strategy>,
    ) -> Self {
        let nodes = ProcessId::all(params)
            .map(|p| match byzantine.get(&p) {
                Some(strategy) => Node::Byzantine(strategy.build(ByzContext {
                    signer: keyring.signer(p),
                    keyring: keyring.clone(),
                    params,
                    options,
                })),
                None => Node::Correct(Engine::new(keyring.signer(p), keyring.clone(), params, options)),
            })
            .collect();
        World {
            params,
            nodes,
            safety: SafetyLog::default(),
        }
    }

    pub fn params(&self) -> SystemParams {
        self.params
    }

    pub fn engine(&self, p: ProcessId) -> Option<&Engine> {
        match &self.nodes[p.slot()] {
            Node::Correct(e) => Some(e),
            Node::Byzantine(_) => None,
        }
    }

    pub fn is_correct(&self, p: ProcessId) -> bool {
        matches!(self.nodes[p.slot()], Node::Correct(_))
    }

    /// Whether every correct process has decided or halted.
    pub fn correct_done(&self) -> bool {
        self.nodes.iter().all(|n| match n {
            Node::Correct(e) => matches!(e.phase(), Phase::Decided | Phase::Halted),
            Node::Byzantine(_) => true,
        })
    }

    pub fn safety(&self) -> &SafetyLog {
        &self.safety
    }

    pub fn state_digest(&self) -> Digest {
        let mut h = Sha256::new();
        for node in &self.nodes {
            let d = match node {
                Node::Correct(e) => e.state_digest(),
                Node::Byzantine(a) => a.state_digest(),
            };
            h.update(d.as_bytes());
        }
        for (p, v) in &self.safety.decisions {
            h.update(p.index().to_be_bytes());
            h.update(v.as_bytes());
        }
        for (r, vs) in &self.safety.filt2 {
            h.update(r.to_be_bytes());
            for v in vs {
                h.update(v.as_bytes());
            }
        }
        Digest::of(&h.finalize())
    }

    /// Feeds `input` to process `at`, then drains its self-deliveries.
    pub fn apply(
        &mut self,
        now: u64,
        at: ProcessId,
        input: Input,
        effects: &mut Vec<Effect>,
        records: &mut Vec<Record>,
    ) {
        let mut local = VecDeque::from([input]);
        while let Some(input) = local.pop_front() {
            let correct = self.is_correct(at);
            let emissions = match input {
                Input::Start(v) => self.feed(at, Event::Start(v), records, now),
                Input::Timer(handle) => {
                    records.push(Record {
                        time: now,
                        kind: RecordKind::TimerFire,
                        actor: at,
                        peer: None,
                        round: Some(handle.0),
                        phase: "TIMER".into(),
                        msg: None,
                        value: None,
                    });
                    self.feed(at, Event::TimerExpiry(handle), records, now)
                }
                Input::Deliver(m) => {
                    records.push(message_record(now, RecordKind::Deliver, at, Some(m.sender()), &m));
                    let before = records.len();
                    let emissions = self.feed(at, Event::MessageDelivery(m.clone()), records, now);
                    let discarded = records[before..]
                        .first()
                        .map_or(false, |r| r.kind == RecordKind::Discard);
                    if correct && !discarded && m.kind() == MsgKind::Filt2 && !m.value().is_bottom() {
                        self.note_filt2(&m);
                    }
                    emissions
                }
            };
            for Emission { action, extra_delay } in emissions {
                match action {
                    Action::Send { to, message } => {
                        if correct && message.kind() == MsgKind::Filt2 && !message.value().is_bottom() {
                            self.note_filt2(&message);
                        }
                        let recipients: Vec<ProcessId> = match to {
                            Destination::All => ProcessId::all(self.params).collect(),
                            Destination::To(p) => vec![p],
                        };
                        for to in recipients {
                            records.push(message_record(now, RecordKind::Send, at, Some(to), &message));
                            if to == at {
                                local.push_back(Input::Deliver(message.clone()));
                            } else {
                                effects.push(Effect::Send(Outgoing {
                                    from: at,
                                    to,
                                    message: message.clone(),
                                    extra_delay,
                                }));
                            }
                        }
                    }
                    Action::SetTimer { duration, handle } => {
                        records.push(Record {
                            time: now,
                            kind: RecordKind::TimerSet,
                            actor: at,
                            peer: None,
                            round: Some(handle.0),
                            phase: "TIMER".into(),
                            msg: None,
                            value: Some(format!("d={duration}")),
                        });
                        effects.push(Effect::SetTimer {
                            at,
                            handle,
                            duration,
                        });
                    }
                    Action::DisableTimer { handle } => effects.push(Effect::CancelTimer { at, handle }),
                    Action::Decide(v) => {
                        let round = self.engine(at).and_then(|e| e.decided_round()).map(|r| r.get());
                        let digest = v.short_digest();
                        self.safety.decisions.insert(at, digest.clone());
                        records.push(Record {
                            time: now,
                            kind: RecordKind::Decide,
                            actor: at,
                            peer: None,
                            round,
                            phase: "DEC".into(),
                            msg: None,
                            value: Some(digest),
                        });
                    }
                    Action::Halt => {
                        let round = self.engine(at).and_then(|e| e.current_round()).map(|r| r.get());
                        records.push(Record {
                            time: now,
                            kind: RecordKind::Halt,
                            actor: at,
                            peer: None,
                            round,
                            phase: "HALT".into(),
                            msg: None,
                            value: None,
                        });
                    }
                }
            }
        }
    }

    fn note_filt2(&mut self, m: &SignedMessage) {
        let round = m.round().map_or(0, |r| r.get());
        self.safety.filt2.entry(round).or_default().insert(m.value().short_digest());
    }

    fn feed(&mut self, at: ProcessId, event: Event, records: &mut Vec<Record>, now: u64) -> Vec<Emission> {
        match &mut self.nodes[at.slot()] {
            Node::Correct(engine) => {
                let message = match &event {
                    Event::MessageDelivery(m) => Some(m.clone()),
                    _ => None,
                };
                match engine.step(event) {
                    Ok(actions) => actions
                        .into_iter()
                        .map(|action| Emission {
                            action,
                            extra_delay: 0,
                        })
                        .collect(),
                    Err(reason) => {
                        let m = message.expect("only deliveries are discarded");
                        let mut r = message_record(now, RecordKind::Discard, at, Some(m.sender()), &m);
                        r.phase = format!("{}:{}", r.phase, reason.code());
                        records.push(r);
                        Vec::new()
                    }
                }
            }
            Node::Byzantine(adversary) => adversary.act(match event {
                Event::Start(v) => Stimulus::Start(v),
                Event::MessageDelivery(m) => Stimulus::Delivered(m),
                Event::TimerExpiry(h) => Stimulus::Timer(h),
            }),
        }
    }
}

fn message_record(
    now: u64,
    kind: RecordKind,
    actor: ProcessId,
    peer: Option<ProcessId>,
    m: &SignedMessage,
) -> Record {
    Record {
        time: now,
        kind,
        actor,
        peer,
        round: m.round().map(|r| r.get()),
        phase: m.kind().label().to_string(),
        msg: Some(m.digest().short()),
        value: Some(if m.value().is_bottom() {
            bottom_digest()
        } else {
            m.value().short_digest()
        }),
    }
}
