//! Post-hoc verification of traces.
//!
//! Every checker is a pure function of a [`Trace`]. Which processes are
//! correct comes from the trace header, never from observed behaviour. A
//! failing verdict always names the record index that witnesses it.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use crate::netsim::{bottom_digest, Record, RecordKind, Trace};
use crate::model::ProcessId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// The property's precondition does not hold for this run.
    NotApplicable,
    /// No guarantee is claimed for this run.
    Inconclusive,
    /// Holds because the situation it constrains never arose.
    VacuousPass,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::NotApplicable => "n/a",
            Status::Inconclusive => "inconclusive",
            Status::VacuousPass => "vacuous-pass",
        }
    }

    pub fn is_failure(self) -> bool {
        self == Status::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub property: &'static str,
    pub status: Status,
    /// Index into `trace.records` of the first violating record.
    pub witness: Option<usize>,
    pub explanation: String,
}

impl Verdict {
    fn pass(property: &'static str, explanation: impl Into<String>) -> Self {
        Verdict {
            property,
            status: Status::Pass,
            witness: None,
            explanation: explanation.into(),
        }
    }

    fn fail(property: &'static str, witness: usize, explanation: impl Into<String>) -> Self {
        Verdict {
            property,
            status: Status::Fail,
            witness: Some(witness),
            explanation: explanation.into(),
        }
    }

    fn other(property: &'static str, status: Status, explanation: impl Into<String>) -> Self {
        Verdict {
            property,
            status,
            witness: None,
            explanation: explanation.into(),
        }
    }
}

impl fmt::Display for Verdict {
    /// `property<TAB>status<TAB>witness<TAB>explanation`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let witness = self.witness.map_or_else(|| "-".to_string(), |w| w.to_string());
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.property,
            self.status.label(),
            witness,
            self.explanation
        )
    }
}

fn correct_decisions(trace: &Trace) -> impl Iterator<Item = (usize, &Record)> {
    trace
        .records
        .iter()
        .enumerate()
        .filter(move |(_, r)| r.kind == RecordKind::Decide && trace.header.is_correct(r.actor))
}

/// No two correct processes decide differently.
pub fn check_agreement(trace: &Trace) -> Verdict {
    const P: &str = "agreement";
    let mut first: Option<(&Record, usize)> = None;
    for (i, r) in correct_decisions(trace) {
        match first {
            None => first = Some((r, i)),
            Some((f, _)) if f.value != r.value => {
                return Verdict::fail(
                    P,
                    i,
                    format!(
                        "{} decided {} but {} decided {}",
                        r.actor,
                        r.value.as_deref().unwrap_or("-"),
                        f.actor,
                        f.value.as_deref().unwrap_or("-")
                    ),
                )
            }
            Some(_) => {}
        }
    }
    match first {
        Some((f, _)) => Verdict::pass(P, format!("all decisions are {}", f.value.as_deref().unwrap_or("-"))),
        None => Verdict::pass(P, "no correct process decided"),
    }
}

/// With a common correct proposal, every correct decision is that proposal.
pub fn check_validity(trace: &Trace) -> Verdict {
    const P: &str = "validity";
    let h = &trace.header;
    let proposals: BTreeSet<&String> = h.correct().filter_map(|p| h.proposals.get(&p)).collect();
    let common = match proposals.iter().collect::<Vec<_>>().as_slice() {
        [v] => (**v).clone(),
        _ => return Verdict::other(P, Status::NotApplicable, "correct processes proposed different values"),
    };
    for (i, r) in correct_decisions(trace) {
        if r.value.as_ref() != Some(&common) {
            return Verdict::fail(P, i, format!("{} decided a value nobody correct proposed", r.actor));
        }
    }
    Verdict::pass(P, format!("every decision is the common proposal {common}"))
}

/// Under a bw assignment, every correct process decides within the budget.
pub fn check_termination(trace: &Trace) -> Verdict {
    const P: &str = "termination";
    if trace.header.bw_pivot.is_none() {
        return Verdict::other(P, Status::Inconclusive, "no bw assignment, no termination guarantee");
    }
    let decided: BTreeSet<ProcessId> = correct_decisions(trace).map(|(_, r)| r.actor).collect();
    for p in trace.header.correct() {
        if !decided.contains(&p) {
            let witness = trace
                .records
                .iter()
                .rposition(|r| r.actor == p)
                .unwrap_or(trace.records.len().saturating_sub(1));
            return Verdict::fail(
                P,
                witness,
                format!("{p} never decided within {} rounds", trace.header.max_rounds),
            );
        }
    }
    Verdict::pass(P, format!("all {} correct processes decided", decided.len()))
}

/// Indices of deliveries that the receiving daemon accepted. A rejected
/// delivery is immediately followed by its Discard record.
fn accepted_deliveries(trace: &Trace) -> impl Iterator<Item = (usize, &Record)> {
    let recs = &trace.records;
    recs.iter().enumerate().filter(move |(i, r)| {
        r.kind == RecordKind::Deliver
            && !recs
                .get(i + 1)
                .map_or(false, |n| n.kind == RecordKind::Discard && n.actor == r.actor && n.msg == r.msg)
    })
}

/// At most one non-⊥ value is carried by FILT2 messages that correct
/// processes sent or accepted, per round.
pub fn check_unique_certified(trace: &Trace) -> Verdict {
    const P: &str = "unique-certified";
    let bottom = bottom_digest();
    let sent = trace
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.kind == RecordKind::Send && trace.header.is_correct(r.actor));
    let mut seen: BTreeMap<u32, String> = BTreeMap::new();
    let mut events: Vec<(usize, &Record)> = sent
        .chain(accepted_deliveries(trace).filter(|(_, r)| trace.header.is_correct(r.actor)))
        .filter(|(_, r)| r.msg_kind() == "FILT2")
        .collect();
    events.sort_by_key(|(i, _)| *i);
    for (i, r) in events {
        let (Some(round), Some(value)) = (r.round, r.value.as_ref()) else {
            continue;
        };
        if *value == bottom {
            continue;
        }
        match seen.get(&round) {
            Some(v) if v != value => {
                return Verdict::fail(
                    P,
                    i,
                    format!("round {round} has FILT2 values {v} and {value}"),
                )
            }
            Some(_) => {}
            None => {
                seen.insert(round, value.clone());
            }
        }
    }
    Verdict::pass(P, format!("{} rounds with a certified value, none split", seen.len()))
}

/// Earliest correct decision and a later-round query, when both exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Handoff {
    pub decided_round: u32,
    pub decision_record: usize,
}

/// The first correct decision round, if some correct process queried in a
/// later round.
pub fn find_handoff(trace: &Trace) -> Option<Handoff> {
    let (idx, r) = correct_decisions(trace).min_by_key(|(i, r)| (r.round.unwrap_or(u32::MAX), *i))?;
    let round = r.round?;
    let later_query = trace.records.iter().any(|q| {
        q.kind == RecordKind::Send
            && q.msg_kind() == "QUERY"
            && trace.header.is_correct(q.actor)
            && q.round.map_or(false, |qr| qr > round)
    });
    later_query.then_some(Handoff {
        decided_round: round,
        decision_record: idx,
    })
}

/// After a correct process decides v in round r, every correct QUERY of a
/// later round carries v and every decision is v.
pub fn check_round_handoff(trace: &Trace) -> Verdict {
    const P: &str = "round-handoff";
    let Some(handoff) = find_handoff(trace) else {
        return Verdict::other(P, Status::VacuousPass, "no correct process entered a round after a decision");
    };
    let decided = trace.records[handoff.decision_record].value.clone();
    for (i, r) in trace.records.iter().enumerate() {
        if !trace.header.is_correct(r.actor) {
            continue;
        }
        let later_query = r.kind == RecordKind::Send
            && r.msg_kind() == "QUERY"
            && r.round.map_or(false, |qr| qr > handoff.decided_round);
        if later_query && r.value != decided {
            return Verdict::fail(
                P,
                i,
                format!(
                    "{} queried round {} with an estimate other than the round-{} decision",
                    r.actor,
                    r.round.unwrap_or(0),
                    handoff.decided_round
                ),
            );
        }
        if r.kind == RecordKind::Decide && r.value != decided {
            return Verdict::fail(P, i, format!("{} decided differently after the handoff", r.actor));
        }
    }
    Verdict::pass(
        P,
        format!(
            "all estimates after round {} equal the decision",
            handoff.decided_round
        ),
    )
}

/// Every accepted message claiming a correct signer was sent by that signer
/// earlier in the run.
pub fn check_unforgeability(trace: &Trace) -> Verdict {
    const P: &str = "unforgeability";
    let mut sent: HashSet<(ProcessId, &str)> = HashSet::new();
    for (i, r) in trace.records.iter().enumerate() {
        if r.kind == RecordKind::Send {
            if let Some(m) = &r.msg {
                sent.insert((r.actor, m.as_str()));
            }
            continue;
        }
        if r.kind != RecordKind::Deliver {
            continue;
        }
        let accepted = !trace
            .records
            .get(i + 1)
            .map_or(false, |n| n.kind == RecordKind::Discard && n.actor == r.actor && n.msg == r.msg);
        let (Some(signer), Some(m)) = (r.peer, r.msg.as_deref()) else {
            continue;
        };
        if accepted && trace.header.is_correct(signer) && !sent.contains(&(signer, m)) {
            return Verdict::fail(P, i, format!("{} accepted {m} signed by {signer}, who never sent it", r.actor));
        }
    }
    Verdict::pass(P, "every accepted correct-signed message was sent by its signer")
}

/// All property checks in report order.
pub fn check_all(trace: &Trace) -> Vec<Verdict> {
    vec![
        check_agreement(trace),
        check_validity(trace),
        check_termination(trace),
        check_unique_certified(trace),
        check_round_handoff(trace),
        check_unforgeability(trace),
    ]
}

/// Rank of a message in the chain of broadcast phases: INIT is 1, each
/// round adds five (QUERY, RESPONSE, RELAY, FILT1, FILT2).
pub fn phase_rank(kind: &str, round: Option<u32>) -> Option<u32> {
    let base = 5 * round.unwrap_or(1).saturating_sub(1);
    Some(match kind {
        "INIT" => return Some(1),
        "QUERY" => 2 + base,
        "RESPONSE" => 3 + base,
        "RELAY" => 4 + base,
        "FILT1" => 5 + base,
        "FILT2" => 6 + base,
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Complexity {
    /// Phase rank of the quorum behind the first correct decision.
    pub steps_to_first_decision: Option<u32>,
    /// Longest causal chain of message hops ending at the first decision.
    pub hops_to_first_decision: Option<u32>,
    /// Send records (one per recipient, self included) per phase rank, up to
    /// the first decision's rank.
    pub messages_per_step: BTreeMap<u32, usize>,
    pub total_messages: usize,
    pub decision_rounds: BTreeMap<ProcessId, u32>,
}

pub fn measure_complexity(trace: &Trace) -> Complexity {
    let mut out = Complexity {
        total_messages: trace.records.iter().filter(|r| r.kind == RecordKind::Send).count(),
        ..Complexity::default()
    };
    for (_, r) in correct_decisions(trace) {
        if let Some(round) = r.round {
            out.decision_rounds.entry(r.actor).or_insert(round);
        }
    }
    let first = correct_decisions(trace).next();
    out.steps_to_first_decision = first.and_then(|(_, r)| phase_rank("FILT2", r.round));

    let mut depth_of: HashMap<&str, u32> = HashMap::new();
    let mut depth: HashMap<ProcessId, u32> = HashMap::new();
    for (i, r) in trace.records.iter().enumerate() {
        let Some(m) = r.msg.as_deref() else {
            if r.kind == RecordKind::Decide && first.map_or(false, |(fi, _)| fi == i) {
                out.hops_to_first_decision = Some(depth.get(&r.actor).copied().unwrap_or(0));
            }
            continue;
        };
        match r.kind {
            RecordKind::Send => {
                let d = depth.get(&r.actor).copied().unwrap_or(0) + 1;
                depth_of.entry(m).or_insert(d);
            }
            RecordKind::Deliver => {
                let d = depth_of.get(m).copied().unwrap_or(0);
                let mine = depth.entry(r.actor).or_insert(0);
                *mine = (*mine).max(d);
            }
            _ => {}
        }
    }
    if let Some(limit) = out.steps_to_first_decision {
        for r in trace.records.iter().filter(|r| r.kind == RecordKind::Send) {
            if let Some(rank) = phase_rank(r.msg_kind(), r.round) {
                if rank <= limit {
                    *out.messages_per_step.entry(rank).or_insert(0) += 1;
                }
            }
        }
    }
    out
}
