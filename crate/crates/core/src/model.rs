//! Identifiers, thresholds, round arithmetic and value collection shared by
//! every other module.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{MsgKind, SignedMessage};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("resilience violation: n = {n} and t = {t} do not satisfy n > 3t")]
    ResilienceViolation { n: usize, t: usize },
    #[error("a system needs at least two processes (n = {0})")]
    TooFewProcesses(usize),
    #[error("process index {index} outside [1, {n}]")]
    ProcessOutOfRange { index: usize, n: usize },
    #[error("rounds are numbered from 1")]
    ZeroRound,
    #[error("only {have} distinct senders, need {need}")]
    InsufficientMessages { have: usize, need: usize },
}

/// 1-based process identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProcessId(u32);

impl ProcessId {
    pub fn new(index: usize, params: SystemParams) -> Result<Self, ModelError> {
        if index == 0 || index > params.n() {
            return Err(ModelError::ProcessOutOfRange {
                index,
                n: params.n(),
            });
        }
        Ok(ProcessId(index as u32))
    }

    /// Builds an id without a range check; callers own the bound.
    pub const fn from_index(index: u32) -> Self {
        assert!(index >= 1);
        ProcessId(index)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Position in a 0-based array of per-process slots.
    pub fn slot(self) -> usize {
        self.0 as usize - 1
    }

    pub fn all(params: SystemParams) -> impl Iterator<Item = ProcessId> {
        (1..=params.n() as u32).map(ProcessId)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// `n` processes of which at most `t` are Byzantine, with `n > 3t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemParams {
    n: usize,
    t: usize,
}

impl SystemParams {
    pub fn new(n: usize, t: usize) -> Result<Self, ModelError> {
        if n < 2 {
            return Err(ModelError::TooFewProcesses(n));
        }
        if n <= 3 * t {
            return Err(ModelError::ResilienceViolation { n, t });
        }
        Ok(SystemParams { n, t })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Size of every quorum the protocol waits for.
    pub fn quorum(&self) -> usize {
        self.n - self.t
    }

    /// Occurrences an INIT value needs before it overrides the own proposal.
    pub fn init_threshold(&self) -> usize {
        self.n - 2 * self.t
    }
}

/// Returns `(n - t, n - 2t)`, rejecting configurations with `n <= 3t`.
pub fn quorum_thresholds(n: usize, t: usize) -> Result<(usize, usize), ModelError> {
    let params = SystemParams::new(n, t)?;
    Ok((params.quorum(), params.init_threshold()))
}

/// 1-based round number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Round(u32);

impl Round {
    pub const FIRST: Round = Round(1);

    pub fn new(r: u32) -> Result<Self, ModelError> {
        if r == 0 {
            return Err(ModelError::ZeroRound);
        }
        Ok(Round(r))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn next(self) -> Round {
        Round(self.0 + 1)
    }

    /// The preceding round, if any.
    pub fn prev(self) -> Option<Round> {
        (self.0 > 1).then(|| Round(self.0 - 1))
    }
}

impl fmt::Display for Round {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `((round - 1) mod n) + 1`: the rotating coordinator of a round.
pub fn coordinator_of(round: Round, params: SystemParams) -> ProcessId {
    ProcessId(((round.0 - 1) % params.n as u32) + 1)
}

/// A proposable payload, or the non-proposable default ⊥.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Bottom,
    Proposal(Arc<[u8]>),
}

impl Value {
    pub fn proposal(bytes: impl AsRef<[u8]>) -> Self {
        Value::Proposal(Arc::from(bytes.as_ref()))
    }

    pub fn is_bottom(&self) -> bool {
        matches!(self, Value::Bottom)
    }

    pub fn bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bottom => None,
            Value::Proposal(b) => Some(b),
        }
    }

    /// Tag byte, then length and payload for proposals.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        match self {
            Value::Bottom => vec![0],
            Value::Proposal(b) => {
                let mut out = Vec::with_capacity(9 + b.len());
                out.push(1);
                out.extend_from_slice(&(b.len() as u64).to_be_bytes());
                out.extend_from_slice(b);
                out
            }
        }
    }

    /// 16 hex characters identifying the value in traces.
    pub fn short_digest(&self) -> String {
        crate::auth::Digest::of(&self.canonical_bytes()).short()
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bottom => write!(f, "⊥"),
            Value::Proposal(b) => match std::str::from_utf8(b) {
                Ok(s) => write!(f, "{s:?}"),
                Err(_) => write!(f, "0x{}", hex::encode(b)),
            },
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Values collected for one phase, at most one per sender, in delivery order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValueSet {
    entries: Vec<(ProcessId, Value)>,
}

impl ValueSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry; returns false and leaves the set unchanged when the
    /// sender already has one.
    pub fn insert(&mut self, sender: ProcessId, value: Value) -> bool {
        if self.contains(sender) {
            return false;
        }
        self.entries.push((sender, value));
        true
    }

    pub fn contains(&self, sender: ProcessId) -> bool {
        self.entries.iter().any(|(p, _)| *p == sender)
    }

    pub fn get(&self, sender: ProcessId) -> Option<&Value> {
        self.entries
            .iter()
            .find(|(p, _)| *p == sender)
            .map(|(_, v)| v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(ProcessId, Value)> {
        self.entries.iter()
    }

    pub fn values(&self) -> impl Iterator<Item = &Value> {
        self.entries.iter().map(|(_, v)| v)
    }

    /// Distinct non-⊥ values, in first-seen order.
    pub fn distinct_proposals(&self) -> Vec<&Value> {
        let mut out: Vec<&Value> = Vec::new();
        for v in self.values().filter(|v| !v.is_bottom()) {
            if !out.contains(&v) {
                out.push(v);
            }
        }
        out
    }

    pub fn count(&self, value: &Value) -> usize {
        self.values().filter(|v| *v == value).count()
    }
}

impl FromIterator<(ProcessId, Value)> for ValueSet {
    fn from_iter<I: IntoIterator<Item = (ProcessId, Value)>>(iter: I) -> Self {
        let mut set = ValueSet::new();
        for (p, v) in iter {
            set.insert(p, v);
        }
        set
    }
}

/// Keeps the first `quorum` distinct-sender messages of the expected phase and
/// round, in delivery order. Later messages and repeats of a sender are ignored.
pub fn collect_values<'a, I>(
    messages: I,
    expected_kind: MsgKind,
    expected_round: Option<Round>,
    quorum: usize,
) -> Result<ValueSet, ModelError>
where
    I: IntoIterator<Item = &'a SignedMessage>,
{
    let mut set = ValueSet::new();
    for m in messages {
        if set.len() == quorum {
            break;
        }
        if m.kind() != expected_kind || m.round() != expected_round {
            continue;
        }
        set.insert(m.sender(), m.value().clone());
    }
    if set.len() < quorum {
        return Err(ModelError::InsufficientMessages {
            have: set.len(),
            need: quorum,
        });
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, t: usize) -> SystemParams {
        SystemParams::new(n, t).unwrap()
    }

    #[test]
    fn coordinator_rotation() {
        let p = params(4, 1);
        assert_eq!(coordinator_of(Round::new(1).unwrap(), p).index(), 1);
        assert_eq!(coordinator_of(Round::new(2).unwrap(), p).index(), 2);
        assert_eq!(coordinator_of(Round::new(5).unwrap(), p).index(), 1);
    }

    #[test]
    fn thresholds() {
        assert_eq!(quorum_thresholds(4, 1), Ok((3, 2)));
        assert_eq!(quorum_thresholds(7, 2), Ok((5, 3)));
        assert_eq!(
            quorum_thresholds(3, 1),
            Err(ModelError::ResilienceViolation { n: 3, t: 1 })
        );
        assert_eq!(quorum_thresholds(1, 0), Err(ModelError::TooFewProcesses(1)));
    }

    #[test]
    fn process_range_checked() {
        let p = params(4, 1);
        assert!(ProcessId::new(0, p).is_err());
        assert!(ProcessId::new(5, p).is_err());
        assert_eq!(ProcessId::new(4, p).unwrap().slot(), 3);
    }

    #[test]
    fn round_zero_rejected() {
        assert_eq!(Round::new(0), Err(ModelError::ZeroRound));
        assert_eq!(Round::FIRST.prev(), None);
        assert_eq!(Round::FIRST.next().prev(), Some(Round::FIRST));
    }

    #[test]
    fn bottom_is_distinct_from_every_payload() {
        assert_ne!(Value::Bottom, Value::proposal(b""));
        assert_ne!(Value::Bottom.canonical_bytes(), Value::proposal([0u8]).canonical_bytes());
        assert_eq!(Value::proposal("a"), Value::proposal(b"a".to_vec()));
    }

    #[test]
    fn value_set_keeps_one_entry_per_sender() {
        let a = Value::proposal("a");
        let mut set = ValueSet::new();
        assert!(set.insert(ProcessId(2), a.clone()));
        assert!(!set.insert(ProcessId(2), Value::Bottom));
        assert_eq!(set.get(ProcessId(2)), Some(&a));
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn two_values_cannot_both_reach_init_threshold() {
        for n in 4..=50usize {
            for t in 1..n {
                if 3 * t >= n {
                    break;
                }
                assert!(2 * (n - 2 * t) > n - t, "n={n} t={t}");
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn coordinator_has_period_n(n in 2usize..40, r in 1u32..10_000) {
                let p = SystemParams::new(n, (n - 1) / 3).unwrap();
                let a = coordinator_of(Round::new(r).unwrap(), p);
                let b = coordinator_of(Round::new(r + n as u32).unwrap(), p);
                prop_assert_eq!(a, b);
            }

            #[test]
            fn every_process_coordinates_once_per_window(n in 2usize..40, start in 1u32..1000) {
                let p = SystemParams::new(n, (n - 1) / 3).unwrap();
                let mut seen = vec![0usize; n];
                for r in start..start + n as u32 {
                    seen[coordinator_of(Round::new(r).unwrap(), p).slot()] += 1;
                }
                prop_assert!(seen.iter().all(|&c| c == 1));
            }

            #[test]
            fn value_set_never_repeats_sender(entries in proptest::collection::vec((1u32..8, 0u8..3), 0..30)) {
                let set: ValueSet = entries
                    .into_iter()
                    .map(|(p, v)| (ProcessId(p), Value::proposal([v])))
                    .collect();
                let mut senders: Vec<_> = set.iter().map(|(p, _)| *p).collect();
                let before = senders.len();
                senders.sort();
                senders.dedup();
                prop_assert_eq!(before, senders.len());
            }
        }
    }
}
