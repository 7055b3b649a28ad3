use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

use super::{Digest, Keyring, MsgKind, SignedMessage};
use crate::engine::{init_majority, resolve_phase2, resolve_phase3_with};
use crate::model::{coordinator_of, ProcessId, Round, SystemParams, Value, ValueSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CertKind {
    /// n−t INIT messages; justifies the round-1 estimate.
    InitQuorum,
    /// The QUERY whose estimate a coordinator adopted; carried by its RESPONSE.
    AdoptedQuery,
    /// One coordinator-signed RESPONSE; justifies RELAY(v).
    CoordResponse,
    /// n−t RESPONSEs; justifies RELAY(⊥).
    ResponseQuorum,
    RelayQuorum,
    Filt1Quorum,
    /// n−t FILT2 of the previous round holding a non-⊥ value.
    Filt2Quorum,
    DecQuorum,
    /// n−t all-⊥ FILT2 of the previous round plus the estimate's older proof.
    ChainedEstimate,
}

impl CertKind {
    fn code(self) -> u8 {
        match self {
            CertKind::InitQuorum => 1,
            CertKind::AdoptedQuery => 2,
            CertKind::CoordResponse => 3,
            CertKind::ResponseQuorum => 4,
            CertKind::RelayQuorum => 5,
            CertKind::Filt1Quorum => 6,
            CertKind::Filt2Quorum => 7,
            CertKind::DecQuorum => 8,
            CertKind::ChainedEstimate => 9,
        }
    }

    /// Kind of message the evidence consists of.
    pub fn evidence_kind(self) -> MsgKind {
        match self {
            CertKind::InitQuorum => MsgKind::Init,
            CertKind::AdoptedQuery => MsgKind::Query,
            CertKind::CoordResponse | CertKind::ResponseQuorum => MsgKind::Response,
            CertKind::RelayQuorum => MsgKind::Relay,
            CertKind::Filt1Quorum => MsgKind::Filt1,
            CertKind::Filt2Quorum | CertKind::DecQuorum | CertKind::ChainedEstimate => {
                MsgKind::Filt2
            }
        }
    }

    fn arity(self, params: SystemParams) -> usize {
        match self {
            CertKind::AdoptedQuery | CertKind::CoordResponse => 1,
            _ => params.quorum(),
        }
    }
}

struct CertInner {
    kind: CertKind,
    evidence: Vec<SignedMessage>,
    nested: Option<Certificate>,
    digest: Digest,
}

/// Evidence justifying a carried value. Immutable; clones share storage.
#[derive(Clone)]
pub struct Certificate(Arc<CertInner>);

impl Certificate {
    pub fn kind(&self) -> CertKind {
        self.0.kind
    }

    pub fn evidence(&self) -> &[SignedMessage] {
        &self.0.evidence
    }

    pub fn nested(&self) -> Option<&Certificate> {
        self.0.nested.as_ref()
    }

    pub fn digest(&self) -> Digest {
        self.0.digest
    }

    /// Round shared by the evidence (none for INIT evidence).
    pub fn round(&self) -> Option<Round> {
        self.0.evidence.first().and_then(|m| m.round())
    }

    pub fn values(&self) -> ValueSet {
        self.0
            .evidence
            .iter()
            .map(|m| (m.sender(), m.value().clone()))
            .collect()
    }

    /// Assembles a certificate without any checks. Lets adversaries and tests
    /// produce malformed evidence; everything honest goes through
    /// [`build_certificate`].
    pub fn assemble_unchecked(
        kind: CertKind,
        evidence: Vec<SignedMessage>,
        nested: Option<Certificate>,
    ) -> Certificate {
        let mut h = Sha256::new();
        h.update(b"cert");
        h.update([kind.code()]);
        h.update((evidence.len() as u32).to_be_bytes());
        for m in &evidence {
            h.update(m.digest().as_bytes());
        }
        match &nested {
            Some(c) => {
                h.update([1]);
                h.update(c.digest().as_bytes());
            }
            None => h.update([0]),
        }
        let digest = Digest(h.finalize().into());
        Certificate(Arc::new(CertInner {
            kind,
            evidence,
            nested,
            digest,
        }))
    }
}

impl fmt::Debug for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Certificate")
            .field("kind", &self.0.kind)
            .field("evidence", &self.0.evidence)
            .field("nested", &self.0.nested.as_ref().map(|c| c.kind()))
            .finish()
    }
}

/// Why a certificate (or a message inside one) is not acceptable.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Reject {
    #[error("wrong arity: expected {expected}, got {got}")]
    WrongArity { expected: usize, got: usize },
    #[error("wrong phase")]
    WrongPhase,
    #[error("wrong round")]
    WrongRound,
    #[error("value mismatch")]
    ValueMismatch,
    #[error("duplicate sender {0}")]
    DuplicateSender(ProcessId),
    #[error("bad signature")]
    BadSignature,
    #[error("malformed message: {0}")]
    Malformed(&'static str),
}

impl Reject {
    pub fn code(&self) -> &'static str {
        match self {
            Reject::WrongArity { .. } => "wrong-arity",
            Reject::WrongPhase => "wrong-phase",
            Reject::WrongRound => "wrong-round",
            Reject::ValueMismatch => "value-mismatch",
            Reject::DuplicateSender(_) => "duplicate-sender",
            Reject::BadSignature => "bad-signature",
            Reject::Malformed(_) => "malformed",
        }
    }
}

/// Protocol-rule switches. The only one is the phase-3 unanimity filter,
/// which can be turned off in debug builds to show the checkers notice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rules {
    phase3_filter: bool,
}

impl Default for Rules {
    fn default() -> Self {
        Rules {
            phase3_filter: true,
        }
    }
}

impl Rules {
    pub fn phase3_filter(&self) -> bool {
        self.phase3_filter
    }

    /// Replaces the phase-3 unanimity test with the phase-2 singleton test,
    /// both in the engine and in certificate validation.
    #[cfg(debug_assertions)]
    pub fn without_phase3_filter() -> Self {
        Rules {
            phase3_filter: false,
        }
    }
}

/// The statement a certificate has to justify: `sender` may send
/// `kind(round, value)`.
#[derive(Debug, Clone, Copy)]
pub struct Claim<'a> {
    pub kind: MsgKind,
    pub round: Option<Round>,
    pub value: &'a Value,
    pub sender: ProcessId,
}

impl<'a> Claim<'a> {
    pub fn of(message: &'a SignedMessage) -> Self {
        Claim {
            kind: message.kind(),
            round: message.round(),
            value: message.value(),
            sender: message.sender(),
        }
    }
}

/// Checks messages and certificates, remembering every message it has
/// already found valid.
#[derive(Clone)]
pub struct Validator {
    keyring: Keyring,
    params: SystemParams,
    rules: Rules,
    valid: HashSet<(Digest, [u8; 32])>,
}

impl fmt::Debug for Validator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Validator")
            .field("params", &self.params)
            .field("rules", &self.rules)
            .field("cached", &self.valid.len())
            .finish()
    }
}

impl Validator {
    pub fn new(keyring: Keyring, params: SystemParams, rules: Rules) -> Self {
        Validator {
            keyring,
            params,
            rules,
            valid: HashSet::new(),
        }
    }

    pub fn params(&self) -> SystemParams {
        self.params
    }

    pub fn rules(&self) -> Rules {
        self.rules
    }

    pub fn keyring(&self) -> &Keyring {
        &self.keyring
    }

    /// Syntactic shape of a message, independent of its certificate content.
    pub fn check_form(&self, m: &SignedMessage) -> Result<(), Reject> {
        let has_cert = m.certificate().is_some();
        if m.sender().index() > self.params.n() {
            return Err(Reject::Malformed("sender outside the system"));
        }
        match m.kind() {
            MsgKind::Init => {
                if m.round().is_some() {
                    return Err(Reject::Malformed("INIT carries a round"));
                }
                if m.value().is_bottom() {
                    return Err(Reject::Malformed("⊥ proposed"));
                }
                if has_cert {
                    return Err(Reject::Malformed("INIT carries a certificate"));
                }
            }
            kind => {
                let round = m.round().ok_or(Reject::Malformed("missing round"))?;
                let needs_value = matches!(kind, MsgKind::Query | MsgKind::Dec);
                if needs_value && m.value().is_bottom() {
                    return Err(Reject::Malformed("⊥ where a value is required"));
                }
                let coordinator = coordinator_of(round, self.params);
                let needs_cert = kind != MsgKind::Response || m.sender() == coordinator;
                if needs_cert && !has_cert {
                    return Err(Reject::Malformed("missing certificate"));
                }
                if !needs_cert && has_cert {
                    return Err(Reject::Malformed("unexpected certificate"));
                }
                if kind == MsgKind::Response && needs_cert && m.value().is_bottom() {
                    return Err(Reject::Malformed("coordinator response carries ⊥"));
                }
            }
        }
        Ok(())
    }

    /// Full validity: signature, shape and certificate, recursively.
    pub fn check_message(&mut self, m: &SignedMessage) -> Result<(), Reject> {
        if self.valid.contains(&m.identity()) {
            return Ok(());
        }
        if !self.keyring.verify(m) {
            return Err(Reject::BadSignature);
        }
        self.check_form(m)?;
        if let Some(cert) = m.certificate() {
            self.validate_certificate(cert, &Claim::of(m))?;
        }
        self.valid.insert(m.identity());
        Ok(())
    }

    /// Accepts iff `claim.value` is the value the evidence certifies for
    /// `claim.kind` at `claim.round`.
    pub fn validate_certificate(&mut self, cert: &Certificate, claim: &Claim<'_>) -> Result<(), Reject> {
        let round = match claim.round {
            Some(r) => r,
            None => return Err(Reject::Malformed("certificate for a message without round")),
        };
        if cert.nested().is_some() && cert.kind() != CertKind::ChainedEstimate {
            return Err(Reject::Malformed("nested certificate outside a chain"));
        }
        match claim.kind {
            MsgKind::Init => Err(Reject::Malformed("INIT carries no certificate")),
            MsgKind::Query => self.validate_estimate(cert, round, claim.value, claim.sender),
            MsgKind::Response => {
                expect_kind(cert, CertKind::AdoptedQuery)?;
                let query = self.single_evidence(cert, MsgKind::Query, round)?;
                if query.value() != claim.value {
                    return Err(Reject::ValueMismatch);
                }
                Ok(())
            }
            MsgKind::Relay => {
                if claim.value.is_bottom() {
                    expect_kind(cert, CertKind::ResponseQuorum)?;
                    self.quorum_evidence(cert, MsgKind::Response, Some(round))?;
                    Ok(())
                } else {
                    expect_kind(cert, CertKind::CoordResponse)?;
                    let response = self.single_evidence(cert, MsgKind::Response, round)?;
                    if response.sender() != coordinator_of(round, self.params) {
                        return Err(Reject::WrongPhase);
                    }
                    if response.value() != claim.value {
                        return Err(Reject::ValueMismatch);
                    }
                    Ok(())
                }
            }
            MsgKind::Filt1 => {
                expect_kind(cert, CertKind::RelayQuorum)?;
                let set = self.quorum_evidence(cert, MsgKind::Relay, Some(round))?;
                expect_value(&resolve_phase2(&set), claim.value)
            }
            MsgKind::Filt2 => {
                expect_kind(cert, CertKind::Filt1Quorum)?;
                let set = self.quorum_evidence(cert, MsgKind::Filt1, Some(round))?;
                expect_value(&resolve_phase3_with(&set, self.rules), claim.value)
            }
            MsgKind::Dec => {
                expect_kind(cert, CertKind::DecQuorum)?;
                let set = self.quorum_evidence(cert, MsgKind::Filt2, Some(round))?;
                if set.values().all(|v| v == claim.value) {
                    Ok(())
                } else {
                    Err(Reject::ValueMismatch)
                }
            }
        }
    }

    fn validate_estimate(
        &mut self,
        cert: &Certificate,
        round: Round,
        est: &Value,
        sender: ProcessId,
    ) -> Result<(), Reject> {
        if est.is_bottom() {
            return Err(Reject::ValueMismatch);
        }
        match round.prev() {
            None => {
                expect_kind(cert, CertKind::InitQuorum)?;
                let set = self.quorum_evidence(cert, MsgKind::Init, None)?;
                if let Some(forced) = init_majority(&set, self.params) {
                    return expect_value(&forced, est);
                }
                match set.get(sender) {
                    Some(own) if own == est => Ok(()),
                    _ => Err(Reject::ValueMismatch),
                }
            }
            Some(prev) => match cert.kind() {
                CertKind::Filt2Quorum => {
                    let set = self.quorum_evidence(cert, MsgKind::Filt2, Some(prev))?;
                    match set.distinct_proposals().as_slice() {
                        [v] if *v == est => Ok(()),
                        _ => Err(Reject::ValueMismatch),
                    }
                }
                CertKind::ChainedEstimate => {
                    let set = self.quorum_evidence(cert, MsgKind::Filt2, Some(prev))?;
                    if !set.values().all(Value::is_bottom) {
                        return Err(Reject::ValueMismatch);
                    }
                    let older = cert
                        .nested()
                        .ok_or(Reject::Malformed("chain without earlier estimate"))?;
                    self.validate_estimate(older, prev, est, sender)
                }
                _ => Err(Reject::WrongPhase),
            },
        }
    }

    fn single_evidence<'c>(
        &mut self,
        cert: &'c Certificate,
        kind: MsgKind,
        round: Round,
    ) -> Result<&'c SignedMessage, Reject> {
        let evidence = cert.evidence();
        if evidence.len() != 1 {
            return Err(Reject::WrongArity {
                expected: 1,
                got: evidence.len(),
            });
        }
        let m = &evidence[0];
        if m.kind() != kind {
            return Err(Reject::WrongPhase);
        }
        if m.round() != Some(round) {
            return Err(Reject::WrongRound);
        }
        self.check_message(m)?;
        Ok(m)
    }

    fn quorum_evidence(
        &mut self,
        cert: &Certificate,
        kind: MsgKind,
        round: Option<Round>,
    ) -> Result<ValueSet, Reject> {
        check_structure(self.params, cert.kind(), cert.evidence(), kind, round)?;
        for m in cert.evidence() {
            self.check_message(m)?;
        }
        Ok(cert.values())
    }
}

fn expect_kind(cert: &Certificate, kind: CertKind) -> Result<(), Reject> {
    if cert.kind() == kind {
        Ok(())
    } else {
        Err(Reject::WrongPhase)
    }
}

fn expect_value(certified: &Value, claimed: &Value) -> Result<(), Reject> {
    if certified == claimed {
        Ok(())
    } else {
        Err(Reject::ValueMismatch)
    }
}

fn check_structure(
    params: SystemParams,
    kind: CertKind,
    evidence: &[SignedMessage],
    evidence_kind: MsgKind,
    round: Option<Round>,
) -> Result<(), Reject> {
    let expected = kind.arity(params);
    if evidence.len() != expected {
        return Err(Reject::WrongArity {
            expected,
            got: evidence.len(),
        });
    }
    let mut senders = HashSet::new();
    for m in evidence {
        if m.kind() != evidence_kind {
            return Err(Reject::WrongPhase);
        }
        if m.round() != round {
            return Err(Reject::WrongRound);
        }
        if !senders.insert(m.sender()) {
            return Err(Reject::DuplicateSender(m.sender()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed evidence: {0}")]
pub struct MalformedEvidence(pub Reject);

/// Builds a certificate after checking arity, phase, round agreement, sender
/// distinctness and evidence signatures.
pub fn build_certificate(
    keyring: &Keyring,
    params: SystemParams,
    kind: CertKind,
    evidence: Vec<SignedMessage>,
    nested: Option<Certificate>,
) -> Result<Certificate, MalformedEvidence> {
    let round = evidence.first().and_then(|m| m.round());
    check_structure(params, kind, &evidence, kind.evidence_kind(), round).map_err(MalformedEvidence)?;
    if kind != CertKind::InitQuorum && round.is_none() {
        return Err(MalformedEvidence(Reject::WrongRound));
    }
    if evidence.iter().any(|m| !keyring.verify(m)) {
        return Err(MalformedEvidence(Reject::BadSignature));
    }
    match (kind, &nested) {
        (CertKind::ChainedEstimate, None) => {
            return Err(MalformedEvidence(Reject::Malformed("chain without earlier estimate")))
        }
        (CertKind::ChainedEstimate, Some(_)) | (_, None) => {}
        (_, Some(_)) => {
            return Err(MalformedEvidence(Reject::Malformed(
                "nested certificate outside a chain",
            )))
        }
    }
    Ok(Certificate::assemble_unchecked(kind, evidence, nested))
}
