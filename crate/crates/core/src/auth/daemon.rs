use std::collections::HashSet;

use thiserror::Error;

use super::{Claim, MsgKind, Reject, SignedMessage, Validator};
use crate::model::{ProcessId, Round};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Discard {
    #[error("bad signature")]
    BadSignature,
    #[error("malformed: {0}")]
    Malformed(&'static str),
    #[error("duplicate")]
    Duplicate,
    #[error("stale round")]
    StaleRound,
    #[error("bad certificate: {0}")]
    BadCertificate(Reject),
}

impl Discard {
    pub fn code(&self) -> &'static str {
        match self {
            Discard::BadSignature => "bad-signature",
            Discard::Malformed(_) => "malformed",
            Discard::Duplicate => "duplicate",
            Discard::StaleRound => "stale-round",
            Discard::BadCertificate(_) => "bad-certificate",
        }
    }
}

/// Per-process receive filter. Only accepted messages reach the engine.
#[derive(Debug, Clone)]
pub struct Daemon {
    validator: Validator,
    accepted: HashSet<(ProcessId, MsgKind, Option<Round>)>,
}

impl Daemon {
    pub fn new(validator: Validator) -> Self {
        Daemon {
            validator,
            accepted: HashSet::new(),
        }
    }

    pub fn validator(&mut self) -> &mut Validator {
        &mut self.validator
    }

    /// Accepts iff the signature verifies, the message is well formed, it is
    /// not a repeat of an accepted (sender, kind, round), it is not from a
    /// round the receiver has left, and its certificate validates.
    ///
    /// QUERY and DEC are exempt from the staleness test: a late QUERY must
    /// still be answered, and a DEC is decisive whenever it arrives.
    pub fn filter(&mut self, current_round: Option<Round>, m: &SignedMessage) -> Result<(), Discard> {
        if !self.validator.keyring().verify(m) {
            return Err(Discard::BadSignature);
        }
        self.validator.check_form(m).map_err(|e| match e {
            Reject::Malformed(why) => Discard::Malformed(why),
            other => Discard::BadCertificate(other),
        })?;
        if let (Some(current), Some(r)) = (current_round, m.round()) {
            let exempt = matches!(m.kind(), MsgKind::Query | MsgKind::Dec);
            if r < current && !exempt {
                return Err(Discard::StaleRound);
            }
        }
        let key = (m.sender(), m.kind(), m.round());
        if self.accepted.contains(&key) {
            return Err(Discard::Duplicate);
        }
        if let Some(cert) = m.certificate() {
            self.validator
                .validate_certificate(cert, &Claim::of(m))
                .map_err(Discard::BadCertificate)?;
        }
        // Remember it as valid evidence for later certificates.
        let _ = self.validator.check_message(m);
        self.accepted.insert(key);
        Ok(())
    }
}
