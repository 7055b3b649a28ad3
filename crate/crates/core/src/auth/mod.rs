//! Signed protocol messages, certificates and the receive-side filter.
//!
//! Every message a process emits is signed through a [`Signer`] that is bound
//! to exactly one process id. Signers come from a [`Keyring`], which is owned
//! by whoever sets up the system (the simulator); a Byzantine strategy is only
//! ever handed its own signer, so it cannot produce a message that verifies as
//! coming from anyone else. Messages that carry a value justify it with a
//! [`Certificate`]: the signed messages of the previous step from which the
//! value follows under the protocol's transition rules.

mod cert;
mod daemon;

use std::fmt;
use std::sync::Arc;

use sha2::{Digest as _, Sha256};

use crate::model::{ProcessId, Round, Value};

pub use cert::{
    build_certificate, CertKind, Certificate, Claim, MalformedEvidence, Reject, Rules, Validator,
};
pub use daemon::{Daemon, Discard};

/// SHA-256 over canonical bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest([u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// First 16 hex characters, the form used in traces.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..8])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.short())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MsgKind {
    Init,
    Query,
    Response,
    Relay,
    Filt1,
    Filt2,
    Dec,
}

impl MsgKind {
    pub const ALL: [MsgKind; 7] = [
        MsgKind::Init,
        MsgKind::Query,
        MsgKind::Response,
        MsgKind::Relay,
        MsgKind::Filt1,
        MsgKind::Filt2,
        MsgKind::Dec,
    ];

    fn code(self) -> u8 {
        match self {
            MsgKind::Init => 1,
            MsgKind::Query => 2,
            MsgKind::Response => 3,
            MsgKind::Relay => 4,
            MsgKind::Filt1 => 5,
            MsgKind::Filt2 => 6,
            MsgKind::Dec => 7,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MsgKind::Init => "INIT",
            MsgKind::Query => "QUERY",
            MsgKind::Response => "RESPONSE",
            MsgKind::Relay => "RELAY",
            MsgKind::Filt1 => "FILT1",
            MsgKind::Filt2 => "FILT2",
            MsgKind::Dec => "DEC",
        }
    }

    pub fn from_label(s: &str) -> Option<MsgKind> {
        MsgKind::ALL.into_iter().find(|k| k.label() == s)
    }
}

impl fmt::Display for MsgKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Pluggable signature scheme. The default is [`SimulatedBackend`]; a real
/// public-key scheme can be dropped in behind the same two calls.
pub trait SignatureBackend: Send + Sync {
    fn tag(&self, signer: ProcessId, digest: &Digest) -> [u8; 32];
    fn verify(&self, signer: ProcessId, digest: &Digest, tag: &[u8; 32]) -> bool;
}

/// Keyed-hash signatures whose per-process secrets never leave the backend.
pub struct SimulatedBackend {
    secrets: Vec<[u8; 32]>,
}

impl SimulatedBackend {
    pub fn new(n: usize, seed: u64) -> Self {
        let secrets = (1..=n as u32)
            .map(|id| {
                let mut h = Sha256::new();
                h.update(b"bw-consensus/simulated-key");
                h.update(seed.to_be_bytes());
                h.update(id.to_be_bytes());
                h.finalize().into()
            })
            .collect();
        SimulatedBackend { secrets }
    }

    fn secret(&self, signer: ProcessId) -> Option<&[u8; 32]> {
        self.secrets.get(signer.slot())
    }
}

impl SignatureBackend for SimulatedBackend {
    fn tag(&self, signer: ProcessId, digest: &Digest) -> [u8; 32] {
        let secret = self
            .secret(signer)
            .expect("signer handed out for an id the keyring does not know");
        let mut h = Sha256::new();
        h.update(secret);
        h.update(digest.as_bytes());
        h.finalize().into()
    }

    fn verify(&self, signer: ProcessId, digest: &Digest, tag: &[u8; 32]) -> bool {
        match self.secret(signer) {
            Some(_) => &self.tag(signer, digest) == tag,
            None => false,
        }
    }
}

/// Hands out per-process signers and verifies signatures.
#[derive(Clone)]
pub struct Keyring {
    backend: Arc<dyn SignatureBackend>,
}

impl Keyring {
    pub fn simulated(n: usize, seed: u64) -> Self {
        Keyring {
            backend: Arc::new(SimulatedBackend::new(n, seed)),
        }
    }

    pub fn with_backend(backend: Arc<dyn SignatureBackend>) -> Self {
        Keyring { backend }
    }

    /// The signing capability of `id`. Whoever holds the keyring decides who
    /// receives which signer.
    pub fn signer(&self, id: ProcessId) -> Signer {
        Signer {
            id,
            backend: Arc::clone(&self.backend),
        }
    }

    /// True iff the signature binds the claimed sender to the exact fields.
    pub fn verify(&self, message: &SignedMessage) -> bool {
        let digest = message.recompute_digest();
        self.backend
            .verify(message.sender(), &digest, &message.0.signature.tag)
    }
}

impl fmt::Debug for Keyring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Keyring")
    }
}

/// Signing capability for one process id.
#[derive(Clone)]
pub struct Signer {
    id: ProcessId,
    backend: Arc<dyn SignatureBackend>,
}

impl Signer {
    pub fn id(&self) -> ProcessId {
        self.id
    }

    pub fn sign(&self, body: MessageBody) -> SignedMessage {
        let digest = canonical_digest(
            body.kind,
            body.round,
            self.id,
            &body.value,
            body.certificate.as_ref(),
        );
        let tag = self.backend.tag(self.id, &digest);
        SignedMessage(Arc::new(Inner {
            kind: body.kind,
            sender: self.id,
            round: body.round,
            value: body.value,
            certificate: body.certificate,
            digest,
            signature: Signature {
                signer: self.id,
                tag,
            },
        }))
    }

    /// Signs with a deliberately broken tag. Used by the spamming adversary
    /// to exercise signature rejection.
    pub(crate) fn sign_corrupted(&self, body: MessageBody) -> SignedMessage {
        let msg = self.sign(body);
        let mut inner = (*msg.0).clone();
        inner.signature.tag[0] ^= 0xff;
        SignedMessage(Arc::new(inner))
    }
}

impl fmt::Debug for Signer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signer({})", self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    signer: ProcessId,
    tag: [u8; 32],
}

impl Signature {
    pub fn signer(&self) -> ProcessId {
        self.signer
    }
}

/// The unsigned content of a message.
#[derive(Debug, Clone)]
pub struct MessageBody {
    pub kind: MsgKind,
    pub round: Option<Round>,
    pub value: Value,
    pub certificate: Option<Certificate>,
}

impl MessageBody {
    pub fn init(value: Value) -> Self {
        MessageBody {
            kind: MsgKind::Init,
            round: None,
            value,
            certificate: None,
        }
    }

    pub fn new(kind: MsgKind, round: Round, value: Value, certificate: Option<Certificate>) -> Self {
        MessageBody {
            kind,
            round: Some(round),
            value,
            certificate,
        }
    }
}

#[derive(Clone)]
struct Inner {
    kind: MsgKind,
    sender: ProcessId,
    round: Option<Round>,
    value: Value,
    certificate: Option<Certificate>,
    digest: Digest,
    signature: Signature,
}

/// An immutable signed message; clones share storage.
#[derive(Clone)]
pub struct SignedMessage(Arc<Inner>);

impl SignedMessage {
    pub fn kind(&self) -> MsgKind {
        self.0.kind
    }

    pub fn sender(&self) -> ProcessId {
        self.0.sender
    }

    pub fn round(&self) -> Option<Round> {
        self.0.round
    }

    pub fn value(&self) -> &Value {
        &self.0.value
    }

    pub fn certificate(&self) -> Option<&Certificate> {
        self.0.certificate.as_ref()
    }

    pub fn signature(&self) -> &Signature {
        &self.0.signature
    }

    /// Digest of the canonical bytes, computed when the message was signed.
    pub fn digest(&self) -> Digest {
        self.0.digest
    }

    /// Identity of this exact signed object, signature tag included.
    pub(crate) fn identity(&self) -> (Digest, [u8; 32]) {
        (self.0.digest, self.0.signature.tag)
    }

    /// Canonical encoding: kind, round, sender, value length and bytes,
    /// certificate digest.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_bytes(
            self.0.kind,
            self.0.round,
            self.0.sender,
            &self.0.value,
            self.0.certificate.as_ref(),
        )
    }

    fn recompute_digest(&self) -> Digest {
        Digest::of(&self.canonical_bytes())
    }

    #[cfg(test)]
    pub(crate) fn tampered(&self, edit: impl FnOnce(&mut TamperView<'_>)) -> SignedMessage {
        let mut inner = (*self.0).clone();
        edit(&mut TamperView {
            round: &mut inner.round,
            value: &mut inner.value,
            sender: &mut inner.sender,
        });
        SignedMessage(Arc::new(inner))
    }
}

#[cfg(test)]
pub(crate) struct TamperView<'a> {
    pub round: &'a mut Option<Round>,
    pub value: &'a mut Value,
    pub sender: &'a mut ProcessId,
}

impl PartialEq for SignedMessage {
    fn eq(&self, other: &Self) -> bool {
        self.identity() == other.identity()
    }
}

impl Eq for SignedMessage {}

impl fmt::Debug for SignedMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.kind)?;
        if let Some(r) = self.0.round {
            write!(f, "({r}, {:?})", self.0.value)?;
        } else {
            write!(f, "({:?})", self.0.value)?;
        }
        write!(f, " from {}", self.0.sender)
    }
}

fn canonical_bytes(
    kind: MsgKind,
    round: Option<Round>,
    sender: ProcessId,
    value: &Value,
    certificate: Option<&Certificate>,
) -> Vec<u8> {
    let value_bytes = value.canonical_bytes();
    let mut out = Vec::with_capacity(1 + 4 + 4 + value_bytes.len() + 33);
    out.push(kind.code());
    out.extend_from_slice(&round.map_or(0, Round::get).to_be_bytes());
    out.extend_from_slice(&(sender.index() as u32).to_be_bytes());
    out.extend_from_slice(&value_bytes);
    match certificate {
        Some(c) => {
            out.push(1);
            out.extend_from_slice(c.digest().as_bytes());
        }
        None => out.push(0),
    }
    out
}

fn canonical_digest(
    kind: MsgKind,
    round: Option<Round>,
    sender: ProcessId,
    value: &Value,
    certificate: Option<&Certificate>,
) -> Digest {
    Digest::of(&canonical_bytes(kind, round, sender, value, certificate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{collect_values, ModelError, SystemParams};

    fn pid(i: u32) -> ProcessId {
        ProcessId::from_index(i)
    }

    fn keyring() -> Keyring {
        Keyring::simulated(4, 7)
    }

    #[test]
    fn signed_message_verifies() {
        let keys = keyring();
        let m = keys.signer(pid(1)).sign(MessageBody::init(Value::proposal("v")));
        assert!(keys.verify(&m));
        assert_eq!(m.sender(), pid(1));
        assert_eq!(m.signature().signer(), pid(1));
    }

    #[test]
    fn replayed_message_still_verifies() {
        let keys = keyring();
        let m = keys.signer(pid(2)).sign(MessageBody::init(Value::proposal("v")));
        let replay = m.clone();
        assert!(keys.verify(&replay));
    }

    #[test]
    fn flipped_payload_byte_fails() {
        let keys = keyring();
        let m = keys.signer(pid(1)).sign(MessageBody::init(Value::proposal("v")));
        let bad = m.tampered(|t| *t.value = Value::proposal("w"));
        assert!(!keys.verify(&bad));
    }

    #[test]
    fn tampered_round_fails() {
        let keys = keyring();
        let m = keys.signer(pid(3)).sign(MessageBody::new(
            MsgKind::Response,
            Round::FIRST,
            Value::proposal("v"),
            None,
        ));
        let bad = m.tampered(|t| *t.round = Some(Round::new(2).unwrap()));
        assert!(!keys.verify(&bad));
    }

    #[test]
    fn claiming_another_signer_fails() {
        let keys = keyring();
        let m = keys.signer(pid(3)).sign(MessageBody::init(Value::proposal("v")));
        let forged = m.tampered(|t| *t.sender = pid(2));
        assert!(!keys.verify(&forged));
    }

    #[test]
    fn corrupted_tag_fails() {
        let keys = keyring();
        let m = keys
            .signer(pid(1))
            .sign_corrupted(MessageBody::init(Value::proposal("v")));
        assert!(!keys.verify(&m));
    }

    #[test]
    fn keys_differ_between_keyrings() {
        let a = Keyring::simulated(4, 1);
        let b = Keyring::simulated(4, 2);
        let m = a.signer(pid(1)).sign(MessageBody::init(Value::proposal("v")));
        assert!(!b.verify(&m));
    }

    #[test]
    fn canonical_layout() {
        let keys = keyring();
        let m = keys.signer(pid(2)).sign(MessageBody::new(
            MsgKind::Response,
            Round::new(3).unwrap(),
            Value::proposal("ab"),
            None,
        ));
        let bytes = m.canonical_bytes();
        let mut expected = vec![3u8];
        expected.extend_from_slice(&3u32.to_be_bytes());
        expected.extend_from_slice(&2u32.to_be_bytes());
        expected.push(1);
        expected.extend_from_slice(&2u64.to_be_bytes());
        expected.extend_from_slice(b"ab");
        expected.push(0);
        assert_eq!(bytes, expected);
        assert_eq!(m.digest(), Digest::of(&expected));
        assert_eq!(m.digest().short().len(), 16);
    }

    #[test]
    fn collect_values_cases() {
        let keys = keyring();
        let params = SystemParams::new(4, 1).unwrap();
        let v = Value::proposal("v");
        let relay = |p: u32, value: Value| {
            keys.signer(pid(p))
                .sign(MessageBody::new(MsgKind::Relay, Round::FIRST, value, None))
        };
        let msgs = vec![
            relay(1, v.clone()),
            relay(2, v.clone()),
            relay(3, Value::Bottom),
        ];
        let set = collect_values(&msgs, MsgKind::Relay, Some(Round::FIRST), params.quorum()).unwrap();
        assert_eq!(set.get(pid(1)), Some(&v));
        assert_eq!(set.get(pid(2)), Some(&v));
        assert_eq!(set.get(pid(3)), Some(&Value::Bottom));

        let dup = vec![
            relay(2, v.clone()),
            relay(2, Value::Bottom),
            relay(1, v.clone()),
            relay(4, v.clone()),
        ];
        let set = collect_values(&dup, MsgKind::Relay, Some(Round::FIRST), 3).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.get(pid(2)), Some(&v));
        assert!(set.contains(pid(4)));

        let short = &msgs[..2];
        assert_eq!(
            collect_values(short, MsgKind::Relay, Some(Round::FIRST), 3),
            Err(ModelError::InsufficientMessages { have: 2, need: 3 })
        );
    }
}
