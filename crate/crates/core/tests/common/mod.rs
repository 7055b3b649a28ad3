//! Hand-built message chains for n = 4, t = 1.
//!
//! Proposals are p1 = a, p2 = a, p3 = b, p4 = b, so both a and b are
//! certifiable round-1 estimates: the INIT quorum {p1, p2, p3} forces a and
//! {p2, p3, p4} forces b.

#![allow(dead_code)]

use bw_consensus::auth::{build_certificate, CertKind, Certificate, Keyring, MessageBody, MsgKind, SignedMessage};
use bw_consensus::model::{ProcessId, Round, SystemParams, Value};

pub fn pid(i: u32) -> ProcessId {
    ProcessId::from_index(i)
}

pub fn a() -> Value {
    Value::proposal("a")
}

pub fn b() -> Value {
    Value::proposal("b")
}

pub struct Chain {
    pub keys: Keyring,
    pub params: SystemParams,
}

impl Default for Chain {
    fn default() -> Self {
        Chain {
            keys: Keyring::simulated(4, 99),
            params: SystemParams::new(4, 1).unwrap(),
        }
    }
}

impl Chain {
    pub fn sign(&self, p: u32, body: MessageBody) -> SignedMessage {
        self.keys.signer(pid(p)).sign(body)
    }

    pub fn cert(&self, kind: CertKind, evidence: Vec<SignedMessage>) -> Certificate {
        build_certificate(&self.keys, self.params, kind, evidence, None).unwrap()
    }

    pub fn proposal(&self, p: u32) -> Value {
        if p <= 2 {
            a()
        } else {
            b()
        }
    }

    pub fn init(&self, p: u32) -> SignedMessage {
        self.sign(p, MessageBody::init(self.proposal(p)))
    }

    /// InitQuorum certifying `v` ∈ {a, b}.
    pub fn init_cert(&self, v: &Value) -> Certificate {
        let senders = if *v == a() { [1, 2, 3] } else { [2, 3, 4] };
        self.cert(CertKind::InitQuorum, senders.iter().map(|&p| self.init(p)).collect())
    }

    pub fn query(&self, p: u32, v: &Value) -> SignedMessage {
        self.sign(
            p,
            MessageBody::new(MsgKind::Query, Round::FIRST, v.clone(), Some(self.init_cert(v))),
        )
    }

    /// p1's round-1 RESPONSE adopting a query carrying `v`.
    pub fn coord_response(&self, v: &Value) -> SignedMessage {
        let querier = if *v == a() { 2 } else { 3 };
        let adopted = self.cert(CertKind::AdoptedQuery, vec![self.query(querier, v)]);
        self.sign(
            1,
            MessageBody::new(MsgKind::Response, Round::FIRST, v.clone(), Some(adopted)),
        )
    }

    pub fn plain_response(&self, p: u32) -> SignedMessage {
        self.sign(
            p,
            MessageBody::new(MsgKind::Response, Round::FIRST, self.proposal(p), None),
        )
    }

    /// RELAY(1, v) from `p`; v may be ⊥.
    pub fn relay(&self, p: u32, v: &Value) -> SignedMessage {
        let cert = if v.is_bottom() {
            self.cert(
                CertKind::ResponseQuorum,
                [2, 3, 4].iter().map(|&q| self.plain_response(q)).collect(),
            )
        } else {
            self.cert(CertKind::CoordResponse, vec![self.coord_response(v)])
        };
        self.sign(p, MessageBody::new(MsgKind::Relay, Round::FIRST, v.clone(), Some(cert)))
    }

    /// FILT1(1, v) from `p` with a RELAY quorum that certifies v.
    pub fn filt1(&self, p: u32, v: &Value) -> SignedMessage {
        let relays = if v.is_bottom() {
            vec![self.relay(1, &a()), self.relay(2, &b()), self.relay(3, &Value::Bottom)]
        } else {
            vec![self.relay(1, v), self.relay(2, v), self.relay(3, &Value::Bottom)]
        };
        self.sign(
            p,
            MessageBody::new(
                MsgKind::Filt1,
                Round::FIRST,
                v.clone(),
                Some(self.cert(CertKind::RelayQuorum, relays)),
            ),
        )
    }

    /// FILT2(1, v) from `p` with a FILT1 quorum that certifies v.
    pub fn filt2(&self, p: u32, v: &Value) -> SignedMessage {
        let filt1s = if v.is_bottom() {
            vec![self.filt1(1, &a()), self.filt1(2, &Value::Bottom), self.filt1(3, &a())]
        } else {
            vec![self.filt1(1, v), self.filt1(2, v), self.filt1(3, v)]
        };
        self.sign(
            p,
            MessageBody::new(
                MsgKind::Filt2,
                Round::FIRST,
                v.clone(),
                Some(self.cert(CertKind::Filt1Quorum, filt1s)),
            ),
        )
    }

    pub fn dec(&self, p: u32, v: &Value) -> SignedMessage {
        let filt2s = vec![self.filt2(1, v), self.filt2(2, v), self.filt2(3, v)];
        self.sign(
            p,
            MessageBody::new(
                MsgKind::Dec,
                Round::FIRST,
                v.clone(),
                Some(self.cert(CertKind::DecQuorum, filt2s)),
            ),
        )
    }
}

pub fn scenario_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.toml"))
}

pub fn scenario(name: &str) -> bw_consensus::netsim::Scenario {
    bw_consensus::harness::load_scenario(&scenario_path(name)).unwrap()
}
