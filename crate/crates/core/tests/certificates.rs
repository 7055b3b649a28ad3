mod common;

use bw_consensus::auth::{
    build_certificate, CertKind, Claim, Daemon, Discard, MessageBody, MsgKind, Reject, Rules, Validator,
};
use bw_consensus::model::{Round, Value};
use common::{a, b, pid, Chain};
use proptest::prelude::*;

fn validator(chain: &Chain) -> Validator {
    Validator::new(chain.keys.clone(), chain.params, Rules::default())
}

fn claim<'a>(kind: MsgKind, value: &'a Value, sender: u32) -> Claim<'a> {
    Claim {
        kind,
        round: Some(Round::FIRST),
        value,
        sender: pid(sender),
    }
}

#[test]
fn init_quorum_of_three_is_accepted() {
    let chain = Chain::default();
    let evidence = vec![chain.init(1), chain.init(2), chain.init(3)];
    let cert = build_certificate(&chain.keys, chain.params, CertKind::InitQuorum, evidence, None).unwrap();
    assert_eq!(cert.evidence().len(), 3);
    let query = chain.sign(
        1,
        MessageBody::new(MsgKind::Query, Round::FIRST, a(), Some(cert)),
    );
    assert_eq!(validator(&chain).check_message(&query), Ok(()));
}

#[test]
fn relay_quorum_with_repeated_sender_is_malformed() {
    let chain = Chain::default();
    let evidence = vec![chain.relay(2, &a()), chain.relay(2, &a()), chain.relay(3, &a())];
    let err = build_certificate(&chain.keys, chain.params, CertKind::RelayQuorum, evidence, None).unwrap_err();
    assert_eq!(err.0, Reject::DuplicateSender(pid(2)));
}

#[test]
fn wrong_arity_is_malformed() {
    let chain = Chain::default();
    let err = build_certificate(
        &chain.keys,
        chain.params,
        CertKind::InitQuorum,
        vec![chain.init(1), chain.init(2)],
        None,
    )
    .unwrap_err();
    assert_eq!(err.0, Reject::WrongArity { expected: 3, got: 2 });
}

#[test]
fn coordinator_response_certifies_relay() {
    let chain = Chain::default();
    let relay = chain.relay(3, &b());
    assert_eq!(validator(&chain).check_message(&relay), Ok(()));
}

#[test]
fn relay_quorum_with_one_value_certifies_it() {
    let chain = Chain::default();
    let cert = chain.cert(
        CertKind::RelayQuorum,
        vec![chain.relay(1, &a()), chain.relay(2, &a()), chain.relay(3, &Value::Bottom)],
    );
    let mut v = validator(&chain);
    assert_eq!(v.validate_certificate(&cert, &claim(MsgKind::Filt1, &a(), 4)), Ok(()));
    assert_eq!(
        v.validate_certificate(&cert, &claim(MsgKind::Filt1, &Value::Bottom, 4)),
        Err(Reject::ValueMismatch)
    );
}

#[test]
fn relay_quorum_with_two_values_certifies_only_bottom() {
    let chain = Chain::default();
    let cert = chain.cert(
        CertKind::RelayQuorum,
        vec![chain.relay(1, &a()), chain.relay(2, &b()), chain.relay(3, &Value::Bottom)],
    );
    let mut v = validator(&chain);
    assert_eq!(
        v.validate_certificate(&cert, &claim(MsgKind::Filt1, &a(), 4)),
        Err(Reject::ValueMismatch)
    );
    assert_eq!(v.validate_certificate(&cert, &claim(MsgKind::Filt1, &Value::Bottom, 4)), Ok(()));
}

#[test]
fn unanimous_filt2_quorum_certifies_decision() {
    let chain = Chain::default();
    let dec = chain.dec(2, &a());
    assert_eq!(validator(&chain).check_message(&dec), Ok(()));
}

#[test]
fn second_query_from_same_sender_is_duplicate() {
    let chain = Chain::default();
    let mut daemon = Daemon::new(validator(&chain));
    let round = Some(Round::FIRST);
    assert_eq!(daemon.filter(round, &chain.query(3, &b())), Ok(()));
    assert_eq!(daemon.filter(round, &chain.query(3, &b())), Err(Discard::Duplicate));
}

#[test]
fn relay_value_without_coordinator_response_is_rejected() {
    let chain = Chain::default();
    // A ⊥-style response quorum cannot justify a non-⊥ relay.
    let quorum = chain.cert(
        CertKind::ResponseQuorum,
        [2, 3, 4].iter().map(|&q| chain.plain_response(q)).collect(),
    );
    let relay = chain.sign(
        4,
        MessageBody::new(MsgKind::Relay, Round::FIRST, a(), Some(quorum)),
    );
    let mut daemon = Daemon::new(validator(&chain));
    assert!(matches!(
        daemon.filter(Some(Round::FIRST), &relay),
        Err(Discard::BadCertificate(_))
    ));
}

#[test]
fn relay_backed_by_non_coordinator_response_is_rejected() {
    let chain = Chain::default();
    let stray = chain.sign(
        2,
        MessageBody::new(MsgKind::Response, Round::FIRST, a(), None),
    );
    // Build the certificate unchecked: the builder does not look at senders.
    let cert = chain.cert(CertKind::CoordResponse, vec![stray]);
    let relay = chain.sign(4, MessageBody::new(MsgKind::Relay, Round::FIRST, a(), Some(cert)));
    assert!(validator(&chain).check_message(&relay).is_err());
}

#[test]
fn valid_dec_from_any_sender_is_accepted() {
    let chain = Chain::default();
    // p4 is a typical Byzantine id; the daemon only looks at the evidence.
    let mut daemon = Daemon::new(validator(&chain));
    assert_eq!(daemon.filter(Some(Round::FIRST), &chain.dec(4, &b())), Ok(()));
}

#[test]
fn stale_phase_message_is_discarded_but_late_query_is_not() {
    let chain = Chain::default();
    let mut daemon = Daemon::new(validator(&chain));
    let round2 = Some(Round::new(2).unwrap());
    assert_eq!(daemon.filter(round2, &chain.relay(2, &a())), Err(Discard::StaleRound));
    assert_eq!(daemon.filter(round2, &chain.query(2, &a())), Ok(()));
}

#[test]
fn bottom_estimate_is_never_certified() {
    let chain = Chain::default();
    let cert = chain.init_cert(&a());
    let mut v = validator(&chain);
    assert_eq!(
        v.validate_certificate(&cert, &claim(MsgKind::Query, &Value::Bottom, 1)),
        Err(Reject::ValueMismatch)
    );
}

#[test]
fn init_quorum_without_majority_certifies_the_senders_own_value() {
    let chain = Chain::default();
    // {p1: a, p3: b, p4: b}: b occurs twice, so b is forced for everyone.
    let forced = chain.cert(CertKind::InitQuorum, vec![chain.init(1), chain.init(3), chain.init(4)]);
    let mut v = validator(&chain);
    assert_eq!(v.validate_certificate(&forced, &claim(MsgKind::Query, &b(), 1)), Ok(()));
    assert_eq!(
        v.validate_certificate(&forced, &claim(MsgKind::Query, &a(), 1)),
        Err(Reject::ValueMismatch)
    );
}

// Independent statement of the filter rules, written without reference to
// the engine: phase 2 passes the only non-⊥ value if there is exactly one,
// phase 3 passes a value only if every entry carries it.
fn oracle_filt1(relays: &[Value]) -> Value {
    let mut non_bottom: Vec<&Value> = relays.iter().filter(|v| !v.is_bottom()).collect();
    non_bottom.sort_by_key(|v| v.canonical_bytes());
    non_bottom.dedup();
    if non_bottom.len() == 1 {
        non_bottom[0].clone()
    } else {
        Value::Bottom
    }
}

fn oracle_filt2(filt1s: &[Value]) -> Value {
    if !filt1s[0].is_bottom() && filt1s.iter().all(|v| *v == filt1s[0]) {
        filt1s[0].clone()
    } else {
        Value::Bottom
    }
}

fn any_value() -> impl Strategy<Value = Value> {
    prop_oneof![Just(a()), Just(b()), Just(Value::Bottom)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filt1_certification_matches_oracle(
        values in proptest::collection::vec(any_value(), 3),
        senders in proptest::sample::subsequence(vec![1u32, 2, 3, 4], 3),
        claimed in any_value(),
    ) {
        let chain = Chain::default();
        let relays = senders.iter().zip(&values).map(|(&p, v)| chain.relay(p, v)).collect();
        let cert = chain.cert(CertKind::RelayQuorum, relays);
        let accepted = validator(&chain)
            .validate_certificate(&cert, &claim(MsgKind::Filt1, &claimed, 1))
            .is_ok();
        prop_assert_eq!(accepted, oracle_filt1(&values) == claimed);
    }

    #[test]
    fn filt2_certification_matches_oracle(
        values in proptest::collection::vec(any_value(), 3),
        claimed in any_value(),
    ) {
        let chain = Chain::default();
        let filt1s = [1, 2, 3].iter().zip(&values).map(|(&p, v)| chain.filt1(p, v)).collect();
        let cert = chain.cert(CertKind::Filt1Quorum, filt1s);
        let accepted = validator(&chain)
            .validate_certificate(&cert, &claim(MsgKind::Filt2, &claimed, 1))
            .is_ok();
        prop_assert_eq!(accepted, oracle_filt2(&values) == claimed);
    }

    #[test]
    fn at_most_one_value_certifiable_per_quorum(
        values in proptest::collection::vec(any_value(), 3),
    ) {
        let chain = Chain::default();
        let relays = [1, 2, 3].iter().zip(&values).map(|(&p, v)| chain.relay(p, v)).collect();
        let cert = chain.cert(CertKind::RelayQuorum, relays);
        let mut v = validator(&chain);
        let certified = [a(), b(), Value::Bottom]
            .iter()
            .filter(|x| v.validate_certificate(&cert, &claim(MsgKind::Filt1, x, 1)).is_ok())
            .count();
        prop_assert_eq!(certified, 1);
    }
}
