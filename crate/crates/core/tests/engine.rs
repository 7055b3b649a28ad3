mod common;

use std::collections::VecDeque;

use bw_consensus::auth::{Keyring, MsgKind};
use bw_consensus::engine::{
    classify_phase4, init_majority, resolve_init, resolve_phase2, resolve_phase3, Action, Destination, Engine,
    EngineOptions, Event, Phase, Phase4Outcome, TimerHandle,
};
use bw_consensus::model::{ProcessId, Round, SystemParams, Value, ValueSet};
use common::{a, b, pid, Chain};

fn params() -> SystemParams {
    SystemParams::new(4, 1).unwrap()
}

fn set(entries: &[(u32, Value)]) -> ValueSet {
    entries.iter().map(|(p, v)| (pid(*p), v.clone())).collect()
}

fn engines(values: &[Value]) -> (Vec<Engine>, VecDeque<(ProcessId, Action)>) {
    let keys = Keyring::simulated(4, 99);
    let mut out = VecDeque::new();
    let engines = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let p = pid(i as u32 + 1);
            let (e, actions) = Engine::start(keys.signer(p), keys.clone(), params(), EngineOptions::default(), v.clone());
            out.extend(actions.into_iter().map(|x| (p, x)));
            e
        })
        .collect();
    (engines, out)
}

/// FIFO delivery among the given engines; timers never fire. Messages to a
/// process outside `alive` are dropped.
fn drive(engines: &mut [Engine], mut pending: VecDeque<(ProcessId, Action)>, alive: &[u32]) {
    let mut steps = 0;
    while let Some((_, action)) = pending.pop_front() {
        steps += 1;
        assert!(steps < 100_000, "runaway");
        let Action::Send { to, message } = action else { continue };
        let targets: Vec<u32> = match to {
            Destination::All => alive.to_vec(),
            Destination::To(p) => vec![p.index() as u32].into_iter().filter(|i| alive.contains(i)).collect(),
        };
        for t in targets {
            let e = &mut engines[t as usize - 1];
            if let Ok(actions) = e.step(Event::MessageDelivery(message.clone())) {
                pending.extend(actions.into_iter().map(|x| (pid(t), x)));
            }
        }
    }
}

#[test]
fn start_broadcasts_init_and_waits() {
    let keys = Keyring::simulated(4, 1);
    let (e, actions) = Engine::start(keys.signer(pid(2)), keys, params(), EngineOptions::default(), a());
    assert_eq!(e.phase(), Phase::InitWait);
    assert_eq!(actions.len(), 1);
    let Action::Send { to: Destination::All, message } = &actions[0] else { panic!("{actions:?}") };
    assert_eq!(message.kind(), MsgKind::Init);
    assert_eq!(message.value(), &a());
}

#[test]
fn identical_inputs_give_identical_states() {
    let (mut x, px) = engines(&[a(), a(), b(), b()]);
    let (mut y, py) = engines(&[a(), a(), b(), b()]);
    drive(&mut x, px, &[1, 2, 3, 4]);
    drive(&mut y, py, &[1, 2, 3, 4]);
    for (l, r) in x.iter().zip(&y) {
        assert_eq!(l.state_digest(), r.state_digest());
    }
}

#[test]
fn init_majority_needs_two_of_three() {
    assert_eq!(init_majority(&set(&[(1, a()), (2, a()), (3, b())]), params()), Some(a()));
    // With n=4, t=1 any three values over two proposals contain a repeat.
    let split = set(&[(1, a()), (2, b()), (3, Value::proposal("c"))]);
    assert_eq!(init_majority(&split, params()), None);
    assert_eq!(resolve_init(&split, &b(), params()), b());
}

#[test]
fn phase2_keeps_a_lone_value() {
    assert_eq!(resolve_phase2(&set(&[(1, a()), (2, Value::Bottom), (3, a())])), a());
    assert_eq!(resolve_phase2(&set(&[(1, a()), (2, b()), (3, a())])), Value::Bottom);
    assert_eq!(resolve_phase2(&set(&[(1, Value::Bottom), (2, Value::Bottom), (3, Value::Bottom)])), Value::Bottom);
}

#[test]
fn phase3_requires_unanimity() {
    assert_eq!(resolve_phase3(&set(&[(1, a()), (2, a()), (3, a())])), a());
    assert_eq!(resolve_phase3(&set(&[(1, a()), (2, Value::Bottom), (3, a())])), Value::Bottom);
}

#[test]
fn phase4_classification() {
    assert_eq!(classify_phase4(&set(&[(1, b()), (2, b()), (3, b())])), Phase4Outcome::Decide(b()));
    assert_eq!(classify_phase4(&set(&[(1, b()), (2, Value::Bottom), (3, b())])), Phase4Outcome::Adopt(b()));
    let bottoms = set(&[(1, Value::Bottom), (2, Value::Bottom), (3, Value::Bottom)]);
    assert_eq!(classify_phase4(&bottoms), Phase4Outcome::Retain);
    assert_eq!(classify_phase4(&set(&[(1, a()), (2, b()), (3, a())])), Phase4Outcome::Conflict);
}

#[test]
fn fault_free_fifo_run_decides_in_round_one() {
    let (mut es, pending) = engines(&[a(), a(), b(), b()]);
    drive(&mut es, pending, &[1, 2, 3, 4]);
    let first = es[0].decided().cloned().expect("p1 decided");
    for e in &es {
        assert_eq!(e.phase(), Phase::Decided);
        assert_eq!(e.decided(), Some(&first));
        assert_eq!(e.decided_round(), Some(Round::FIRST));
    }
}

#[test]
fn three_correct_processes_decide_without_the_fourth() {
    let (mut es, pending) = engines(&[b(), a(), b(), b()]);
    drive(&mut es, pending, &[1, 2, 3]);
    for e in &es[..3] {
        assert_eq!(e.decided(), Some(&b()));
    }
    assert_eq!(es[3].phase(), Phase::InitWait);
}

#[test]
fn round_start_sets_timer_from_delta() {
    let (mut es, pending) = engines(&[a(), a(), a(), a()]);
    // Feed p2 the INITs only and look at what it does on entering round 1.
    let inits: Vec<_> = pending
        .into_iter()
        .filter_map(|(_, x)| match x {
            Action::Send { message, .. } => Some(message),
            _ => None,
        })
        .collect();
    let mut actions = Vec::new();
    for m in inits {
        actions.extend(es[1].step(Event::MessageDelivery(m)).unwrap());
    }
    assert_eq!(es[1].current_round(), Some(Round::FIRST));
    assert_eq!(es[1].phase(), Phase::Phase1);
    assert!(actions.contains(&Action::SetTimer {
        duration: 1,
        handle: TimerHandle(1)
    }));
    let query = actions.iter().find_map(|x| match x {
        Action::Send { message, .. } if message.kind() == MsgKind::Query => Some(message),
        _ => None,
    });
    assert_eq!(query.unwrap().value(), &a());
    assert_eq!(es[1].delta(pid(1)), 1);
}

#[test]
fn phase1_prefers_the_coordinator_response() {
    let chain = Chain::default();
    let keys = chain.keys.clone();
    let (mut e, _) = Engine::start(keys.signer(pid(4)), keys, params(), EngineOptions::default(), b());
    for p in [2, 3, 4] {
        e.step(Event::MessageDelivery(chain.init(p))).unwrap();
    }
    assert_eq!(e.phase(), Phase::Phase1);
    e.step(Event::MessageDelivery(chain.plain_response(2))).unwrap();
    e.step(Event::MessageDelivery(chain.plain_response(3))).unwrap();
    assert_eq!(e.phase(), Phase::Phase1);
    let actions = e.step(Event::MessageDelivery(chain.coord_response(&a()))).unwrap();
    assert_eq!(e.phase(), Phase::Phase2);
    assert_eq!(e.aux().map(|c| c.value.clone()), Some(a()));
    assert!(actions.iter().any(|x| matches!(x,
        Action::Send { message, .. } if message.kind() == MsgKind::Relay && message.value() == &a())));
}

#[test]
fn phase1_timeout_relays_bottom_and_grows_delta() {
    let chain = Chain::default();
    let keys = chain.keys.clone();
    let (mut e, _) = Engine::start(keys.signer(pid(4)), keys, params(), EngineOptions::default(), b());
    for p in [2, 3, 4] {
        e.step(Event::MessageDelivery(chain.init(p))).unwrap();
    }
    // Its own RESPONSE is delivered synchronously by the network, not here.
    for p in [2, 3, 4] {
        e.step(Event::MessageDelivery(chain.plain_response(p))).unwrap();
    }
    assert_eq!(e.phase(), Phase::Phase1, "must wait for the timer");
    let actions = e.step(Event::TimerExpiry(TimerHandle(1))).unwrap();
    assert_eq!(e.phase(), Phase::Phase2);
    assert!(e.aux().unwrap().value.is_bottom());
    assert_eq!(e.delta(pid(1)), 2);
    assert!(actions.iter().any(|x| matches!(x,
        Action::Send { message, .. } if message.kind() == MsgKind::Relay && message.value().is_bottom())));
}

#[test]
fn coordinator_sticks_to_the_first_certified_query() {
    let chain = Chain::default();
    let keys = chain.keys.clone();
    let (mut e, _) = Engine::start(keys.signer(pid(1)), keys, params(), EngineOptions::default(), a());
    for p in [1, 2, 3] {
        e.step(Event::MessageDelivery(chain.init(p))).unwrap();
    }
    let actions = e.step(Event::MessageDelivery(chain.query(3, &b()))).unwrap();
    let response = actions
        .iter()
        .find_map(|x| match x {
            Action::Send { message, .. } if message.kind() == MsgKind::Response => Some(message),
            _ => None,
        })
        .expect("coordinator responds");
    assert_eq!(response.value(), &b());
    assert!(response.certificate().is_some());
    // Later queriers get an answer too, but always with the adopted value.
    let again = e.step(Event::MessageDelivery(chain.query(2, &a()))).unwrap();
    let second = again
        .iter()
        .find_map(|x| match x {
            Action::Send { to, message } if message.kind() == MsgKind::Response => Some((*to, message)),
            _ => None,
        })
        .expect("every querier gets a response");
    assert_eq!(second.0, Destination::To(pid(2)));
    assert_eq!(second.1.value(), &b());
}

#[test]
fn dec_is_adopted_and_echoed() {
    let chain = Chain::default();
    let keys = chain.keys.clone();
    let (mut e, _) = Engine::start(keys.signer(pid(3)), keys, params(), EngineOptions::default(), b());
    let actions = e.step(Event::MessageDelivery(chain.dec(4, &a()))).unwrap();
    assert_eq!(e.decided(), Some(&a()));
    assert_eq!(e.phase(), Phase::Decided);
    assert!(actions.contains(&Action::Decide(a())));
    assert!(actions.iter().any(|x| matches!(x,
        Action::Send { to: Destination::All, message } if message.kind() == MsgKind::Dec && message.sender() == pid(3))));
    assert!(e.step(Event::MessageDelivery(chain.dec(2, &a()))).map_or(true, |x| x.is_empty()));
}
