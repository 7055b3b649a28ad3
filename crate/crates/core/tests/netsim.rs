mod common;

use std::collections::{BTreeMap, VecDeque};

use bw_consensus::model::{ProcessId, SystemParams, Value};
use bw_consensus::netsim::{
    run, AsyncDelays, LinkModel, Record, RecordKind, Scenario, ScenarioError, Simulation, Trace,
};
use common::{a, b, pid, scenario};

fn async_scenario(seed: u64) -> Scenario {
    let params = SystemParams::new(4, 1).unwrap();
    let mut s = Scenario::synchronous(params, vec![a(), b(), a(), b()], 1);
    s.default_link = LinkModel::ASYNC;
    s.async_delays = AsyncDelays {
        min: 1,
        max: 7,
        drift_every: None,
    };
    s.seed = seed;
    s
}

/// Pairs each Deliver with the earliest unmatched Send of the same message
/// to the same recipient.
fn matched(trace: &Trace) -> Vec<(&Record, &Record)> {
    let mut open: BTreeMap<(ProcessId, &str), VecDeque<&Record>> = BTreeMap::new();
    let mut pairs = Vec::new();
    for r in &trace.records {
        let Some(m) = r.msg.as_deref() else { continue };
        match r.kind {
            RecordKind::Send => open.entry((r.peer.unwrap(), m)).or_default().push_back(r),
            RecordKind::Deliver => {
                let send = open
                    .get_mut(&(r.actor, m))
                    .and_then(|q| q.pop_front())
                    .unwrap_or_else(|| panic!("{r:?} was never sent"));
                pairs.push((send, r));
            }
            _ => {}
        }
    }
    assert!(open.values().all(|q| q.is_empty()), "undelivered sends");
    pairs
}

#[test]
fn every_send_between_correct_processes_is_delivered() {
    for seed in 0..20 {
        let trace = run(&async_scenario(seed)).unwrap().trace;
        let pairs = matched(&trace);
        let sends = trace.records.iter().filter(|r| r.kind == RecordKind::Send).count();
        assert_eq!(pairs.len(), sends, "seed {seed}");
    }
}

#[test]
fn timely_links_respect_their_bound() {
    let params = SystemParams::new(4, 1).unwrap();
    for delta in [1, 3] {
        let mut s = Scenario::synchronous(params, vec![a(), a(), b(), b()], delta);
        s.seed = delta;
        let trace = run(&s).unwrap().trace;
        for (send, deliver) in matched(&trace) {
            assert!(deliver.time - send.time <= delta, "{send:?} -> {deliver:?}");
        }
    }
}

#[test]
fn self_delivery_is_immediate() {
    let trace = run(&async_scenario(3)).unwrap().trace;
    let own: Vec<_> = matched(&trace)
        .into_iter()
        .filter(|(s, _)| s.peer == Some(s.actor))
        .collect();
    assert!(!own.is_empty());
    for (send, deliver) in own {
        assert_eq!(send.time, deliver.time);
    }
}

#[test]
fn winning_pivot_response_is_among_the_first_quorum() {
    let mut s = scenario("winning");
    s.bw.as_mut().unwrap().stabilization = 0;
    let bw = s.bw.clone().unwrap();
    let quorum = s.params.quorum();
    let mut checked = 0;
    for seed in 0..10 {
        let trace = Simulation::new(Scenario { seed, ..s.clone() })
            .unwrap()
            .run(1_000_000)
            .trace;
        for &z in bw.z.iter().filter(|p| s.is_correct(**p)) {
            let queries = trace.records.iter().filter(|r| {
                r.kind == RecordKind::Send
                    && r.actor == z
                    && r.peer == Some(z)
                    && r.msg_kind() == "QUERY"
                    && r.time >= bw.stabilization
            });
            for q in queries {
                let responders: Vec<ProcessId> = trace
                    .records
                    .iter()
                    .filter(|r| {
                        r.kind == RecordKind::Deliver
                            && r.actor == z
                            && r.msg_kind() == "RESPONSE"
                            && r.round == q.round
                    })
                    .map(|r| r.peer.unwrap())
                    .collect();
                if responders.contains(&bw.pivot) {
                    let first: Vec<_> = responders.iter().take(quorum).collect();
                    assert!(first.contains(&&bw.pivot), "seed {seed} {z} round {:?}: {responders:?}", q.round);
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 0, "no post-stabilization query saw the pivot");
}

#[test]
fn same_seed_same_trace() {
    let x = run(&async_scenario(42)).unwrap().trace;
    let y = run(&async_scenario(42)).unwrap().trace;
    assert_eq!(x, y);
    let z = run(&async_scenario(43)).unwrap().trace;
    assert_ne!(x, z);
}

#[test]
fn too_few_processes_are_rejected() {
    assert!(SystemParams::new(3, 1).is_err());
    let mut s = async_scenario(0);
    s.values.insert(pid(2), Value::Bottom);
    assert!(matches!(Simulation::new(s), Err(ScenarioError::MissingValue(p)) if p == pid(2)));
}

#[test]
fn trace_text_round_trips() {
    let trace = run(&async_scenario(9)).unwrap().trace;
    assert_eq!(Trace::parse(&trace.to_text()).unwrap(), trace);
}
