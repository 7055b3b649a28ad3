//! The three shapes of a pivot's privileged neighbourhood for t = 1: two
//! timely neighbours, two winning neighbours, one of each. All other links
//! are asynchronous with a growing delay bound, and one non-pivot process is
//! Byzantine.

use std::collections::{BTreeMap, BTreeSet};

use bw_consensus::adversary::Strategy;
use bw_consensus::harness::run_once;
use bw_consensus::model::{ProcessId, SystemParams, Value};
use bw_consensus::netsim::{AsyncDelays, BwAssignment, LinkModel, Scenario};

fn ids(list: &[u32]) -> BTreeSet<ProcessId> {
    list.iter().copied().map(ProcessId::from_index).collect()
}

fn main() {
    let params = SystemParams::new(4, 1).expect("4 > 3");
    let values = ["a", "b", "b", "a"].into_iter().map(Value::proposal).collect();
    let base = Scenario {
        default_link: LinkModel::ASYNC,
        async_delays: AsyncDelays {
            min: 1,
            max: 6,
            drift_every: Some(20),
        },
        byzantine: BTreeMap::from([(ProcessId::from_index(4), Strategy::SilentCoordinator)]),
        ..Scenario::synchronous(params, values, 1)
    };
    for (label, y, z) in [("bisource", &[2, 3][..], &[][..]), ("winning", &[], &[2, 3]), ("mixed", &[2], &[3])] {
        let scenario = Scenario {
            name: label.into(),
            bw: Some(BwAssignment {
                pivot: ProcessId::from_index(1),
                y: ids(y),
                z: ids(z),
                delta_bound: 2,
                stabilization: 40,
            }),
            ..base.clone()
        };
        for seed in 0..4 {
            let (report, _) = run_once(&scenario, seed, None).expect("valid scenario");
            let termination = report.verdict("termination").expect("always checked");
            println!("{label:<9} seed {seed}: {} ({})", termination.status.label(), termination.explanation);
        }
    }
}
