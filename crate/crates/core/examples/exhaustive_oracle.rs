//! Enumerates every delivery order and timer expiry of a four-process
//! system with one crashed process, and checks each end state.

use std::collections::BTreeMap;

use bw_consensus::adversary::Strategy;
use bw_consensus::harness::{explore_exhaustive, ExploreConfig};
use bw_consensus::model::{ProcessId, SystemParams, Value};
use bw_consensus::netsim::Scenario;

fn main() {
    let params = SystemParams::new(4, 1).expect("4 > 3");
    for crashed in [1, 4] {
        let values = ["a", "b", "a", "b"].into_iter().map(Value::proposal).collect();
        let scenario = Scenario {
            name: format!("p{crashed}-crashed"),
            byzantine: BTreeMap::from([(ProcessId::from_index(crashed), Strategy::Crash { after: 0 })]),
            ..Scenario::synchronous(params, values, 1)
        };
        let report = explore_exhaustive(&scenario, ExploreConfig::default()).expect("within budget");
        println!(
            "{}: {} schedules, {} states, {} violations, {} distinct outcomes",
            scenario.name,
            report.schedules,
            report.states,
            report.violation_count,
            report.outcomes.len()
        );
    }
}
