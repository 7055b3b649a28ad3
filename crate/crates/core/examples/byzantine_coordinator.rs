//! Each catalog strategy in turn plays the first coordinator against three
//! correct processes with competing proposals.

use std::collections::BTreeMap;

use bw_consensus::adversary::Strategy;
use bw_consensus::harness::run_once;
use bw_consensus::model::{ProcessId, SystemParams, Value};
use bw_consensus::netsim::{AsyncDelays, LinkModel, Scenario};

fn main() {
    let params = SystemParams::new(4, 1).expect("4 > 3");
    let values = ["x", "x", "y", "y"].into_iter().map(Value::proposal).collect();
    let mut scenario = Scenario::synchronous(params, values, 1);
    scenario.default_link = LinkModel::ASYNC;
    scenario.async_delays = AsyncDelays {
        min: 1,
        max: 4,
        drift_every: None,
    };
    for strategy in Strategy::catalog() {
        scenario.name = format!("coordinator={strategy}");
        scenario.byzantine = BTreeMap::from([(ProcessId::from_index(1), strategy)]);
        for seed in 0..3 {
            let (report, _) = run_once(&scenario, seed, None).expect("valid scenario");
            let rounds: Vec<String> = report.rounds.iter().map(|(p, r)| format!("{p}@r{r}")).collect();
            println!(
                "{:<44} seed {seed}  {}  decided: {}",
                report.scenario,
                if report.passed() { "pass" } else { "FAIL" },
                rounds.join(" ")
            );
        }
    }
}
