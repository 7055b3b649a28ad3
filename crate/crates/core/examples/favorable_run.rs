//! A fault-free run over synchronous links: every process decides in the
//! first round after six communication steps of n² messages each.

use bw_consensus::harness::run_once;
use bw_consensus::model::{SystemParams, Value};
use bw_consensus::netsim::Scenario;

fn main() {
    let params = SystemParams::new(4, 1).expect("4 > 3");
    let values = ["a", "b", "a", "b"].into_iter().map(Value::proposal).collect();
    let scenario = Scenario::synchronous(params, values, 1);
    let (report, _) = run_once(&scenario, 0, None).expect("valid scenario");
    print!("{}", report.summary());
    println!("messages per step:");
    for (step, count) in &report.messages_per_step {
        println!("  step {step}: {count}");
    }
}
