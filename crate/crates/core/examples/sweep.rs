//! Seeded sweeps: every mix over a small seed range.

use bw_consensus::harness::{sweep, Mix};
use bw_consensus::model::{SystemParams, Value};
use bw_consensus::netsim::Scenario;

fn main() {
    let params = SystemParams::new(4, 1).expect("4 > 3");
    let values = ["a", "b", "a", "b"].into_iter().map(Value::proposal).collect();
    let template = Scenario {
        name: "template".into(),
        ..Scenario::synchronous(params, values, 1)
    };
    for mix in Mix::ALL {
        let report = sweep(&template, 0..50, mix).expect("valid template");
        print!("{}", report.summary());
    }
}
