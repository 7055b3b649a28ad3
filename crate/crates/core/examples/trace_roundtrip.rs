//! Writes a run's trace to disk, reads it back and re-checks it without
//! simulating again.

use bw_consensus::harness::{run_once, verify_trace};
use bw_consensus::model::{SystemParams, Value};
use bw_consensus::netsim::{LinkModel, Scenario};

fn main() {
    let params = SystemParams::new(4, 1).expect("4 > 3");
    let values = ["a", "a", "b", "a"].into_iter().map(Value::proposal).collect();
    let scenario = Scenario {
        default_link: LinkModel::ASYNC,
        ..Scenario::synchronous(params, values, 1)
    };
    let path = std::env::temp_dir().join("bw-consensus-example.trace");
    let (report, trace) = run_once(&scenario, 42, Some(&path)).expect("valid scenario");
    println!("wrote {} records to {}", trace.records.len(), path.display());
    println!("first lines:");
    for line in trace.to_text().lines().take(8) {
        println!("  {line}");
    }
    let verdicts = verify_trace(&path).expect("trace parses");
    assert_eq!(verdicts, report.verdicts);
    for v in verdicts {
        println!("{v}");
    }
    std::fs::remove_file(&path).ok();
}
