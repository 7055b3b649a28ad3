//! Loads scenarios from their text format, including one that is rejected.

use bw_consensus::harness::{parse_scenario, run_once};

const MIXED: &str = r#"
name = "mixed"

[system]
n = 4
t = 1

[values]
default = "b"
p1 = "a"

[byzantine]
p3 = "Equivocator"

[links]
default = "async"
async_max = 5
drift_every = 30

[bw]
preset = "mixed"
pivot = "p2"
stabilization = 15
"#;

const TOO_FEW: &str = r#"
[system]
n = 3
t = 1
"#;

fn main() {
    let scenario = parse_scenario(MIXED, "inline").expect("valid scenario");
    let bw = scenario.bw.as_ref().expect("has a bw section");
    let names = |set: &std::collections::BTreeSet<_>| set.iter().map(|p| format!("{p}")).collect::<Vec<_>>().join(",");
    println!("pivot {} y {} z {}", bw.pivot, names(&bw.y), names(&bw.z));
    let (report, _) = run_once(&scenario, 9, None).expect("runs");
    print!("{}", report.lines());
    match parse_scenario(TOO_FEW, "too-few") {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("rejected: {e}"),
    }
}
