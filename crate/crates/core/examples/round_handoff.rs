//! A slow coordinator leaves one process behind while the others decide.
//! The straggler must carry the decided value into the next round.

use bw_consensus::checkers::{check_round_handoff, find_handoff};
use bw_consensus::harness::{run_once, Mix};
use bw_consensus::model::{SystemParams, Value};
use bw_consensus::netsim::Scenario;

fn main() {
    let params = SystemParams::new(4, 1).expect("4 > 3");
    let values = ["a", "b", "a", "b"].into_iter().map(Value::proposal).collect();
    let template = Scenario {
        name: "handoff".into(),
        ..Scenario::synchronous(params, values, 1)
    };
    let mut shown = 0;
    for seed in 0.. {
        let scenario = Mix::Handoff.scenarios(&template, seed).remove(0);
        let (report, trace) = run_once(&scenario, seed, None).expect("valid scenario");
        let Some(handoff) = find_handoff(&trace) else {
            continue;
        };
        let rounds: Vec<String> = report.rounds.iter().map(|(p, r)| format!("{p}@r{r}")).collect();
        println!(
            "seed {seed} {}: first decision in round {}, decided {}",
            scenario.name,
            handoff.decided_round,
            rounds.join(" ")
        );
        println!("  {}", check_round_handoff(&trace));
        shown += 1;
        if shown == 3 {
            break;
        }
    }
}
