//! Seeded sweeps over families of scenarios.
//!
//! A [`Mix`] turns a template and a seed into one or more concrete
//! scenarios. Everything a mix randomizes is drawn from a generator seeded
//! by the sweep seed, so a sweep is reproducible from its seed range.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{run_once, HarnessError, RunReport};
use crate::adversary::Strategy;
use crate::checkers::Status;
use crate::model::{ProcessId, SystemParams, Value};
use crate::netsim::{AsyncDelays, BwAssignment, LinkModel, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mix {
    /// The template as is.
    None,
    /// Random catalog strategies on t random processes, asynchronous links,
    /// two competing proposals.
    Adversarial,
    /// Like `Adversarial` over n ∈ {4, 5, 7}; half the runs make the round-1
    /// coordinator a CertifiedBothValues process.
    Agreement,
    /// For t = 1: the three bw assignments (y, z) ∈ {(2,0), (0,2), (1,1)}
    /// over asynchronous drifting links with one Byzantine non-pivot.
    Bw,
    /// All correct processes propose the same value; 0..=t Byzantine
    /// processes propose and spam another.
    Validity,
    /// The round-1 coordinator delays everything it sends to one correct
    /// process, which regularly leaves that process a round behind.
    Handoff,
}

impl Mix {
    pub const ALL: [Mix; 6] = [
        Mix::None,
        Mix::Adversarial,
        Mix::Agreement,
        Mix::Bw,
        Mix::Validity,
        Mix::Handoff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mix::None => "none",
            Mix::Adversarial => "adversarial",
            Mix::Agreement => "agreement",
            Mix::Bw => "bw",
            Mix::Validity => "validity",
            Mix::Handoff => "handoff",
        }
    }

    pub fn parse(s: &str) -> Option<Mix> {
        Mix::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Concrete scenarios for one seed.
    pub fn scenarios(self, template: &Scenario, seed: u64) -> Vec<Scenario> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_a11_5ca1e);
        let mut base = template.clone();
        base.seed = seed;
        match self {
            Mix::None => vec![base],
            Mix::Adversarial => vec![adversarial(&base, base.params, &mut rng, false)],
            Mix::Agreement => {
                let n = [4, 5, 7][(seed % 3) as usize];
                let params = SystemParams::new(n, (n - 1) / 3).expect("n > 3t by construction");
                let force = rng.gen_bool(0.5);
                vec![adversarial(&base, params, &mut rng, force)]
            }
            Mix::Bw => [(2, 0), (0, 2), (1, 1)]
                .into_iter()
                .map(|(y, z)| bw_scenario(&base, y, z, &mut rng))
                .collect(),
            Mix::Validity => vec![validity(&base, &mut rng)],
            Mix::Handoff => vec![handoff(&base, &mut rng)],
        }
    }
}

fn proposals(params: SystemParams, rng: &mut ChaCha8Rng) -> BTreeMap<ProcessId, Value> {
    ProcessId::all(params)
        .map(|p| (p, Value::proposal(if rng.gen_bool(0.5) { "a" } else { "b" })))
        .collect()
}

fn async_links(base: &mut Scenario, max: u64, drift_every: Option<u64>) {
    base.default_link = LinkModel::ASYNC;
    base.overrides.clear();
    base.async_delays = AsyncDelays {
        min: 1,
        max,
        drift_every,
    };
}

fn adversarial(template: &Scenario, params: SystemParams, rng: &mut ChaCha8Rng, split_first: bool) -> Scenario {
    let mut s = template.clone();
    s.params = params;
    s.values = proposals(params, rng);
    s.bw = None;
    s.max_rounds = 3 * params.n() as u32;
    async_links(&mut s, rng.gen_range(2..=5), None);
    let catalog = Strategy::catalog();
    let mut ids: Vec<ProcessId> = ProcessId::all(params).collect();
    ids.shuffle(rng);
    s.byzantine = BTreeMap::new();
    if split_first {
        s.byzantine.insert(ProcessId::from_index(1), Strategy::CertifiedBothValues);
    }
    for p in ids {
        if s.byzantine.len() >= params.t() {
            break;
        }
        s.byzantine
            .entry(p)
            .or_insert_with(|| *catalog.choose(rng).expect("catalog is not empty"));
    }
    s.name = format!("{}/n={}/{}", s.name, params.n(), describe(&s.byzantine));
    s
}

fn bw_scenario(template: &Scenario, y: usize, z: usize, rng: &mut ChaCha8Rng) -> Scenario {
    let params = SystemParams::new(4, 1).expect("4 > 3");
    let mut s = template.clone();
    s.params = params;
    s.values = proposals(params, rng);
    async_links(&mut s, 4, Some(25));
    let mut ids: Vec<ProcessId> = ProcessId::all(params).collect();
    ids.shuffle(rng);
    let pivot = ids[0];
    let byz = ids[1 + rng.gen_range(0..ids.len() - 1)];
    let others: Vec<ProcessId> = {
        let mut o: Vec<ProcessId> = ids[1..].to_vec();
        o.shuffle(rng);
        o
    };
    let catalog = Strategy::catalog();
    s.byzantine = BTreeMap::from([(byz, *catalog.choose(rng).expect("catalog is not empty"))]);
    s.bw = Some(BwAssignment {
        pivot,
        y: others[..y].iter().copied().collect::<BTreeSet<_>>(),
        z: others[y..y + z].iter().copied().collect::<BTreeSet<_>>(),
        delta_bound: rng.gen_range(1..=2),
        stabilization: rng.gen_range(0..=10),
    });
    s.max_rounds = 4 * params.n() as u32;
    s.name = format!("{}/y={y},z={z}/pivot={pivot}/{}", s.name, describe(&s.byzantine));
    s
}

fn validity(template: &Scenario, rng: &mut ChaCha8Rng) -> Scenario {
    let n = [4, 5, 7][rng.gen_range(0..3)];
    let params = SystemParams::new(n, (n - 1) / 3).expect("n > 3t by construction");
    let mut s = template.clone();
    s.params = params;
    s.bw = None;
    s.max_rounds = 3 * n as u32;
    async_links(&mut s, rng.gen_range(2..=5), None);
    let count = rng.gen_range(0..=params.t());
    let mut ids: Vec<ProcessId> = ProcessId::all(params).collect();
    ids.shuffle(rng);
    let catalog = Strategy::catalog();
    s.byzantine = ids[..count]
        .iter()
        .map(|p| (*p, *catalog.choose(rng).expect("catalog is not empty")))
        .collect();
    s.values = ProcessId::all(params)
        .map(|p| {
            let v = if s.byzantine.contains_key(&p) { "w" } else { "v" };
            (p, Value::proposal(v))
        })
        .collect();
    s.name = format!("{}/n={n}/{}", s.name, describe(&s.byzantine));
    s
}

fn handoff(template: &Scenario, rng: &mut ChaCha8Rng) -> Scenario {
    let params = SystemParams::new(4, 1).expect("4 > 3");
    let mut s = template.clone();
    s.params = params;
    s.values = proposals(params, rng);
    s.bw = None;
    s.max_rounds = 12;
    async_links(&mut s, rng.gen_range(2..=3), None);
    // The round-1 coordinator answers the victim late, so the victim times
    // out and relays the coordinator's value only after everyone else has.
    let delayer = ProcessId::from_index(1);
    let victim = ProcessId::from_index(rng.gen_range(2..=4));
    s.byzantine = BTreeMap::from([(
        delayer,
        Strategy::Delayer {
            extra: rng.gen_range(9..=40),
            victim: Some(victim),
        },
    )]);
    s.name = format!("{}/{}", s.name, describe(&s.byzantine));
    s
}

fn describe(byzantine: &BTreeMap<ProcessId, Strategy>) -> String {
    if byzantine.is_empty() {
        return "fault-free".into();
    }
    byzantine
        .iter()
        .map(|(p, s)| format!("{p}={s}"))
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub mix: Mix,
    /// Sorted by seed, then scenario name.
    pub runs: Vec<RunReport>,
}

impl SweepReport {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| !r.passed()).count()
    }

    pub fn passed(&self) -> bool {
        self.failures() == 0
    }

    /// Number of runs whose verdict for `property` has `status`.
    pub fn count(&self, property: &str, status: Status) -> usize {
        self.runs
            .iter()
            .filter(|r| r.verdict(property).map_or(false, |v| v.status == status))
            .count()
    }

    /// How many correct processes decided in each round.
    pub fn round_histogram(&self) -> BTreeMap<u32, usize> {
        let mut h = BTreeMap::new();
        for r in &self.runs {
            for round in r.rounds.values() {
                *h.entry(*round).or_insert(0) += 1;
            }
        }
        h
    }

    pub fn lines(&self) -> String {
        let mut s = String::new();
        for r in &self.runs {
            s.push_str(&r.lines());
        }
        s.push_str(&self.totals_line());
        s
    }

    fn totals_line(&self) -> String {
        let mut s = format!(
            "sweep\t{}\truns={}\tfailures={}",
            self.mix.name(),
            self.runs.len(),
            self.failures()
        );
        let properties: BTreeSet<&str> = self
            .runs
            .iter()
            .flat_map(|r| r.verdicts.iter().map(|v| v.property))
            .collect();
        for p in properties {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for r in &self.runs {
                if let Some(v) = r.verdict(p) {
                    *counts.entry(v.status.label()).or_insert(0) += 1;
                }
            }
            let parts: Vec<String> = counts.iter().map(|(k, n)| format!("{k}:{n}")).collect();
            write!(s, "\t{p}={}", parts.join("/")).unwrap();
        }
        s.push('\n');
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "sweep {}: {} runs, {} failed\n",
            self.mix.name(),
            self.runs.len(),
            self.failures()
        );
        for line in self.totals_line().trim_end().split('\t').skip(4) {
            writeln!(s, "  {line}").unwrap();
        }
        let hist: Vec<String> = self
            .round_histogram()
            .iter()
            .map(|(r, n)| format!("r{r}:{n}"))
            .collect();
        writeln!(s, "  decision rounds: {}", hist.join(" ")).unwrap();
        for r in self.runs.iter().filter(|r| !r.passed()).take(10) {
            writeln!(s, "  FAILED {} seed {}", r.scenario, r.seed).unwrap();
        }
        s
    }
}

/// Runs every (seed, variation) pair in parallel.
pub fn sweep(template: &Scenario, seeds: Range<u64>, mix: Mix) -> Result<SweepReport, HarnessError> {
    let scenarios: Vec<Scenario> = seeds.flat_map(|seed| mix.scenarios(template, seed)).collect();
    let mut runs = scenarios
        .par_iter()
        .map(|s| run_once(s, s.seed, None).map(|(report, _)| report))
        .collect::<Result<Vec<_>, _>>()?;
    runs.sort_by(|a, b| (a.seed, &a.scenario).cmp(&(b.seed, &b.scenario)));
    Ok(SweepReport { mix, runs })
}
