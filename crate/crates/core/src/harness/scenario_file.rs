//! Scenario files.
//!
//! ```toml
//! name = "bisource-demo"          # optional, defaults to the file stem
//!
//! [system]
//! n = 4
//! t = 1
//!
//! [values]                         # per process; `default` fills the rest
//! default = "a"
//! p4 = "b"
//!
//! [byzantine]
//! p4 = "Delayer(extra=8, victim=p2)"
//!
//! [links]
//! default = "async"                # async | timely | winning
//! delta = 1                        # bound for timely links
//! stabilization = 0
//! async_min = 1
//! async_max = 8
//! drift_every = 50                 # optional: async upper bound grows by 1 every 50 ticks
//! [[links.override]]
//! from = "p1"
//! to = "p2"
//! class = "timely"
//! delta = 2
//!
//! [bw]
//! preset = "mixed"                 # bisource | winning | mixed
//! pivot = "p1"                     # defaults to the lowest correct process
//! y = 1                            # a count or a list such as ["p2"]
//! z = 1
//! delta = 1
//! stabilization = 0
//!
//! [run]
//! seed = 7
//! max_rounds = 16
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::adversary::{parse_pid, Strategy};
use crate::auth::Rules;
use crate::model::{ProcessId, SystemParams, Value};
use crate::netsim::{AsyncDelays, BwAssignment, LinkClass, LinkModel, Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum ScenarioFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("field `{field}`: {reason}")]
    Field { field: String, reason: String },
    #[error("invalid scenario: {0}")]
    Invalid(#[from] ScenarioError),
}

fn field(field: impl Into<String>, reason: impl Into<String>) -> ScenarioFileError {
    ScenarioFileError::Field {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDoc {
    name: Option<String>,
    system: SystemDoc,
    #[serde(default)]
    values: BTreeMap<String, String>,
    #[serde(default)]
    byzantine: BTreeMap<String, String>,
    #[serde(default)]
    links: LinksDoc,
    bw: Option<BwDoc>,
    #[serde(default)]
    run: RunDoc,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemDoc {
    n: usize,
    t: usize,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinksDoc {
    #[serde(default = "async_class")]
    default: String,
    #[serde(default = "one")]
    delta: u64,
    #[serde(default)]
    stabilization: u64,
    #[serde(default = "one")]
    async_min: u64,
    #[serde(default = "default_async_max")]
    async_max: u64,
    drift_every: Option<u64>,
    #[serde(default, rename = "override")]
    overrides: Vec<OverrideDoc>,
}

fn async_class() -> String {
    "async".into()
}

fn default_async_max() -> u64 {
    AsyncDelays::default().max
}

impl Default for LinksDoc {
    fn default() -> Self {
        LinksDoc {
            default: async_class(),
            delta: 1,
            stabilization: 0,
            async_min: 1,
            async_max: default_async_max(),
            drift_every: None,
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OverrideDoc {
    from: String,
    to: String,
    class: String,
    delta: Option<u64>,
    stabilization: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Members {
    Count(usize),
    Ids(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BwDoc {
    preset: Option<String>,
    pivot: Option<String>,
    y: Option<Members>,
    z: Option<Members>,
    #[serde(default = "one")]
    delta: u64,
    #[serde(default)]
    stabilization: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunDoc {
    #[serde(default)]
    seed: u64,
    max_rounds: Option<u32>,
    mutation: Option<String>,
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    parse_scenario(&text, &stem)
}

/// Parses and validates a scenario document. `fallback_name` is used when
/// the document has no `name`.
pub fn parse_scenario(text: &str, fallback_name: &str) -> Result<Scenario, ScenarioFileError> {
    let doc: FileDoc = toml::from_str(text).map_err(|e| ScenarioFileError::Parse(e.to_string()))?;
    let params = SystemParams::new(doc.system.n, doc.system.t).map_err(ScenarioError::from)?;
    let pid = |key: &str, s: &str| -> Result<ProcessId, ScenarioFileError> {
        let p = parse_pid(s).ok_or_else(|| field(key, format!("`{s}` is not a process id like p1")))?;
        if p.index() > params.n() {
            return Err(ScenarioError::UnknownProcess(p).into());
        }
        Ok(p)
    };

    let mut values = BTreeMap::new();
    let default_value = doc.values.get("default").cloned();
    for (k, v) in &doc.values {
        if k != "default" {
            values.insert(pid(&format!("values.{k}"), k)?, Value::proposal(v));
        }
    }
    if let Some(d) = default_value {
        for p in ProcessId::all(params) {
            values.entry(p).or_insert_with(|| Value::proposal(&d));
        }
    }

    let mut byzantine = BTreeMap::new();
    for (k, s) in &doc.byzantine {
        let key = format!("byzantine.{k}");
        let strategy: Strategy = s.parse().map_err(|e| field(&key, format!("{e}")))?;
        byzantine.insert(pid(&key, k)?, strategy);
    }

    let links = &doc.links;
    let class = |key: &str, s: &str| {
        LinkClass::parse(s).ok_or_else(|| field(key, format!("unknown link class `{s}`")))
    };
    let default_link = LinkModel {
        class: class("links.default", &links.default)?,
        delta_bound: links.delta,
        stabilization: links.stabilization,
    };
    let mut overrides = BTreeMap::new();
    for (i, o) in links.overrides.iter().enumerate() {
        let key = format!("links.override[{i}]");
        let model = LinkModel {
            class: class(&key, &o.class)?,
            delta_bound: o.delta.unwrap_or(links.delta),
            stabilization: o.stabilization.unwrap_or(links.stabilization),
        };
        overrides.insert((pid(&key, &o.from)?, pid(&key, &o.to)?), model);
    }

    let bw = match &doc.bw {
        None => None,
        Some(bw) => Some(resolve_bw(bw, params, &byzantine, &pid)?),
    };

    let rules = match doc.run.mutation.as_deref() {
        None => Rules::default(),
        Some(m) => mutation_rules(m)?,
    };

    let scenario = Scenario {
        name: doc.name.unwrap_or_else(|| fallback_name.to_string()),
        params,
        values,
        byzantine,
        default_link,
        overrides,
        async_delays: AsyncDelays {
            min: links.async_min,
            max: links.async_max,
            drift_every: links.drift_every,
        },
        bw,
        seed: doc.run.seed,
        max_rounds: doc.run.max_rounds.unwrap_or(4 * params.n() as u32),
        rules,
    };
    scenario.validate()?;
    Ok(scenario)
}

#[cfg(debug_assertions)]
fn mutation_rules(name: &str) -> Result<Rules, ScenarioFileError> {
    match name {
        "no-phase3-filter" => Ok(Rules::without_phase3_filter()),
        other => Err(field("run.mutation", format!("unknown mutation `{other}`"))),
    }
}

#[cfg(not(debug_assertions))]
fn mutation_rules(_: &str) -> Result<Rules, ScenarioFileError> {
    Err(field("run.mutation", "mutations are only available in debug builds"))
}

fn resolve_bw(
    doc: &BwDoc,
    params: SystemParams,
    byzantine: &BTreeMap<ProcessId, Strategy>,
    pid: &dyn Fn(&str, &str) -> Result<ProcessId, ScenarioFileError>,
) -> Result<BwAssignment, ScenarioFileError> {
    let t = params.t();
    let (preset_y, preset_z) = match doc.preset.as_deref() {
        None => (None, None),
        Some("bisource") => (Some(2 * t), Some(0)),
        Some("winning") => (Some(0), Some(2 * t)),
        Some("mixed") => (Some(t), Some(t)),
        Some(other) => return Err(field("bw.preset", format!("unknown preset `{other}`"))),
    };
    let pivot = match &doc.pivot {
        Some(p) => pid("bw.pivot", p)?,
        None => ProcessId::all(params)
            .find(|p| !byzantine.contains_key(p))
            .ok_or_else(|| field("bw.pivot", "no correct process to act as pivot"))?,
    };
    let mut taken: BTreeSet<ProcessId> = BTreeSet::new();
    let mut pick = |key: &str, members: Option<&Members>, preset: Option<usize>| {
        let ids: Vec<ProcessId> = match members {
            Some(Members::Ids(ids)) => ids.iter().map(|s| pid(key, s)).collect::<Result<_, _>>()?,
            Some(Members::Count(k)) => take_next(params, pivot, &taken, *k, key)?,
            None => take_next(params, pivot, &taken, preset.unwrap_or(0), key)?,
        };
        taken.extend(ids.iter().copied());
        Ok::<BTreeSet<ProcessId>, ScenarioFileError>(ids.into_iter().collect())
    };
    let y = pick("bw.y", doc.y.as_ref(), preset_y)?;
    let z = pick("bw.z", doc.z.as_ref(), preset_z)?;
    Ok(BwAssignment {
        pivot,
        y,
        z,
        delta_bound: doc.delta,
        stabilization: doc.stabilization,
    })
}

/// The `k` lowest-numbered processes other than the pivot not yet assigned.
fn take_next(
    params: SystemParams,
    pivot: ProcessId,
    taken: &BTreeSet<ProcessId>,
    k: usize,
    key: &str,
) -> Result<Vec<ProcessId>, ScenarioFileError> {
    let ids: Vec<ProcessId> = ProcessId::all(params)
        .filter(|p| *p != pivot && !taken.contains(p))
        .take(k)
        .collect();
    if ids.len() < k {
        return Err(field(key, format!("not enough processes for {k} neighbours")));
    }
    Ok(ids)
}
