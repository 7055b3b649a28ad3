//! Run traces and their line format.
//!
//! A trace file starts with `#` header lines describing what the checkers
//! need to know about the run, followed by one tab-separated record per
//! event: time, kind, actor, peer, round, phase, message digest, value
//! digest. Absent fields are written as `-`. A final `# end <count>` line
//! makes truncation detectable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::adversary::parse_pid;
use crate::model::{ProcessId, Value};

const MAGIC: &str = "# bw-consensus trace v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecordKind {
    Send,
    Deliver,
    TimerSet,
    TimerFire,
    Decide,
    Discard,
    Halt,
}

impl RecordKind {
    pub fn label(self) -> &'static str {
        match self {
            RecordKind::Send => "Send",
            RecordKind::Deliver => "Deliver",
            RecordKind::TimerSet => "TimerSet",
            RecordKind::TimerFire => "TimerFire",
            RecordKind::Decide => "Decide",
            RecordKind::Discard => "Discard",
            RecordKind::Halt => "Halt",
        }
    }

    fn parse(s: &str) -> Option<RecordKind> {
        Some(match s {
            "Send" => RecordKind::Send,
            "Deliver" => RecordKind::Deliver,
            "TimerSet" => RecordKind::TimerSet,
            "TimerFire" => RecordKind::TimerFire,
            "Decide" => RecordKind::Decide,
            "Discard" => RecordKind::Discard,
            "Halt" => RecordKind::Halt,
            _ => return None,
        })
    }
}

/// One trace line. For Send the peer is the recipient; for Deliver and
/// Discard it is the message's signer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub time: u64,
    pub kind: RecordKind,
    pub actor: ProcessId,
    pub peer: Option<ProcessId>,
    pub round: Option<u32>,
    pub phase: String,
    pub msg: Option<String>,
    pub value: Option<String>,
}

impl Record {
    /// Message label with any discard reason stripped.
    pub fn msg_kind(&self) -> &str {
        self.phase.split(':').next().unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TraceHeader {
    pub n: usize,
    pub t: usize,
    pub seed: u64,
    pub byzantine: BTreeSet<ProcessId>,
    /// Value digest of each process's proposal.
    pub proposals: BTreeMap<ProcessId, String>,
    pub bw_pivot: Option<ProcessId>,
    pub max_rounds: u32,
}

impl TraceHeader {
    pub fn is_correct(&self, p: ProcessId) -> bool {
        !self.byzantine.contains(&p)
    }

    pub fn correct(&self) -> impl Iterator<Item = ProcessId> + '_ {
        (1..=self.n as u32)
            .map(ProcessId::from_index)
            .filter(|p| self.is_correct(*p))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<Record>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed trace at line {line}: {reason}")]
pub struct TraceError {
    pub line: usize,
    pub reason: String,
}

/// Digest the trace uses for ⊥.
pub fn bottom_digest() -> String {
    Value::Bottom.short_digest()
}

fn opt<T: fmt::Display>(x: &Option<T>) -> String {
    x.as_ref().map_or_else(|| "-".to_string(), |v| v.to_string())
}

impl Trace {
    pub fn to_text(&self) -> String {
        let h = &self.header;
        let mut s = String::new();
        let list = |ps: &mut dyn Iterator<Item = String>| {
            let v: Vec<String> = ps.collect();
            if v.is_empty() {
                "-".to_string()
            } else {
                v.join(" ")
            }
        };
        writeln!(s, "{MAGIC}").unwrap();
        writeln!(s, "# params n={} t={} seed={} max_rounds={}", h.n, h.t, h.seed, h.max_rounds).unwrap();
        writeln!(s, "# byzantine {}", list(&mut h.byzantine.iter().map(|p| p.to_string()))).unwrap();
        writeln!(
            s,
            "# proposals {}",
            list(&mut h.proposals.iter().map(|(p, d)| format!("{p}={d}")))
        )
        .unwrap();
        writeln!(s, "# bw {}", opt(&h.bw_pivot)).unwrap();
        for r in &self.records {
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.time,
                r.kind.label(),
                r.actor,
                opt(&r.peer),
                opt(&r.round),
                r.phase,
                opt(&r.msg),
                opt(&r.value)
            )
            .unwrap();
        }
        writeln!(s, "# end {}", self.records.len()).unwrap();
        s
    }

    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        let err = |line: usize, reason: &str| TraceError {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, MAGIC)) => {}
            _ => return Err(err(1, "missing trace header")),
        }
        let mut header = TraceHeader::default();
        let mut records = Vec::new();
        let mut ended = None;
        let mut last_line = 1;
        for (no, line) in lines {
            last_line = no;
            if ended.is_some() {
                return Err(err(no, "content after end marker"));
            }
            if let Some(rest) = line.strip_prefix("# ") {
                let (key, body) = rest.split_once(' ').unwrap_or((rest, ""));
                match key {
                    "params" => {
                        for kv in body.split_whitespace() {
                            let (k, v) = kv.split_once('=').ok_or_else(|| err(no, "bad params"))?;
                            let num = || v.parse::<u64>().map_err(|_| err(no, "bad params"));
                            match k {
                                "n" => header.n = num()? as usize,
                                "t" => header.t = num()? as usize,
                                "seed" => header.seed = num()?,
                                "max_rounds" => header.max_rounds = num()? as u32,
                                _ => return Err(err(no, "unknown param")),
                            }
                        }
                    }
                    "byzantine" => {
                        for p in body.split_whitespace().filter(|p| *p != "-") {
                            header
                                .byzantine
                                .insert(parse_pid(p).ok_or_else(|| err(no, "bad process id"))?);
                        }
                    }
                    "proposals" => {
                        for kv in body.split_whitespace().filter(|p| *p != "-") {
                            let (p, d) = kv.split_once('=').ok_or_else(|| err(no, "bad proposal"))?;
                            let p = parse_pid(p).ok_or_else(|| err(no, "bad process id"))?;
                            header.proposals.insert(p, d.to_string());
                        }
                    }
                    "bw" => {
                        header.bw_pivot = match body.trim() {
                            "-" => None,
                            p => Some(parse_pid(p).ok_or_else(|| err(no, "bad pivot"))?),
                        }
                    }
                    "end" => {
                        let count: usize = body.trim().parse().map_err(|_| err(no, "bad end marker"))?;
                        if count != records.len() {
                            return Err(err(no, "record count mismatch"));
                        }
                        ended = Some(no);
                    }
                    _ => return Err(err(no, "unknown header line")),
                }
                continue;
            }
            records.push(parse_record(line).map_err(|reason| err(no, reason))?);
        }
        if ended.is_none() {
            return Err(err(last_line + 1, "truncated: no end marker"));
        }
        if header.n == 0 {
            return Err(err(2, "missing params"));
        }
        Ok(Trace { header, records })
    }
}

fn parse_record(line: &str) -> Result<Record, &'static str> {
    let fields: Vec<&str> = line.split('\t').collect();
    let [time, kind, actor, peer, round, phase, msg, value] = fields.as_slice() else {
        return Err("expected 8 tab-separated fields");
    };
    let dash = |s: &str| (s != "-").then(|| s.to_string());
    Ok(Record {
        time: time.parse().map_err(|_| "bad time")?,
        kind: RecordKind::parse(kind).ok_or("unknown record kind")?,
        actor: parse_pid(actor).ok_or("bad actor")?,
        peer: match *peer {
            "-" => None,
            p => Some(parse_pid(p).ok_or("bad peer")?),
        },
        round: match *round {
            "-" => None,
            r => Some(r.parse().map_err(|_| "bad round")?),
        },
        phase: phase.to_string(),
        msg: dash(msg),
        value: dash(value),
    })
}
