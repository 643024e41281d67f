//! JSONL session log: one header line, one line per iteration, one summary.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoints::{CheckpointResult, Cp0Result};
use crate::schemes::ProblemScheme;

use super::{IterationRecord, Outcome, SessionConfig, SessionTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceLine {
    Header {
        session_id: String,
        config_digest: String,
        provider_id: String,
        environment_id: String,
        null_floor: f64,
        config: Box<SessionConfig>,
        problem: Box<ProblemScheme>,
        group_a_events: Vec<CheckpointResult>,
        cp0: Option<Box<Cp0Result>>,
    },
    Iteration(Box<IterationRecord>),
    Summary {
        outcome: Outcome,
        best_reward: f64,
        iterations_to_converge: Option<u32>,
        submartingale_flags: Vec<u32>,
        abort_reason: Option<String>,
    },
}

pub fn trace_to_jsonl(t: &SessionTrace) -> Result<String, serde_json::Error> {
    let mut lines = vec![TraceLine::Header {
        session_id: t.session_id.clone(),
        config_digest: t.config_digest.clone(),
        provider_id: t.provider_id.clone(),
        environment_id: t.environment_id.clone(),
        null_floor: t.null_floor,
        config: Box::new(t.config.clone()),
        problem: Box::new(t.problem.clone()),
        group_a_events: t.group_a_events.clone(),
        cp0: t.cp0.clone().map(Box::new),
    }];
    lines.extend(t.iterations.iter().map(|r| TraceLine::Iteration(Box::new(r.clone()))));
    lines.push(TraceLine::Summary {
        outcome: t.outcome,
        best_reward: t.best_reward,
        iterations_to_converge: t.iterations_to_converge,
        submartingale_flags: t.submartingale_flags.clone(),
        abort_reason: t.abort_reason.clone(),
    });
    let mut out = String::new();
    for l in &lines {
        out.push_str(&serde_json::to_string(l)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(t: &SessionTrace, path: &Path) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(trace_to_jsonl(t)?.as_bytes())?;
    w.flush()
}

fn bad(msg: impl Into<String>) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.into())
}

/// Reads every session in the file; several traces may be concatenated.
pub fn read_jsonl(path: &Path) -> std::io::Result<Vec<SessionTrace>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut cur: Option<SessionTrace> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine = serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
        match parsed {
            TraceLine::Header { session_id, config_digest, provider_id, environment_id, null_floor, config, problem, group_a_events, cp0 } => {
                if cur.is_some() {
                    return Err(bad(format!("line {}: header before summary", i + 1)));
                }
                cur = Some(SessionTrace {
                    session_id,
                    config_digest,
                    provider_id,
                    environment_id,
                    null_floor,
                    config: *config,
                    problem: *problem,
                    group_a_events,
                    cp0: cp0.map(|c| *c),
                    iterations: Vec::new(),
                    outcome: Outcome::Aborted,
                    best_reward: 0.0,
                    iterations_to_converge: None,
                    submartingale_flags: Vec::new(),
                    abort_reason: None,
                });
            }
            TraceLine::Iteration(r) => {
                cur.as_mut().ok_or_else(|| bad(format!("line {}: iteration without header", i + 1)))?.iterations.push(*r);
            }
            TraceLine::Summary { outcome, best_reward, iterations_to_converge, submartingale_flags, abort_reason } => {
                let mut t = cur.take().ok_or_else(|| bad(format!("line {}: summary without header", i + 1)))?;
                t.outcome = outcome;
                t.best_reward = best_reward;
                t.iterations_to_converge = iterations_to_converge;
                t.submartingale_flags = submartingale_flags;
                t.abort_reason = abort_reason;
                out.push(t);
            }
        }
    }
    if cur.is_some() {
        return Err(bad("truncated trace: missing summary line"));
    }
    Ok(out)
}
