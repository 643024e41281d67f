//! Condition x seed grids of independent sessions and their comparison table.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action_space::ActionSpace;
use crate::agents::DriftSpec;
use crate::archive::Archive;
use crate::checkpoints::{CheckpointConfig, Verdict};
use crate::embedding::EmbeddingProvider;
use crate::schemes::ProblemDescription;

use super::{run_session, Environment, Outcome, PipelineError, SessionConfig, SessionDeps, SessionTrace};

/// One arm of an ablation: checkpoint toggles and the drift it is exposed to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCondition {
    pub name: String,
    pub checkpoints: CheckpointConfig,
    #[serde(default)]
    pub inspector: Option<bool>,
    #[serde(default)]
    pub drift: Vec<DriftSpec>,
}

impl AblationCondition {
    pub fn apply(&self, base: &SessionConfig, seed: u64) -> SessionConfig {
        let mut cfg = base.clone();
        cfg.checkpoints = self.checkpoints.clone();
        if let Some(i) = self.inspector {
            cfg.inspector = i;
        }
        cfg.drift = self.drift.clone();
        cfg.seed = seed;
        cfg.session_id = Some(format!("{}-seed{}", self.name, seed));
        cfg
    }
}

/// One CSV row. Column order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub condition: String,
    pub seed: u64,
    pub n_iterations: usize,
    pub mismatches: usize,
    /// Iteration 1 ran the estimator the policy chose.
    #[serde(rename = "match")]
    pub first_match: bool,
    pub first_reward: f64,
    pub best_reward: f64,
    pub iterations_to_converge: Option<u32>,
    pub cp_blocks: usize,
    pub cp_warnings: usize,
    pub drift_injections: usize,
    pub outcome: Outcome,
}

impl AblationRow {
    pub fn from_trace(condition: &str, seed: u64, t: &SessionTrace) -> Self {
        let first = t.iterations.first();
        AblationRow {
            condition: condition.to_string(),
            seed,
            n_iterations: t.iterations.len(),
            mismatches: t.mismatches(),
            first_match: first.is_some_and(|r| r.plan.is_some() && !r.mismatch()),
            first_reward: first.map(|r| r.reward.total).unwrap_or(0.0),
            best_reward: t.best_reward,
            iterations_to_converge: t.iterations_to_converge,
            cp_blocks: t.count_verdicts(Verdict::Block),
            cp_warnings: t.count_verdicts(Verdict::Warn),
            drift_injections: t.iterations.iter().map(|r| r.drift_events.len()).sum(),
            outcome: t.outcome,
        }
    }
}

pub struct AblationRun {
    pub rows: Vec<AblationRow>,
    pub traces: Vec<SessionTrace>,
}

/// Every (condition, seed) pair on a fresh in-memory archive. Sessions run
/// in parallel; rows come back in condition-major, seed-minor order.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation_suite(
    base: &SessionConfig,
    desc: &ProblemDescription,
    conditions: &[AblationCondition],
    seeds: &[u64],
    space: &ActionSpace,
    env: &dyn Environment,
    provider: &dyn EmbeddingProvider,
    null_floor: f64,
) -> Result<AblationRun, PipelineError> {
    let jobs: Vec<(&AblationCondition, u64)> = conditions.iter().flat_map(|c| seeds.iter().map(move |s| (c, *s))).collect();
    let traces: Vec<SessionTrace> = jobs
        .par_iter()
        .map(|(c, seed)| {
            let archive = Archive::in_memory();
            let deps = SessionDeps { space, env, provider, null_floor, archive: &archive, policy: None };
            run_session(&c.apply(base, *seed), desc, deps).map(|o| o.trace)
        })
        .collect::<Result<_, _>>()?;
    let rows = jobs.iter().zip(&traces).map(|((c, s), t)| AblationRow::from_trace(&c.name, *s, t)).collect();
    Ok(AblationRun { rows, traces })
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record([
            "condition",
            "seed",
            "n_iterations",
            "mismatches",
            "match",
            "first_reward",
            "best_reward",
            "iterations_to_converge",
            "cp_blocks",
            "cp_warnings",
            "drift_injections",
            "outcome",
        ])?;
    }
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub runs: usize,
    pub runs_with_mismatch: usize,
    pub mismatch_rate: f64,
    pub mean_first_reward: f64,
    pub mean_best_reward: f64,
    pub median_iterations_to_converge: Option<f64>,
    pub cp_blocks: usize,
    pub cp_warnings: usize,
}

/// Per-condition aggregates in first-appearance order.
pub fn summarize(rows: &[AblationRow]) -> Vec<ConditionSummary> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.condition.as_str()) {
            names.push(&r.condition);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let rs: Vec<&AblationRow> = rows.iter().filter(|r| r.condition == name).collect();
            let k = rs.len() as f64;
            let with = rs.iter().filter(|r| r.mismatches > 0).count();
            let mut conv: Vec<f64> = rs.iter().filter_map(|r| r.iterations_to_converge.map(f64::from)).collect();
            conv.sort_by(f64::total_cmp);
            let median = match conv.len() {
                0 => None,
                m if m % 2 == 1 => Some(conv[m / 2]),
                m => Some((conv[m / 2 - 1] + conv[m / 2]) / 2.0),
            };
            ConditionSummary {
                condition: name.to_string(),
                runs: rs.len(),
                runs_with_mismatch: with,
                mismatch_rate: with as f64 / k,
                mean_first_reward: rs.iter().map(|r| r.first_reward).sum::<f64>() / k,
                mean_best_reward: rs.iter().map(|r| r.best_reward).sum::<f64>() / k,
                median_iterations_to_converge: median,
                cp_blocks: rs.iter().map(|r| r.cp_blocks).sum(),
                cp_warnings: rs.iter().map(|r| r.cp_warnings).sum(),
            }
        })
        .collect()
}
