//! Post-hoc analysis over session traces: empowerment as plug-in mutual
//! information, regret curves and the path-dependence score.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::action_space::Estimator;
use crate::pipeline::SessionTrace;
use crate::schemes::{to_canonical_json, ContextVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no data to analyse")]
    NoData,
    #[error("invalid binning: {0}")]
    Binning(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeBinning {
    pub bins: usize,
    pub range: (f64, f64),
}

impl Default for OutcomeBinning {
    fn default() -> Self {
        OutcomeBinning { bins: 10, range: (0.0, 100.0) }
    }
}

impl OutcomeBinning {
    /// Half-open bins; values outside the range land in the edge bins.
    pub fn bin(&self, r: f64) -> usize {
        let (lo, hi) = self.range;
        let t = ((r - lo) / (hi - lo) * self.bins as f64).floor();
        if t.is_nan() || t < 0.0 {
            0
        } else {
            (t as usize).min(self.bins - 1)
        }
    }

    fn validate(&self) -> Result<(), MetricsError> {
        if self.bins == 0 || self.range.1.partial_cmp(&self.range.0) != Some(std::cmp::Ordering::Greater) {
            return Err(MetricsError::Binning(format!("{} bins over {:?}", self.bins, self.range)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpowermentEstimate {
    /// I(A; O | x): per-context MI weighted by the context's sample share.
    pub mi_bits: f64,
    /// MI over all samples ignoring the context.
    pub pooled_mi_bits: f64,
    pub per_context: BTreeMap<String, f64>,
    pub n_traces: usize,
    pub n_samples: usize,
    /// Distinct actions observed.
    pub action_support: usize,
    pub outcome_bins: usize,
}

/// Plug-in MI in bits of a list of (action, outcome) pairs. Zero cells are skipped.
pub fn plugin_mi<A: Ord + Copy, O: Ord + Copy>(pairs: &[(A, O)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let n = pairs.len() as f64;
    let mut joint: BTreeMap<(A, O), f64> = BTreeMap::new();
    let mut pa: BTreeMap<A, f64> = BTreeMap::new();
    let mut po: BTreeMap<O, f64> = BTreeMap::new();
    for &(a, o) in pairs {
        *joint.entry((a, o)).or_default() += 1.0;
        *pa.entry(a).or_default() += 1.0;
        *po.entry(o).or_default() += 1.0;
    }
    let mi: f64 = joint.iter().map(|((a, o), c)| (c / n) * (c * n / (pa[a] * po[o])).log2()).sum();
    mi.max(0.0)
}

pub fn context_digest(x: &ContextVector) -> String {
    hex::encode(Sha256::digest(to_canonical_json(x).unwrap_or_default().as_bytes()))
}

/// (context digest, action estimator, reward) for every executed or failed
/// iteration of every trace.
pub fn action_outcome_samples(traces: &[SessionTrace]) -> Vec<(String, Estimator, f64)> {
    traces
        .iter()
        .flat_map(|t| {
            let ctx = context_digest(&t.problem.context);
            t.iterations
                .iter()
                .filter_map(move |r| r.action.estimator().ok().map(|e| (ctx.clone(), e, r.reward.total)))
        })
        .collect()
}

pub fn estimate_empowerment(traces: &[SessionTrace], binning: OutcomeBinning) -> Result<EmpowermentEstimate, MetricsError> {
    binning.validate()?;
    let samples = action_outcome_samples(traces);
    if samples.is_empty() {
        return Err(MetricsError::NoData);
    }
    let binned: Vec<(&str, Estimator, usize)> = samples.iter().map(|(c, a, r)| (c.as_str(), *a, binning.bin(*r))).collect();
    let mut groups: BTreeMap<&str, Vec<(Estimator, usize)>> = BTreeMap::new();
    for (c, a, o) in &binned {
        groups.entry(c).or_default().push((*a, *o));
    }
    let n = binned.len() as f64;
    let per_context: BTreeMap<String, f64> = groups.iter().map(|(c, pairs)| (c.to_string(), plugin_mi(pairs))).collect();
    let mi_bits = groups.iter().map(|(c, pairs)| pairs.len() as f64 / n * per_context[*c]).sum();
    let pooled: Vec<(Estimator, usize)> = binned.iter().map(|(_, a, o)| (*a, *o)).collect();
    let mut actions: Vec<Estimator> = pooled.iter().map(|(a, _)| *a).collect();
    actions.sort();
    actions.dedup();
    Ok(EmpowermentEstimate {
        mi_bits,
        pooled_mi_bits: plugin_mi(&pooled),
        per_context,
        n_traces: traces.len(),
        n_samples: binned.len(),
        action_support: actions.len(),
        outcome_bins: binning.bins,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDependenceScore {
    pub score: f64,
    pub per_start_best_rewards: BTreeMap<Estimator, Vec<f64>>,
    /// Starts the runner reported as infeasible.
    pub skipped: Vec<Estimator>,
}

/// Population variance of the per-start mean best rewards over the square
/// of their mean.
pub fn normalized_variance(means: &[f64]) -> f64 {
    if means.is_empty() {
        return 0.0;
    }
    let k = means.len() as f64;
    let m = means.iter().sum::<f64>() / k;
    if m <= 0.0 {
        return 0.0;
    }
    means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / k / (m * m)
}

/// `runner(start, seed)` runs one session with iteration 1 pinned to
/// `start` and returns its best reward, or None when the start is infeasible.
pub fn path_dependence<F>(mut runner: F, forced_starts: &[Estimator], seeds: &[u64]) -> Result<PathDependenceScore, MetricsError>
where
    F: FnMut(Estimator, u64) -> Option<f64>,
{
    if seeds.is_empty() || forced_starts.is_empty() {
        return Err(MetricsError::NoData);
    }
    let mut per_start = BTreeMap::new();
    let mut skipped = Vec::new();
    'starts: for &e in forced_starts {
        let mut best = Vec::with_capacity(seeds.len());
        for &s in seeds {
            match runner(e, s) {
                Some(r) => best.push(r),
                None => {
                    skipped.push(e);
                    continue 'starts;
                }
            }
        }
        per_start.insert(e, best);
    }
    if per_start.is_empty() {
        return Err(MetricsError::NoData);
    }
    let means: Vec<f64> = per_start.values().map(|v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64).collect();
    Ok(PathDependenceScore { score: normalized_variance(&means), per_start_best_rewards: per_start, skipped })
}

/// Cumulative regret after each iteration.
pub fn regret_curve(trace: &SessionTrace, r_star: f64) -> Vec<f64> {
    regret_prefix(&trace.rewards(), r_star)
}

pub fn regret_prefix(rewards: &[f64], r_star: f64) -> Vec<f64> {
    rewards
        .iter()
        .scan(0.0, |acc, r| {
            *acc += r_star - r;
            Some(*acc)
        })
        .collect()
}
