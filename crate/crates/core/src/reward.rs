//! Four-component reward, the register of iterations and regret.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{runtime_baseline, Observation, SAResult, Severity};
use crate::pipeline::IterationRecord;
use crate::schemes::{ContextVector, IndexType, MethodScheme, FIRST_ORDER, TOTAL_ORDER};

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("malformed observation: {0}")]
    MalformedObservation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RewardComponent {
    #[serde(rename = "R_integrity")]
    Integrity,
    #[serde(rename = "R_accuracy")]
    Accuracy,
    #[serde(rename = "R_details")]
    Details,
    #[serde(rename = "R_optimality")]
    Optimality,
}

impl RewardComponent {
    pub const ORDER: [RewardComponent; 4] =
        [RewardComponent::Integrity, RewardComponent::Accuracy, RewardComponent::Details, RewardComponent::Optimality];

    pub fn cap(self) -> f64 {
        match self {
            RewardComponent::Integrity | RewardComponent::Accuracy => 35.0,
            RewardComponent::Details | RewardComponent::Optimality => 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub component: RewardComponent,
    pub item: String,
    pub points: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub integrity: f64,
    pub accuracy: f64,
    pub details: f64,
    pub optimality: f64,
    pub total: f64,
    pub notes: Vec<ScoredItem>,
}

impl RewardBreakdown {
    pub fn from_components(integrity: f64, accuracy: f64, details: f64, optimality: f64) -> Self {
        let clamp = |v: f64, c: RewardComponent| v.clamp(0.0, c.cap());
        let integrity = clamp(integrity, RewardComponent::Integrity);
        let accuracy = clamp(accuracy, RewardComponent::Accuracy);
        let details = clamp(details, RewardComponent::Details);
        let optimality = clamp(optimality, RewardComponent::Optimality);
        RewardBreakdown {
            integrity,
            accuracy,
            details,
            optimality,
            total: integrity + accuracy + details + optimality,
            notes: Vec::new(),
        }
    }

    pub fn zero(reason: &str) -> Self {
        let mut b = RewardBreakdown::from_components(0.0, 0.0, 0.0, 0.0);
        b.notes.push(ScoredItem {
            component: RewardComponent::Integrity,
            item: "failed_iteration".into(),
            points: 0.0,
            detail: reason.into(),
        });
        b
    }

    /// Splits a total across the components in proportion to their caps.
    pub fn proportional(total: f64) -> Self {
        let t = total.clamp(0.0, 100.0) / 100.0;
        RewardBreakdown::from_components(35.0 * t, 35.0 * t, 15.0 * t, 15.0 * t)
    }

    pub fn component(&self, c: RewardComponent) -> f64 {
        match c {
            RewardComponent::Integrity => self.integrity,
            RewardComponent::Accuracy => self.accuracy,
            RewardComponent::Details => self.details,
            RewardComponent::Optimality => self.optimality,
        }
    }

    /// Component with the lowest share of its cap; ties go to the earliest.
    pub fn bottleneck(&self) -> RewardComponent {
        let mut best = RewardComponent::Integrity;
        let mut best_share = f64::INFINITY;
        for c in RewardComponent::ORDER {
            let share = self.component(c) / c.cap();
            if share < best_share {
                best = c;
                best_share = share;
            }
        }
        best
    }
}

/// Sub-rubric point splits. Table-level caps are fixed; these are defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub integrity_execution: f64,
    pub integrity_attributes: f64,
    pub integrity_no_critical: f64,
    pub accuracy_precision: f64,
    pub accuracy_sum: f64,
    pub accuracy_order: f64,
    pub convergence_tol: f64,
    pub sum_band: (f64, f64),
    pub order_tol: f64,
    pub range_tol: f64,
    pub rank_tol: f64,
    pub nan_penalty: f64,
    pub negative_variance_penalty: f64,
    pub inversion_penalty: f64,
    pub warning_penalty: f64,
    pub budget_share: f64,
    pub runtime_share: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            integrity_execution: 20.0,
            integrity_attributes: 10.0,
            integrity_no_critical: 5.0,
            accuracy_precision: 20.0,
            accuracy_sum: 8.0,
            accuracy_order: 7.0,
            convergence_tol: 1e-3,
            sum_band: (-0.1, 1.1),
            order_tol: 0.05,
            range_tol: 0.05,
            rank_tol: 0.01,
            nan_penalty: 5.0,
            negative_variance_penalty: 5.0,
            inversion_penalty: 3.0,
            warning_penalty: 2.0,
            budget_share: 0.6,
            runtime_share: 0.4,
        }
    }
}

/// Index vector used for accuracy, convergence and ranking.
pub fn primary_indices<'a>(r: &'a SAResult, ms: &MethodScheme) -> Option<&'a [f64]> {
    ms.required_attributes.first().and_then(|a| r.attribute(a))
}

fn normalised(v: &[f64], index_type: IndexType) -> Vec<f64> {
    if index_type != IndexType::Screening {
        return v.to_vec();
    }
    let m = v.iter().cloned().fold(0.0f64, f64::max);
    if m > 0.0 {
        v.iter().map(|x| x / m).collect()
    } else {
        v.to_vec()
    }
}

/// Pairs (i, j) ordered one way now and the other way before, both gaps above tol.
pub fn rank_inversions(cur: &[f64], prev: &[f64], tol: f64) -> usize {
    let n = cur.len().min(prev.len());
    let mut count = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let a = cur[i] - cur[j];
            let b = prev[i] - prev[j];
            if (a > tol && b < -tol) || (a < -tol && b > tol) {
                count += 1;
            }
        }
    }
    count
}

pub fn compute_reward(
    obs: &Observation,
    ms: &MethodScheme,
    x: &ContextVector,
    reference: Option<&[f64]>,
    prev: Option<&Observation>,
) -> Result<RewardBreakdown, RewardError> {
    compute_reward_with(&RewardConfig::default(), obs, ms, x, reference, prev)
}

pub fn compute_reward_with(
    cfg: &RewardConfig,
    obs: &Observation,
    ms: &MethodScheme,
    x: &ContextVector,
    reference: Option<&[f64]>,
    prev: Option<&Observation>,
) -> Result<RewardBreakdown, RewardError> {
    let status = obs.status.ok_or_else(|| RewardError::MalformedObservation("missing execution status".into()))?;
    let executed = status == crate::estimators::ExecutionStatus::Succeeded;
    if executed && obs.result.is_none() {
        return Err(RewardError::MalformedObservation("succeeded without a result".into()));
    }
    let mut notes = Vec::new();
    let mut note = |component, item: &str, points: f64, detail: String| {
        notes.push(ScoredItem { component, item: item.into(), points, detail });
    };
    use RewardComponent::*;

    let Some(result) = obs.result.as_ref().filter(|_| executed) else {
        let why = obs.error.as_ref().map(|e| e.to_string()).unwrap_or_else(|| "not executed".into());
        note(Integrity, "execution", 0.0, why);
        let mut b = RewardBreakdown::from_components(0.0, 0.0, 0.0, 0.0);
        b.notes = notes;
        return Ok(b);
    };

    let missing: Vec<&String> = ms.required_attributes.iter().filter(|a| result.attribute(a).is_none()).collect();
    let forbidden_read: Vec<&String> =
        obs.read_attributes.iter().filter(|a| ms.forbidden_attributes.contains(a)).collect();
    let attrs_ok = missing.is_empty() && forbidden_read.is_empty();
    let no_critical = !result.has_critical_warning();

    let mut integrity = cfg.integrity_execution;
    note(Integrity, "execution", cfg.integrity_execution, "executed".into());
    let attr_pts = if attrs_ok { cfg.integrity_attributes } else { 0.0 };
    integrity += attr_pts;
    note(Integrity, "attributes", attr_pts, format!("missing={missing:?} forbidden_read={forbidden_read:?}"));
    let crit_pts = if no_critical { cfg.integrity_no_critical } else { 0.0 };
    integrity += crit_pts;
    note(Integrity, "critical_warnings", crit_pts, format!("critical={}", !no_critical));

    let prev_result = prev
        .and_then(|p| p.result.as_ref().filter(|_| p.succeeded()))
        .filter(|p| p.estimator == result.estimator);
    let primary = if attrs_ok { primary_indices(result, ms) } else { None };
    let prev_primary = prev_result.and_then(|p| primary_indices(p, ms));

    let mut accuracy = 0.0;
    if let Some(p) = primary {
        let use_ref = ms.index_type == IndexType::VarianceBased
            && ms.required_attributes.first().map(|a| a == FIRST_ORDER).unwrap_or(false)
            && reference.map(|r| r.len() == p.len()).unwrap_or(false);
        let prec = if use_ref {
            let r = reference.unwrap();
            let mae = p.iter().zip(r).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64;
            let pts = if mae.is_finite() { cfg.accuracy_precision * (1.0 - mae / x.epsilon).max(0.0) } else { 0.0 };
            note(Accuracy, "precision", pts, format!("MAE vs reference = {mae:.6}"));
            pts
        } else if let Some(q) = prev_primary.filter(|q| q.len() == p.len()) {
            let a = normalised(p, ms.index_type);
            let b = normalised(q, ms.index_type);
            let delta = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0f64, |m, d| if d.is_nan() { f64::NAN } else { m.max(d) });
            let pts = if !delta.is_finite() {
                0.0
            } else if delta < cfg.convergence_tol {
                cfg.accuracy_precision
            } else {
                cfg.accuracy_precision * (1.0 - delta / x.epsilon).max(0.0)
            };
            note(Accuracy, "precision", pts, format!("max change vs previous = {delta:.6}"));
            pts
        } else {
            note(Accuracy, "precision", 0.0, "no reference and no previous observation".into());
            0.0
        };
        accuracy += prec;

        let finite = p.iter().all(|v| v.is_finite());
        let (c1, c2, what) = match ms.index_type {
            IndexType::VarianceBased => {
                let sum: f64 = p.iter().sum();
                let sum_ok = finite && sum >= cfg.sum_band.0 && sum <= cfg.sum_band.1;
                let order_ok = match (result.attribute(TOTAL_ORDER), ms.required_attributes.first()) {
                    (Some(st), Some(first)) if first == FIRST_ORDER => {
                        st.iter().zip(p).all(|(t, s)| t.is_finite() && *t >= s - cfg.order_tol)
                    }
                    _ => finite,
                };
                (sum_ok, order_ok, format!("sum={sum:.4}"))
            }
            IndexType::RankBased => {
                let lo = finite && p.iter().all(|v| *v >= -cfg.range_tol);
                let hi = finite && p.iter().all(|v| *v <= 1.0 + cfg.range_tol);
                (lo, hi, "rank index range".into())
            }
            IndexType::Screening | IndexType::Moments => {
                let spread_ok = ms
                    .required_attributes
                    .get(1)
                    .and_then(|a| result.attribute(a))
                    .map(|s| s.iter().all(|v| v.is_finite() && *v >= 0.0))
                    .unwrap_or(true);
                (finite && p.iter().all(|v| *v >= 0.0), spread_ok, "non-negative effects".into())
            }
        };
        let p1 = if c1 { cfg.accuracy_sum } else { 0.0 };
        let p2 = if c2 { cfg.accuracy_order } else { 0.0 };
        note(Accuracy, "consistency_sum", p1, what);
        note(Accuracy, "consistency_order", p2, String::new());
        accuracy += p1 + p2;
    } else {
        note(Accuracy, "precision", 0.0, "required indices unavailable".into());
    }

    let nan_in_required: usize = ms
        .required_attributes
        .iter()
        .map(|a| match result.attribute(a) {
            Some(v) => v.iter().filter(|x| x.is_nan()).count(),
            None => x.d_in as usize,
        })
        .sum();
    let inversions = match (primary, prev_primary) {
        (Some(p), Some(q)) => {
            rank_inversions(&normalised(p, ms.index_type), &normalised(q, ms.index_type), cfg.rank_tol)
        }
        _ => 0,
    };
    let unaddressed =
        result.warnings.iter().filter(|w| w.severity == Severity::Warning && !w.addressed).count();
    let mut details = 15.0;
    details -= cfg.nan_penalty * nan_in_required as f64;
    if result.negative_variance_flag {
        details -= cfg.negative_variance_penalty;
    }
    details -= cfg.inversion_penalty * inversions as f64;
    details -= cfg.warning_penalty * unaddressed as f64;
    note(
        Details,
        "penalties",
        details.max(0.0),
        format!(
            "nan={nan_in_required} negative_variance={} inversions={inversions} unaddressed_warnings={unaddressed}",
            result.negative_variance_flag
        ),
    );

    let optimality = if attrs_ok {
        let evals = result.evaluations_used;
        let budget_factor = if evals == 0 { 0.0 } else { (ms.n_min_value as f64 / evals as f64).min(1.0) };
        let baseline = runtime_baseline(ms.estimator, ms.n_min_value, ms.d_in);
        let runtime_factor =
            if result.runtime_seconds > 0.0 { (baseline / result.runtime_seconds).min(1.0) } else { 1.0 };
        let pts = 15.0 * (cfg.budget_share * budget_factor + cfg.runtime_share * runtime_factor);
        note(Optimality, "efficiency", pts, format!("budget={budget_factor:.4} runtime={runtime_factor:.4}"));
        pts
    } else {
        note(Optimality, "efficiency", 0.0, "attribute check failed".into());
        0.0
    };

    let mut b = RewardBreakdown::from_components(integrity, accuracy, details, optimality);
    b.notes = notes;
    Ok(b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmartingaleViolation {
    pub n: u32,
    pub previous: f64,
    pub current: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegisterState {
    history: Vec<IterationRecord>,
    submartingale_flags: Vec<u32>,
}

impl RegisterState {
    pub fn history(&self) -> &[IterationRecord] {
        &self.history
    }

    pub fn submartingale_flags(&self) -> &[u32] {
        &self.submartingale_flags
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.reward.total).collect()
    }

    /// Appends and returns the violation to hand to the next Strategist call.
    pub fn append(&mut self, rec: IterationRecord) -> Option<SubmartingaleViolation> {
        let current = rec.reward.total;
        let n = rec.n;
        let violation = self.history.last().map(|p| p.reward.total).filter(|prev| current < *prev).map(|previous| {
            SubmartingaleViolation { n, previous, current }
        });
        if violation.is_some() {
            self.submartingale_flags.push(n);
        }
        self.history.push(rec);
        violation
    }

    pub fn cumulative_regret(&self, r_star: f64) -> f64 {
        cumulative_regret(&self.rewards(), r_star)
    }
}

pub fn cumulative_regret(rewards: &[f64], r_star: f64) -> f64 {
    rewards.iter().map(|r| r_star - r).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_space::{ActionSpace, ActionTuple, Estimator, Task};
    use crate::estimators::{modeled_runtime, ExecWarning, ExecutionError, ExecutionStatus};
    use crate::schemes::{build_method_scheme, build_problem_scheme, ProblemDescription, ProblemScheme};
    use std::collections::BTreeMap;

    pub(crate) fn scheme(e: &str, n: u64) -> (ProblemScheme, MethodScheme) {
        let space = ActionSpace::default();
        let desc = ProblemDescription {
            model_id: "structural_eq3".into(),
            request: String::new(),
            d_in: 4,
            d_out: 1,
            n_budget: 20000,
            epsilon: 0.05,
            task: "SA".into(),
            distributions: vec!["Uniform".into(); 4],
            model_class: None,
            flags: Default::default(),
        };
        let ps = build_problem_scheme(&desc, &space).unwrap();
        let a = ActionTuple::new(Task::SA, &["MonteCarlo", e, "Fixed_N", "Scalar"]);
        let hp = BTreeMap::from([("n_samples".to_string(), n)]);
        let ms = build_method_scheme(&a, &ps, &hp, &space).unwrap();
        (ps, ms)
    }

    fn sobol_obs(s1: Vec<f64>, st: Vec<f64>, n: u64) -> Observation {
        let mut r = SAResult::empty(Estimator::Sobol);
        r.s1 = Some(s1);
        r.st = Some(st);
        r.evaluations_used = n * 6;
        r.runtime_seconds = modeled_runtime(Estimator::Sobol, n, 4);
        r.refresh_nan_count();
        Observation {
            status: Some(ExecutionStatus::Succeeded),
            intended: Estimator::Sobol,
            executed: Some(Estimator::Sobol),
            n_samples: n,
            result: Some(r),
            error: None,
            read_attributes: vec![FIRST_ORDER.into(), TOTAL_ORDER.into()],
        }
    }

    const REF: [f64; 4] = [0.4, 0.3, 0.2, 0.05];

    #[test]
    fn perfect_run_scores_100() {
        let (ps, ms) = scheme("Sobol", 500);
        let obs = sobol_obs(REF.to_vec(), vec![0.45, 0.3, 0.25, 0.05], 500);
        let b = compute_reward(&obs, &ms, &ps.context, Some(&REF), None).unwrap();
        assert_eq!((b.integrity, b.accuracy, b.details, b.optimality), (35.0, 35.0, 15.0, 15.0));
        assert_eq!(b.total, 100.0);
    }

    #[test]
    fn nan_and_negative_variance_leave_five() {
        let (ps, ms) = scheme("Sobol", 500);
        let mut obs = sobol_obs(vec![0.4, f64::NAN, 0.2, 0.05], REF.to_vec(), 500);
        obs.result.as_mut().unwrap().negative_variance_flag = true;
        let b = compute_reward(&obs, &ms, &ps.context, Some(&REF), None).unwrap();
        assert_eq!(b.details, 5.0);
    }

    #[test]
    fn inversion_and_warning_penalties() {
        let (ps, ms) = scheme("Sobol", 500);
        let prev = sobol_obs(vec![0.4, 0.3, 0.2, 0.05], REF.to_vec(), 500);
        let mut obs = sobol_obs(vec![0.3, 0.4, 0.2, 0.05], vec![0.4, 0.4, 0.2, 0.05], 500);
        obs.result.as_mut().unwrap().warnings.push(ExecWarning::new("w", Severity::Warning, ""));
        let b = compute_reward(&obs, &ms, &ps.context, Some(&REF), Some(&prev)).unwrap();
        assert_eq!(b.details, 15.0 - 3.0 - 2.0);
        obs.result.as_mut().unwrap().warnings[0].addressed = true;
        let b = compute_reward(&obs, &ms, &ps.context, Some(&REF), Some(&prev)).unwrap();
        assert_eq!(b.details, 12.0);
    }

    #[test]
    fn crash_scores_at_most_30() {
        let (ps, ms) = scheme("Sobol", 500);
        let obs = Observation {
            status: Some(ExecutionStatus::Failed),
            intended: Estimator::Sobol,
            executed: Some(Estimator::Sobol),
            n_samples: 500,
            result: None,
            error: Some(ExecutionError::UnknownAttribute { name: "indices".into() }),
            read_attributes: vec![],
        };
        let b = compute_reward(&obs, &ms, &ps.context, Some(&REF), None).unwrap();
        assert_eq!(b.integrity, 0.0);
        assert!(b.total <= 30.0);
    }

    #[test]
    fn wrong_estimator_output_scores_low() {
        let (ps, ms) = scheme("Sobol", 500);
        let mut r = SAResult::empty(Estimator::Morris);
        r.mu_star = Some(vec![1.0; 4]);
        r.sigma = Some(vec![0.1; 4]);
        r.evaluations_used = 2500;
        r.runtime_seconds = 0.01;
        let obs = Observation {
            status: Some(ExecutionStatus::Succeeded),
            intended: Estimator::Sobol,
            executed: Some(Estimator::Morris),
            n_samples: 500,
            result: Some(r),
            error: None,
            read_attributes: vec!["mu_star".into(), "sigma".into()],
        };
        let b = compute_reward(&obs, &ms, &ps.context, Some(&REF), None).unwrap();
        assert!(b.total <= 30.0, "{b:?}");
        assert_eq!(b.accuracy, 0.0);
    }

    #[test]
    fn missing_status_is_malformed() {
        let (ps, ms) = scheme("Sobol", 500);
        let mut obs = sobol_obs(REF.to_vec(), REF.to_vec(), 500);
        obs.status = None;
        assert!(matches!(
            compute_reward(&obs, &ms, &ps.context, None, None),
            Err(RewardError::MalformedObservation(_))
        ));
    }

    #[test]
    fn convergence_against_previous() {
        let (ps, ms) = scheme("Sobol", 500);
        let prev = sobol_obs(REF.to_vec(), REF.to_vec(), 500);
        let obs = sobol_obs(REF.to_vec(), REF.to_vec(), 500);
        let b = compute_reward(&obs, &ms, &ps.context, None, Some(&prev)).unwrap();
        assert_eq!(b.accuracy, 35.0);
        let b = compute_reward(&obs, &ms, &ps.context, None, None).unwrap();
        assert_eq!(b.accuracy, 15.0);
    }

    #[test]
    fn bottleneck_tie_break() {
        let b = RewardBreakdown::from_components(0.0, 0.0, 0.0, 0.0);
        assert_eq!(b.bottleneck(), RewardComponent::Integrity);
        let b = RewardBreakdown::from_components(35.0, 20.0, 15.0, 15.0);
        assert_eq!(b.bottleneck(), RewardComponent::Accuracy);
    }

    #[test]
    fn regret_sums() {
        assert_eq!(cumulative_regret(&[100.0, 100.0], 100.0), 0.0);
        assert_eq!(cumulative_regret(&[72.0], 80.0), 8.0);
    }

    fn index() -> impl proptest::strategy::Strategy<Value = f64> {
        use proptest::prelude::*;
        prop_oneof![8 => -0.5f64..1.5, 1 => Just(f64::NAN)]
    }

    proptest::proptest! {
        #[test]
        fn components_respect_caps(
            s1 in proptest::collection::vec(index(), 4),
            st in proptest::collection::vec(index(), 4),
            prev in proptest::option::of(proptest::collection::vec(-0.5f64..1.5, 4)),
            n in 10u64..5000,
            neg in proptest::bool::ANY,
            warnings in 0usize..4,
        ) {
            let (ps, ms) = scheme("Sobol", n);
            let mut obs = sobol_obs(s1, st, n);
            let r = obs.result.as_mut().unwrap();
            r.negative_variance_flag = neg;
            for i in 0..warnings {
                r.warnings.push(ExecWarning::new(&format!("w{i}"), Severity::Warning, ""));
            }
            let prev = prev.map(|p| sobol_obs(p.clone(), p, n));
            let b = compute_reward(&obs, &ms, &ps.context, Some(&REF), prev.as_ref()).unwrap();
            for c in RewardComponent::ORDER {
                proptest::prop_assert!((0.0..=c.cap()).contains(&b.component(c)));
            }
            proptest::prop_assert!((b.total - (b.integrity + b.accuracy + b.details + b.optimality)).abs() < 1e-12);
            proptest::prop_assert!(b.total <= 100.0);
        }
    }
}
