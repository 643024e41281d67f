use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::agents::ExecutionPlan;
use crate::estimators::{execute_plan, ExecutionError, ModelCatalog, Observation, SAResult};
use crate::reward::{compute_reward_with, RewardBreakdown, RewardConfig, RewardError};
use crate::schemes::{cost_factor, estimator_info, ContextVector, MethodScheme};

/// Everything an environment needs to score one observation.
pub struct EvalRequest<'a> {
    pub observation: &'a Observation,
    /// The policy's scheme, not the executed one.
    pub method_scheme: &'a MethodScheme,
    pub context: &'a ContextVector,
    pub previous: Option<&'a Observation>,
    pub model_id: &'a str,
    pub n: u32,
    pub seed: u64,
}

/// Execution backend plus reward oracle.
pub trait Environment: Send + Sync {
    fn id(&self) -> String;
    fn execute(&self, plan: &ExecutionPlan) -> Result<SAResult, ExecutionError>;
    fn evaluate(&self, req: &EvalRequest<'_>) -> Result<RewardBreakdown, RewardError>;
    /// Analytic first-order indices when known.
    fn reference(&self, model_id: &str) -> Option<Vec<f64>>;
    /// The model catalog the Model Translator resolves against, if any.
    fn catalog(&self) -> Option<&ModelCatalog> {
        None
    }
}

/// Real estimators on the benchmark catalog, scored by the rubric.
#[derive(Debug, Clone)]
pub struct NumericEnvironment {
    pub catalog: ModelCatalog,
    pub reward: RewardConfig,
}

impl NumericEnvironment {
    pub fn new(catalog: ModelCatalog) -> Self {
        NumericEnvironment { catalog, reward: RewardConfig::default() }
    }
}

impl Environment for NumericEnvironment {
    fn id(&self) -> String {
        "numeric".into()
    }

    fn execute(&self, plan: &ExecutionPlan) -> Result<SAResult, ExecutionError> {
        execute_plan(plan, &self.catalog)
    }

    fn evaluate(&self, req: &EvalRequest<'_>) -> Result<RewardBreakdown, RewardError> {
        let reference = self.reference(req.model_id);
        compute_reward_with(&self.reward, req.observation, req.method_scheme, req.context, reference.as_deref(), req.previous)
    }

    fn reference(&self, model_id: &str) -> Option<Vec<f64>> {
        self.catalog.get(model_id).ok().and_then(|m| m.analytic_s1.clone())
    }

    fn catalog(&self) -> Option<&ModelCatalog> {
        Some(&self.catalog)
    }
}

/// Stationary reward table keyed by the executed estimator. Keys are
/// `Estimator/budget_allocation` or `Estimator`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatedEnvironment {
    pub rewards: BTreeMap<String, f64>,
    pub default_reward: f64,
    pub noise_sd: f64,
    /// Reward for iteration n is `sequence[n - 1]` (last entry repeats).
    pub sequence: Option<Vec<f64>>,
    pub d_in: u32,
}

impl Default for SimulatedEnvironment {
    fn default() -> Self {
        SimulatedEnvironment { rewards: BTreeMap::new(), default_reward: 50.0, noise_sd: 0.0, sequence: None, d_in: 4 }
    }
}

impl SimulatedEnvironment {
    pub fn constant(total: f64) -> Self {
        SimulatedEnvironment { default_reward: total, ..Default::default() }
    }

    pub fn mean_for(&self, estimator: &str, budget: &str) -> f64 {
        self.rewards
            .get(&format!("{estimator}/{budget}"))
            .or_else(|| self.rewards.get(estimator))
            .copied()
            .unwrap_or(self.default_reward)
    }
}

impl Environment for SimulatedEnvironment {
    fn id(&self) -> String {
        "simulated".into()
    }

    fn execute(&self, plan: &ExecutionPlan) -> Result<SAResult, ExecutionError> {
        let info = estimator_info(plan.estimator);
        let mut r = SAResult::empty(plan.estimator);
        let d = self.d_in.max(1) as usize;
        for a in info.produces {
            r.set_attribute(a, (0..d).map(|i| 1.0 / (i + 2) as f64).collect());
        }
        for name in &plan.output_bindings {
            if r.attribute(name).is_none() {
                return Err(ExecutionError::UnknownAttribute { name: name.clone() });
            }
        }
        r.evaluations_used = plan.n_samples() * cost_factor(plan.estimator, self.d_in);
        Ok(r)
    }

    fn evaluate(&self, req: &EvalRequest<'_>) -> Result<RewardBreakdown, RewardError> {
        let obs = req.observation;
        if obs.status.is_none() {
            return Err(RewardError::MalformedObservation("missing execution status".into()));
        }
        if !obs.succeeded() {
            return Ok(RewardBreakdown::zero("execution failed"));
        }
        let executed = obs.executed.unwrap_or(obs.intended);
        let mean = match &self.sequence {
            Some(seq) if !seq.is_empty() => seq[(req.n.max(1) as usize - 1).min(seq.len() - 1)],
            _ => self.mean_for(executed.as_str(), req.method_scheme.action.dim(2)),
        };
        let total = if self.noise_sd > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
            mean + Normal::new(0.0, self.noise_sd).expect("finite sd").sample(&mut rng)
        } else {
            mean
        };
        Ok(RewardBreakdown::proportional(total.clamp(0.0, 100.0)))
    }

    fn reference(&self, _model_id: &str) -> Option<Vec<f64>> {
        None
    }
}
