//! Combinatorial method space and the feasibility filter.
//!
//! Dimension catalogs come from [`ActionSpaceConfig`]; feasibility rules are a
//! table of predicates keyed by the dimension value they constrain.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schemes::ContextVector;

/// Position of the estimator inside an action tuple, for both tasks.
pub const ESTIMATOR_DIM: usize = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActionSpaceError {
    #[error("action task {action:?} does not match context task {context:?}")]
    TaskMismatch { action: Task, context: Task },
    #[error("action has {got} dimensions, {task:?} requires {expected}")]
    Shape { task: Task, expected: usize, got: usize },
    #[error("value {value:?} is not in the catalog of dimension {dim}")]
    UnknownValue { dim: usize, value: String },
    #[error("unknown estimator {0:?}")]
    UnknownEstimator(String),
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    SA,
    UQ,
}

impl FromStr for Task {
    type Err = ActionSpaceError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SA" => Ok(Task::SA),
            "UQ" => Ok(Task::UQ),
            _ => Err(ActionSpaceError::InvalidCatalog(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    Sobol,
    Chatterjee,
    CVM,
    Morris,
    #[serde(rename = "PCE_SA")]
    PceSa,
    #[serde(rename = "Generalized_Sobol")]
    GeneralizedSobol,
    #[serde(rename = "MCS_moments")]
    McsMoments,
    #[serde(rename = "PCE_moments")]
    PceMoments,
}

impl Estimator {
    pub const ALL: [Estimator; 8] = [
        Estimator::Sobol,
        Estimator::Chatterjee,
        Estimator::CVM,
        Estimator::Morris,
        Estimator::PceSa,
        Estimator::GeneralizedSobol,
        Estimator::McsMoments,
        Estimator::PceMoments,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Sobol => "Sobol",
            Estimator::Chatterjee => "Chatterjee",
            Estimator::CVM => "CVM",
            Estimator::Morris => "Morris",
            Estimator::PceSa => "PCE_SA",
            Estimator::GeneralizedSobol => "Generalized_Sobol",
            Estimator::McsMoments => "MCS_moments",
            Estimator::PceMoments => "PCE_moments",
        }
    }

    pub fn task(self) -> Task {
        match self {
            Estimator::McsMoments | Estimator::PceMoments => Task::UQ,
            _ => Task::SA,
        }
    }

    /// Bit position inside `ContextVector::feasibility_bits`.
    pub fn bit(self) -> u32 {
        Estimator::ALL.iter().position(|e| *e == self).unwrap() as u32
    }

    pub fn for_task(task: Task) -> Vec<Estimator> {
        Estimator::ALL.iter().copied().filter(|e| e.task() == task).collect()
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Estimator {
    type Err = ActionSpaceError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Estimator::ALL
            .iter()
            .copied()
            .find(|e| e.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ActionSpaceError::UnknownEstimator(s.to_string()))
    }
}

/// One point of the method space. `dims` holds catalog values in dimension order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionTuple {
    pub task: Task,
    pub dims: Vec<String>,
}

impl ActionTuple {
    pub fn new(task: Task, dims: &[&str]) -> Self {
        ActionTuple { task, dims: dims.iter().map(|s| s.to_string()).collect() }
    }

    pub fn estimator(&self) -> Result<Estimator, ActionSpaceError> {
        self.dims
            .get(ESTIMATOR_DIM)
            .ok_or(ActionSpaceError::Shape { task: self.task, expected: ESTIMATOR_DIM + 1, got: self.dims.len() })?
            .parse()
    }

    /// Copy with the estimator dimension replaced.
    pub fn with_estimator(&self, e: Estimator) -> ActionTuple {
        let mut out = self.clone();
        if out.dims.len() > ESTIMATOR_DIM {
            out.dims[ESTIMATOR_DIM] = e.as_str().to_string();
        }
        out
    }

    pub fn key(&self) -> String {
        format!("{:?}:{}", self.task, self.dims.join("|"))
    }

    pub fn dim(&self, i: usize) -> &str {
        self.dims.get(i).map(String::as_str).unwrap_or("")
    }
}

impl fmt::Display for ActionTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}({})", self.task, self.dims.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub values: Vec<String>,
}

impl Dimension {
    fn new(name: &str, values: &[&str]) -> Self {
        Dimension { name: name.into(), values: values.iter().map(|s| s.to_string()).collect() }
    }
}

/// Minimum-sample rule used by the PCE predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PceRule {
    PerInput,
    Combinatorial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionSpaceConfig {
    pub sa_dimensions: Vec<Dimension>,
    pub uq_dimensions: Vec<Dimension>,
    /// Names of the reserved slots D5..D7. Not part of the tuple.
    pub reserved_dimensions: Vec<String>,
    pub screening_dim_threshold: u32,
    pub samples_per_input: u64,
    pub pce_rule: PceRule,
}

impl Default for ActionSpaceConfig {
    fn default() -> Self {
        ActionSpaceConfig {
            sa_dimensions: vec![
                Dimension::new("sampling", &["MonteCarlo", "LatinHypercube"]),
                Dimension::new("estimator", &["Sobol", "Chatterjee", "CVM", "Morris", "PCE_SA", "Generalized_Sobol"]),
                Dimension::new("budget_allocation", &["Fixed_N", "Staged"]),
                Dimension::new("output_treatment", &["Scalar", "Aggregated"]),
            ],
            uq_dimensions: vec![
                Dimension::new(
                    "propagation",
                    &["MonteCarlo", "LatinHypercube", "ImportanceSampling", "MCMC", "PCE", "GaussianProcess"],
                ),
                Dimension::new("estimator", &["MCS_moments", "PCE_moments"]),
                Dimension::new("budget_allocation", &["Fixed_N", "Staged"]),
                Dimension::new("output_treatment", &["Scalar", "Aggregated"]),
                Dimension::new("reliability", &["None", "FORM", "SubsetSimulation"]),
                Dimension::new("confidence_interval", &["None", "Bootstrap"]),
            ],
            reserved_dimensions: vec![
                "confidence_intervals".into(),
                "screening_prefilter".into(),
                "surrogate".into(),
            ],
            screening_dim_threshold: 8,
            samples_per_input: 500,
            pce_rule: PceRule::PerInput,
        }
    }
}

impl ActionSpaceConfig {
    pub fn dimensions(&self, task: Task) -> &[Dimension] {
        match task {
            Task::SA => &self.sa_dimensions,
            Task::UQ => &self.uq_dimensions,
        }
    }

    /// Minimum samples for a pick-freeze design: 500 * (d_in + 2).
    pub fn pick_freeze_min(&self, d_in: u32) -> u64 {
        self.samples_per_input * (d_in as u64 + 2)
    }

    pub fn pce_min(&self, d_in: u32) -> u64 {
        match self.pce_rule {
            PceRule::PerInput => self.samples_per_input * d_in as u64,
            PceRule::Combinatorial => 2 * binomial(d_in as u64 + 3, 3),
        }
    }
}

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub predicate: String,
    pub reason: String,
    pub constraint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub action: ActionTuple,
    pub verdict: bool,
    pub violated: Vec<Violation>,
}

type Check = Arc<dyn Fn(&ContextVector, &ActionSpaceConfig) -> Option<Violation> + Send + Sync>;

/// A hard constraint attached to one value of one dimension.
#[derive(Clone)]
pub struct FeasibilityPredicate {
    pub id: String,
    pub task: Task,
    pub dim: usize,
    pub value: String,
    check: Check,
}

impl fmt::Debug for FeasibilityPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeasibilityPredicate")
            .field("id", &self.id)
            .field("task", &self.task)
            .field("dim", &self.dim)
            .field("value", &self.value)
            .finish()
    }
}

impl FeasibilityPredicate {
    pub fn new<F>(id: &str, task: Task, dim: usize, value: &str, check: F) -> Self
    where
        F: Fn(&ContextVector, &ActionSpaceConfig) -> Option<Violation> + Send + Sync + 'static,
    {
        FeasibilityPredicate { id: id.into(), task, dim, value: value.into(), check: Arc::new(check) }
    }

    pub fn applies(&self, a: &ActionTuple) -> bool {
        a.task == self.task && a.dims.get(self.dim).map(|v| v == &self.value).unwrap_or(false)
    }

    pub fn evaluate(&self, x: &ContextVector, cfg: &ActionSpaceConfig) -> Option<Violation> {
        (self.check)(x, cfg)
    }
}

fn budget_rule(id: &'static str, rule: &'static str, need: fn(&ContextVector, &ActionSpaceConfig) -> u64) -> Check {
    Arc::new(move |x, cfg| {
        let need = need(x, cfg);
        if x.n_budget >= need {
            None
        } else {
            Some(Violation {
                predicate: id.into(),
                reason: format!("budget below the minimum sample size ({rule})"),
                constraint: format!("N={} < {}={}", x.n_budget, rule.replace("d_in", &x.d_in.to_string()), need),
            })
        }
    })
}

fn default_predicates() -> Vec<FeasibilityPredicate> {
    let mut out = Vec::new();
    out.push(FeasibilityPredicate::new("morris_screening_high_dim", Task::SA, ESTIMATOR_DIM, "Morris", |x, cfg| {
        if x.d_in >= cfg.screening_dim_threshold {
            None
        } else {
            Some(Violation {
                predicate: "morris_screening_high_dim".into(),
                reason: "screening interpretation unreliable for low d_in".into(),
                constraint: format!("d_in={} < {}", x.d_in, cfg.screening_dim_threshold),
            })
        }
    }));
    out.push(FeasibilityPredicate::new("gen_sobol_multioutput", Task::SA, ESTIMATOR_DIM, "Generalized_Sobol", |x, _| {
        if x.d_out > 1 {
            None
        } else {
            Some(Violation {
                predicate: "gen_sobol_multioutput".into(),
                reason: "requires vector-valued output".into(),
                constraint: format!("d_out={} <= 1", x.d_out),
            })
        }
    }));
    for (id, task, dim, value) in [
        ("pce_budget", Task::SA, ESTIMATOR_DIM, "PCE_SA"),
        ("pce_propagation_budget", Task::UQ, 0, "PCE"),
        ("pce_moments_budget", Task::UQ, ESTIMATOR_DIM, "PCE_moments"),
    ] {
        let c = budget_rule(id, "500*d_in", |x, cfg| cfg.pce_min(x.d_in));
        out.push(FeasibilityPredicate { id: id.into(), task, dim, value: value.into(), check: c });
    }
    for (id, value) in [("sobol_budget", "Sobol"), ("cvm_budget", "CVM")] {
        let c = budget_rule(id, "500*(d_in+2)", |x, cfg| cfg.pick_freeze_min(x.d_in));
        out.push(FeasibilityPredicate { id: id.into(), task: Task::SA, dim: ESTIMATOR_DIM, value: value.into(), check: c });
    }
    out
}

/// Catalogs plus the predicate table.
#[derive(Debug, Clone)]
pub struct ActionSpace {
    config: ActionSpaceConfig,
    predicates: Vec<FeasibilityPredicate>,
}

impl Default for ActionSpace {
    fn default() -> Self {
        ActionSpace::new(ActionSpaceConfig::default()).expect("default catalog is valid")
    }
}

impl ActionSpace {
    pub fn new(config: ActionSpaceConfig) -> Result<Self, ActionSpaceError> {
        for (task, len) in [(Task::SA, 4usize), (Task::UQ, 6usize)] {
            let dims = config.dimensions(task);
            if dims.len() != len {
                return Err(ActionSpaceError::InvalidCatalog(format!(
                    "{task:?} needs {len} dimensions, got {}",
                    dims.len()
                )));
            }
            for (i, d) in dims.iter().enumerate() {
                if d.values.is_empty() {
                    return Err(ActionSpaceError::InvalidCatalog(format!("dimension {i} of {task:?} is empty")));
                }
                let unique: BTreeSet<_> = d.values.iter().collect();
                if unique.len() != d.values.len() {
                    return Err(ActionSpaceError::InvalidCatalog(format!("dimension {i} of {task:?} repeats a value")));
                }
            }
            for v in &dims[ESTIMATOR_DIM].values {
                let e: Estimator = v.parse()?;
                if e.task() != task {
                    return Err(ActionSpaceError::InvalidCatalog(format!("{e} is not a {task:?} estimator")));
                }
            }
        }
        Ok(ActionSpace { config, predicates: default_predicates() })
    }

    pub fn config(&self) -> &ActionSpaceConfig {
        &self.config
    }

    pub fn predicates(&self) -> &[FeasibilityPredicate] {
        &self.predicates
    }

    pub fn register(&mut self, p: FeasibilityPredicate) {
        self.predicates.push(p);
    }

    pub fn dimensions(&self, task: Task) -> &[Dimension] {
        self.config.dimensions(task)
    }

    /// Full Cartesian product, odometer order over catalog positions.
    pub fn enumerate_actions(&self, task: Task) -> Vec<ActionTuple> {
        let dims = self.dimensions(task);
        let total: usize = dims.iter().map(|d| d.values.len()).product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..total {
            out.push(ActionTuple {
                task,
                dims: idx.iter().zip(dims).map(|(i, d)| d.values[*i].clone()).collect(),
            });
            for k in (0..dims.len()).rev() {
                idx[k] += 1;
                if idx[k] < dims[k].values.len() {
                    break;
                }
                idx[k] = 0;
            }
        }
        out
    }

    pub fn check_shape(&self, a: &ActionTuple) -> Result<(), ActionSpaceError> {
        let dims = self.dimensions(a.task);
        if a.dims.len() != dims.len() {
            return Err(ActionSpaceError::Shape { task: a.task, expected: dims.len(), got: a.dims.len() });
        }
        for (i, (v, d)) in a.dims.iter().zip(dims).enumerate() {
            if !d.values.contains(v) {
                return Err(ActionSpaceError::UnknownValue { dim: i, value: v.clone() });
            }
        }
        Ok(())
    }

    pub fn validate_action(&self, a: &ActionTuple, x: &ContextVector) -> Result<FeasibilityReport, ActionSpaceError> {
        if a.task != x.task {
            return Err(ActionSpaceError::TaskMismatch { action: a.task, context: x.task });
        }
        self.check_shape(a)?;
        let violated: Vec<Violation> = self
            .predicates
            .iter()
            .filter(|p| p.applies(a))
            .filter_map(|p| p.evaluate(x, &self.config))
            .collect();
        Ok(FeasibilityReport { action: a.clone(), verdict: violated.is_empty(), violated })
    }

    pub fn filter_feasible(&self, x: &ContextVector) -> Vec<ActionTuple> {
        self.enumerate_actions(x.task)
            .into_iter()
            .filter(|a| self.validate_action(a, x).map(|r| r.verdict).unwrap_or(false))
            .collect()
    }

    /// Estimator-level check ignoring the context task, used for the
    /// per-estimator flags of a problem scheme.
    pub fn estimator_violations(&self, e: Estimator, x: &ContextVector) -> Vec<Violation> {
        self.predicates
            .iter()
            .filter(|p| p.task == e.task() && p.dim == ESTIMATOR_DIM && p.value == e.as_str())
            .filter_map(|p| p.evaluate(x, &self.config))
            .collect()
    }

    /// Bitset of estimators that appear in `filter_feasible(x)`.
    pub fn feasibility_bits(&self, x: &ContextVector) -> u32 {
        self.filter_feasible(x)
            .iter()
            .filter_map(|a| a.estimator().ok())
            .fold(0u32, |acc, e| acc | (1 << e.bit()))
    }

    pub fn estimators_in_catalog(&self, task: Task) -> Vec<Estimator> {
        self.dimensions(task)[ESTIMATOR_DIM].values.iter().filter_map(|v| v.parse().ok()).collect()
    }
}
