//! Context vector and the three structured schemes exchanged between agents.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_space::{ActionSpace, ActionSpaceConfig, ActionSpaceError, ActionTuple, Estimator, Task};
use crate::estimators::{ExecutionStatus, Observation};
use crate::reward::{RewardBreakdown, RewardComponent};

pub const DEFAULT_R_THRESHOLD: f64 = 85.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemeError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("unknown estimator: {0}")]
    UnknownEstimator(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Action(#[from] ActionSpaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DistFamily {
    Uniform,
    Normal,
    Other,
}

impl DistFamily {
    pub fn parse(name: &str) -> DistFamily {
        match name.trim().to_ascii_lowercase().as_str() {
            "uniform" | "u" => DistFamily::Uniform,
            "normal" | "gaussian" | "n" => DistFamily::Normal,
            _ => DistFamily::Other,
        }
    }

    pub const ALL: [DistFamily; 3] = [DistFamily::Uniform, DistFamily::Normal, DistFamily::Other];
}

/// Most frequent family; ties go to the earliest in `DistFamily::ALL`.
pub fn dist_mode(families: &[DistFamily]) -> DistFamily {
    let mut best = DistFamily::Other;
    let mut best_count = 0;
    for f in DistFamily::ALL {
        let c = families.iter().filter(|x| **x == f).count();
        if c > best_count {
            best = f;
            best_count = c;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextVector {
    pub d_in: u32,
    pub d_out: u32,
    pub n_budget: u64,
    pub epsilon: f64,
    pub task: Task,
    pub dist_family: Vec<DistFamily>,
    pub dist_mode: DistFamily,
    pub multi_output_flag: bool,
    pub feasibility_bits: u32,
}

impl ContextVector {
    pub fn new(
        space: &ActionSpace,
        d_in: u32,
        d_out: u32,
        n_budget: u64,
        epsilon: f64,
        task: Task,
        dist_family: Vec<DistFamily>,
    ) -> ContextVector {
        let mut x = ContextVector {
            d_in,
            d_out,
            n_budget,
            epsilon,
            task,
            dist_mode: dist_mode(&dist_family),
            dist_family,
            multi_output_flag: d_out > 1,
            feasibility_bits: 0,
        };
        x.feasibility_bits = space.feasibility_bits(&x);
        x
    }

    /// True when derived fields agree with what `new` would compute.
    pub fn is_consistent(&self, space: &ActionSpace) -> bool {
        self.multi_output_flag == (self.d_out > 1)
            && self.dist_mode == dist_mode(&self.dist_family)
            && self.feasibility_bits == space.feasibility_bits(self)
    }

    pub fn estimator_feasible(&self, e: Estimator) -> bool {
        self.feasibility_bits & (1 << e.bit()) != 0
    }

    pub fn with_budget(&self, space: &ActionSpace, n_budget: u64) -> ContextVector {
        ContextVector::new(space, self.d_in, self.d_out, n_budget, self.epsilon, self.task, self.dist_family.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputClass {
    Scalar,
    Vector,
    Field,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelClass {
    Additive,
    Multiplicative,
    Mixed,
    Unknown,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StructuralFlags {
    pub has_dependence: bool,
    pub limit_state_defined: bool,
    pub low_fidelity_model: bool,
    pub target_pdf_known: bool,
    pub field_out: bool,
}

/// What the user hands the Coordinator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDescription {
    pub model_id: String,
    #[serde(default)]
    pub request: String,
    pub d_in: u32,
    pub d_out: u32,
    pub n_budget: u64,
    pub epsilon: f64,
    pub task: String,
    pub distributions: Vec<String>,
    #[serde(default)]
    pub model_class: Option<ModelClass>,
    #[serde(default)]
    pub flags: StructuralFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorFlag {
    pub estimator: Estimator,
    pub feasible: bool,
    pub constraint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemScheme {
    pub model_id: String,
    pub context: ContextVector,
    pub output_class: OutputClass,
    pub model_class: ModelClass,
    pub has_dependence: bool,
    pub limit_state_defined: bool,
    pub low_fidelity_model: bool,
    pub target_pdf_known: bool,
    pub high_d_in_flag: bool,
    pub field_out_flag: bool,
    pub feasible_sa_estimators: Vec<Estimator>,
    pub feasible_uq_estimators: Vec<Estimator>,
    pub estimator_flags: Vec<EstimatorFlag>,
}

fn constraint_text(e: Estimator, x: &ContextVector, cfg: &ActionSpaceConfig) -> String {
    let cmp = |lhs: u64, rhs: u64| if lhs >= rhs { ">=" } else { "<" };
    match e {
        Estimator::Sobol | Estimator::CVM => {
            let need = cfg.pick_freeze_min(x.d_in);
            format!("N={} {} 500*({}+2)={}", x.n_budget, cmp(x.n_budget, need), x.d_in, need)
        }
        Estimator::PceSa | Estimator::PceMoments => {
            let need = cfg.pce_min(x.d_in);
            format!("N={} {} {}", x.n_budget, cmp(x.n_budget, need), need)
        }
        Estimator::Morris => format!(
            "d_in={} {} {} (screening threshold)",
            x.d_in,
            cmp(x.d_in as u64, cfg.screening_dim_threshold as u64),
            cfg.screening_dim_threshold
        ),
        Estimator::GeneralizedSobol => format!("d_out={} {} 1", x.d_out, if x.d_out > 1 { ">" } else { "<=" }),
        Estimator::Chatterjee | Estimator::McsMoments => "no predicate".into(),
    }
}

pub fn build_problem_scheme(desc: &ProblemDescription, space: &ActionSpace) -> Result<ProblemScheme, SchemeError> {
    if desc.d_in == 0 {
        return Err(SchemeError::InvalidProblem("d_in must be positive".into()));
    }
    if desc.d_out == 0 {
        return Err(SchemeError::InvalidProblem("d_out must be positive".into()));
    }
    if !(desc.epsilon.is_finite() && desc.epsilon > 0.0) {
        return Err(SchemeError::InvalidProblem("epsilon must be positive".into()));
    }
    if desc.distributions.len() != desc.d_in as usize {
        return Err(SchemeError::InvalidProblem(format!(
            "{} distributions for d_in={}",
            desc.distributions.len(),
            desc.d_in
        )));
    }
    let task: Task = desc.task.parse().map_err(|_| SchemeError::InvalidProblem(format!("unknown task {:?}", desc.task)))?;
    let families: Vec<DistFamily> = desc.distributions.iter().map(|d| DistFamily::parse(d)).collect();
    let x = ContextVector::new(space, desc.d_in, desc.d_out, desc.n_budget, desc.epsilon, task, families);
    let cfg = space.config();

    let mut flags = Vec::new();
    let mut sa = Vec::new();
    let mut uq = Vec::new();
    for t in [Task::SA, Task::UQ] {
        for e in space.estimators_in_catalog(t) {
            let feasible = space.estimator_violations(e, &x).is_empty();
            if feasible {
                match t {
                    Task::SA => sa.push(e),
                    Task::UQ => uq.push(e),
                }
            }
            flags.push(EstimatorFlag { estimator: e, feasible, constraint: constraint_text(e, &x, cfg) });
        }
    }
    let output_class = if desc.flags.field_out {
        OutputClass::Field
    } else if desc.d_out > 1 {
        OutputClass::Vector
    } else {
        OutputClass::Scalar
    };
    Ok(ProblemScheme {
        model_id: desc.model_id.clone(),
        high_d_in_flag: x.d_in >= cfg.screening_dim_threshold,
        context: x,
        output_class,
        model_class: desc.model_class.unwrap_or(ModelClass::Unknown),
        has_dependence: desc.flags.has_dependence,
        limit_state_defined: desc.flags.limit_state_defined,
        low_fidelity_model: desc.flags.low_fidelity_model,
        target_pdf_known: desc.flags.target_pdf_known,
        field_out_flag: desc.flags.field_out,
        feasible_sa_estimators: sa,
        feasible_uq_estimators: uq,
        estimator_flags: flags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexType {
    VarianceBased,
    RankBased,
    Screening,
    Moments,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    PickFreeze,
    GivenData,
    WindingStairs,
    Regression,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetStatus {
    Sufficient,
    Tight,
    Infeasible,
}

/// Closed-form minimum-sample rules, in model evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NMinFormula {
    PickFreeze,
    PerInput,
    PceCombinatorial,
    Trajectories,
    RankMinimum,
    MomentMinimum,
}

impl NMinFormula {
    pub fn expr(self) -> &'static str {
        match self {
            NMinFormula::PickFreeze => "500 * (d_in + 2)",
            NMinFormula::PerInput => "500 * d_in",
            NMinFormula::PceCombinatorial => "2 * C(d_in + 3, 3)",
            NMinFormula::Trajectories => "20 * (d_in + 1)",
            NMinFormula::RankMinimum => "1000",
            NMinFormula::MomentMinimum => "1000",
        }
    }

    pub fn eval(self, d_in: u32, cfg: &ActionSpaceConfig) -> u64 {
        let d = d_in as u64;
        match self {
            NMinFormula::PickFreeze => cfg.pick_freeze_min(d_in),
            NMinFormula::PerInput => cfg.samples_per_input * d,
            NMinFormula::PceCombinatorial => 2 * crate::action_space::binomial(d + 3, 3),
            NMinFormula::Trajectories => 20 * (d + 1),
            NMinFormula::RankMinimum | NMinFormula::MomentMinimum => 1000,
        }
    }
}

/// Static description of one estimator: what it produces and how it is costed.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorInfo {
    pub estimator: Estimator,
    pub index_type: IndexType,
    pub sampling_scheme: SamplingScheme,
    pub produces: &'static [&'static str],
    pub required: &'static [&'static str],
    pub forbidden: &'static [&'static str],
    pub library_class: &'static str,
    pub valid_when: &'static [&'static str],
    pub invalid_when: &'static [&'static str],
}

pub const FIRST_ORDER: &str = "first_order_indices";
pub const TOTAL_ORDER: &str = "total_order_indices";

pub fn estimator_info(e: Estimator) -> EstimatorInfo {
    match e {
        Estimator::Sobol => EstimatorInfo {
            estimator: e,
            index_type: IndexType::VarianceBased,
            sampling_scheme: SamplingScheme::PickFreeze,
            produces: &[FIRST_ORDER, TOTAL_ORDER],
            required: &[FIRST_ORDER, TOTAL_ORDER],
            forbidden: &[],
            library_class: "UQpy.sensitivity.SobolSensitivity",
            valid_when: &["inputs statistically independent", "d_out == 1", "N >= 500 * (d_in + 2)"],
            invalid_when: &["correlated inputs (sum(ST) > 1 diagnostic)", "d_in > 30 without prior screening"],
        },
        Estimator::Chatterjee => EstimatorInfo {
            estimator: e,
            index_type: IndexType::RankBased,
            sampling_scheme: SamplingScheme::GivenData,
            produces: &["chatterjee_indices"],
            required: &["chatterjee_indices"],
            forbidden: &[FIRST_ORDER, TOTAL_ORDER],
            library_class: "UQpy.sensitivity.ChatterjeeSensitivity",
            valid_when: &["any output distribution", "heavy tails or missing moments"],
            invalid_when: &["variance decomposition required"],
        },
        Estimator::CVM => EstimatorInfo {
            estimator: e,
            index_type: IndexType::RankBased,
            sampling_scheme: SamplingScheme::GivenData,
            produces: &["cvm_indices"],
            required: &["cvm_indices"],
            forbidden: &[FIRST_ORDER, TOTAL_ORDER],
            library_class: "UQpy.sensitivity.CramerVonMisesSensitivity",
            valid_when: &["distribution-level sensitivity", "N >= 500 * (d_in + 2)"],
            invalid_when: &["variance decomposition required"],
        },
        Estimator::Morris => EstimatorInfo {
            estimator: e,
            index_type: IndexType::Screening,
            sampling_scheme: SamplingScheme::WindingStairs,
            produces: &["mu_star", "sigma"],
            required: &["mu_star", "sigma"],
            forbidden: &[FIRST_ORDER, TOTAL_ORDER],
            library_class: "UQpy.sensitivity.MorrisSensitivity",
            valid_when: &["d_in >= screening threshold", "ranking of inputs is sufficient"],
            invalid_when: &["quantitative variance shares required"],
        },
        Estimator::PceSa => EstimatorInfo {
            estimator: e,
            index_type: IndexType::VarianceBased,
            sampling_scheme: SamplingScheme::Regression,
            produces: &[FIRST_ORDER, TOTAL_ORDER],
            required: &[FIRST_ORDER, TOTAL_ORDER],
            forbidden: &[],
            library_class: "UQpy.sensitivity.PceSensitivity",
            valid_when: &["smooth model response", "N >= 500 * d_in"],
            invalid_when: &["discontinuous response"],
        },
        Estimator::GeneralizedSobol => EstimatorInfo {
            estimator: e,
            index_type: IndexType::VarianceBased,
            sampling_scheme: SamplingScheme::PickFreeze,
            produces: &["generalized_first_order_indices", "generalized_total_order_indices"],
            required: &["generalized_first_order_indices", "generalized_total_order_indices"],
            forbidden: &[FIRST_ORDER],
            library_class: "UQpy.sensitivity.GeneralisedSobolSensitivity",
            valid_when: &["d_out > 1"],
            invalid_when: &["scalar output"],
        },
        Estimator::McsMoments => EstimatorInfo {
            estimator: e,
            index_type: IndexType::Moments,
            sampling_scheme: SamplingScheme::Direct,
            produces: &["mean", "variance"],
            required: &["mean", "variance"],
            forbidden: &[],
            library_class: "UQpy.sampling.MonteCarloSampling",
            valid_when: &["any model"],
            invalid_when: &[],
        },
        Estimator::PceMoments => EstimatorInfo {
            estimator: e,
            index_type: IndexType::Moments,
            sampling_scheme: SamplingScheme::Regression,
            produces: &["mean", "variance"],
            required: &["mean", "variance"],
            forbidden: &[],
            library_class: "UQpy.surrogates.PolynomialChaosExpansion",
            valid_when: &["smooth model response", "N >= 500 * d_in"],
            invalid_when: &["discontinuous response"],
        },
    }
}

pub fn n_min_formula(e: Estimator, cfg: &ActionSpaceConfig) -> NMinFormula {
    match e {
        Estimator::Sobol | Estimator::CVM | Estimator::GeneralizedSobol => NMinFormula::PickFreeze,
        Estimator::PceSa | Estimator::PceMoments => match cfg.pce_rule {
            crate::action_space::PceRule::PerInput => NMinFormula::PerInput,
            crate::action_space::PceRule::Combinatorial => NMinFormula::PceCombinatorial,
        },
        Estimator::Morris => NMinFormula::Trajectories,
        Estimator::Chatterjee => NMinFormula::RankMinimum,
        Estimator::McsMoments => NMinFormula::MomentMinimum,
    }
}

/// Model evaluations per unit of `n_samples`.
pub fn cost_factor(e: Estimator, d_in: u32) -> u64 {
    match e {
        Estimator::Sobol | Estimator::GeneralizedSobol => d_in as u64 + 2,
        Estimator::Morris => d_in as u64 + 1,
        _ => 1,
    }
}

pub fn budget_status(n_min: u64, n_budget: u64) -> BudgetStatus {
    if n_min > n_budget {
        BudgetStatus::Infeasible
    } else if n_budget < 2 * n_min {
        BudgetStatus::Tight
    } else {
        BudgetStatus::Sufficient
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScheme {
    pub action: ActionTuple,
    pub task: Task,
    pub estimator: Estimator,
    pub d_in: u32,
    pub index_type: IndexType,
    pub produces: Vec<String>,
    pub sampling_scheme: SamplingScheme,
    pub n_min_formula: String,
    pub n_min_value: u64,
    pub n_cost_actual: u64,
    pub budget_status: BudgetStatus,
    pub library_class: String,
    pub output_strategy: String,
    pub expected_output_shape: String,
    pub required_attributes: Vec<String>,
    pub forbidden_attributes: Vec<String>,
    pub hyperparams: BTreeMap<String, u64>,
    pub valid_when: Vec<String>,
    pub invalid_when: Vec<String>,
}

impl MethodScheme {
    pub fn n_samples(&self) -> u64 {
        self.hyperparams.get("n_samples").copied().unwrap_or(0)
    }
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub fn build_method_scheme(
    action: &ActionTuple,
    ps: &ProblemScheme,
    hyperparams: &BTreeMap<String, u64>,
    space: &ActionSpace,
) -> Result<MethodScheme, SchemeError> {
    let estimator = action.estimator().map_err(|e| match e {
        ActionSpaceError::UnknownEstimator(s) => SchemeError::UnknownEstimator(s),
        other => SchemeError::Action(other),
    })?;
    let info = estimator_info(estimator);
    let x = &ps.context;
    let formula = n_min_formula(estimator, space.config());
    let n_min_value = formula.eval(x.d_in, space.config());
    let n_samples = hyperparams.get("n_samples").copied().unwrap_or(0);
    Ok(MethodScheme {
        action: action.clone(),
        task: action.task,
        estimator,
        d_in: x.d_in,
        index_type: info.index_type,
        produces: strings(info.produces),
        sampling_scheme: info.sampling_scheme,
        n_min_formula: formula.expr().to_string(),
        n_min_value,
        n_cost_actual: n_samples * cost_factor(estimator, x.d_in),
        budget_status: budget_status(n_min_value, x.n_budget),
        library_class: info.library_class.to_string(),
        output_strategy: action.dim(3).to_ascii_lowercase(),
        expected_output_shape: format!("({},)", x.d_in),
        required_attributes: strings(info.required),
        forbidden_attributes: strings(info.forbidden),
        hyperparams: hyperparams.clone(),
        valid_when: strings(info.valid_when),
        invalid_when: strings(info.invalid_when),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceStatus {
    Converged,
    Partial,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RootCause {
    #[serde(rename = "insufficient_N")]
    InsufficientN,
    #[serde(rename = "wrong_estimator")]
    WrongEstimator,
    #[serde(rename = "attribute_error")]
    AttributeError,
    #[serde(rename = "numerical_degeneracy")]
    NumericalDegeneracy,
    #[serde(rename = "none")]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticScheme {
    pub convergence_status: ConvergenceStatus,
    pub bottleneck_dim: RewardComponent,
    pub reward: f64,
    pub root_cause: RootCause,
    /// Estimator the diagnosis is about (the one the policy selected).
    pub subject_estimator: Option<Estimator>,
    pub prescribed_estimator: Option<Estimator>,
    #[serde(rename = "prescribed_N_factor")]
    pub prescribed_n_factor: Option<f64>,
    pub prescribed_hyperparam: Option<BTreeMap<String, u64>>,
    pub penalize_action: bool,
    pub block_action: bool,
    pub physical_insight: String,
}

impl DiagnosticScheme {
    /// Scheme for an iteration that never reached execution.
    pub fn failed_iteration(subject: Option<Estimator>, note: &str) -> DiagnosticScheme {
        DiagnosticScheme {
            convergence_status: ConvergenceStatus::Failed,
            bottleneck_dim: RewardComponent::Integrity,
            reward: 0.0,
            root_cause: RootCause::None,
            subject_estimator: subject,
            prescribed_estimator: None,
            prescribed_n_factor: None,
            prescribed_hyperparam: None,
            penalize_action: true,
            block_action: false,
            physical_insight: note.to_string(),
        }
    }
}

/// Ordered keyword rules. A pattern is a token sequence; a trailing `*`
/// makes the token a prefix match.
pub const ROOT_CAUSE_RULES: &[(RootCause, &[&str])] = &[
    (RootCause::WrongEstimator, &["instead of", "wrong estimator", "critical failure", "estimator mismatch"]),
    (RootCause::AttributeError, &["attribute*"]),
    (RootCause::InsufficientN, &["insufficient*", "not converged", "undersampled"]),
    (RootCause::NumericalDegeneracy, &["nan", "degenerate*", "negative variance", "zero variance"]),
];

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn pattern_matches(tokens: &[String], pattern: &str) -> bool {
    let parts: Vec<&str> = pattern.split_whitespace().collect();
    if parts.is_empty() || tokens.len() < parts.len() {
        return false;
    }
    tokens.windows(parts.len()).any(|w| {
        w.iter().zip(&parts).all(|(tok, p)| match p.strip_suffix('*') {
            Some(stem) => tok.starts_with(stem),
            None => tok == p,
        })
    })
}

pub fn classify_root_cause(report: &str) -> RootCause {
    let tokens = tokenize(report);
    for (cause, patterns) in ROOT_CAUSE_RULES {
        if patterns.iter().any(|p| pattern_matches(&tokens, p)) {
            return *cause;
        }
    }
    RootCause::None
}

pub fn build_diagnostic_scheme(report: &str, obs: &Observation, breakdown: &RewardBreakdown) -> DiagnosticScheme {
    build_diagnostic_scheme_with(report, obs, breakdown, DEFAULT_R_THRESHOLD)
}

pub fn build_diagnostic_scheme_with(
    report: &str,
    obs: &Observation,
    breakdown: &RewardBreakdown,
    r_threshold: f64,
) -> DiagnosticScheme {
    let root_cause = classify_root_cause(report);
    let executed = obs.status == Some(ExecutionStatus::Succeeded);
    let convergence_status = if breakdown.total >= r_threshold {
        ConvergenceStatus::Converged
    } else if executed && breakdown.total > 0.0 {
        ConvergenceStatus::Partial
    } else {
        ConvergenceStatus::Failed
    };
    let mut scheme = DiagnosticScheme {
        convergence_status,
        bottleneck_dim: breakdown.bottleneck(),
        reward: breakdown.total,
        root_cause,
        subject_estimator: Some(obs.intended),
        prescribed_estimator: None,
        prescribed_n_factor: None,
        prescribed_hyperparam: None,
        penalize_action: false,
        block_action: false,
        physical_insight: report.trim().to_string(),
    };
    match root_cause {
        RootCause::InsufficientN => {
            scheme.prescribed_estimator = Some(obs.intended);
            scheme.prescribed_n_factor = Some(2.0);
            if obs.n_samples > 0 {
                scheme.prescribed_hyperparam = Some(BTreeMap::from([("n_samples".to_string(), obs.n_samples * 2)]));
            }
        }
        RootCause::WrongEstimator | RootCause::AttributeError => {
            scheme.penalize_action = true;
            scheme.block_action = true;
        }
        RootCause::NumericalDegeneracy => scheme.penalize_action = true,
        RootCause::None => {}
    }
    scheme
}

/// Canonical text form: compact JSON with object keys sorted.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String, SchemeError> {
    let v = serde_json::to_value(value).map_err(|e| SchemeError::Parse(e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| SchemeError::Parse(e.to_string()))
}

pub fn from_canonical_json<T: DeserializeOwned>(text: &str) -> Result<T, SchemeError> {
    serde_json::from_str(text).map_err(|e| SchemeError::Parse(e.to_string()))
}

/// Any of the three schemes, tagged so a single reader can route them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", content = "body", rename_all = "snake_case")]
pub enum AnyScheme {
    Problem(ProblemScheme),
    Method(MethodScheme),
    Diagnostic(DiagnosticScheme),
}

pub fn serialize_scheme(s: &AnyScheme) -> Result<String, SchemeError> {
    to_canonical_json(s)
}

pub fn deserialize_scheme(text: &str) -> Result<AnyScheme, SchemeError> {
    from_canonical_json(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::Observation;

    pub fn beam_description() -> ProblemDescription {
        ProblemDescription {
            model_id: "cantilever_beam".into(),
            request: "Sensitivity analysis of the cantilever beam deflection".into(),
            d_in: 4,
            d_out: 1,
            n_budget: 20000,
            epsilon: 0.05,
            task: "SA".into(),
            distributions: vec!["Normal".into(); 4],
            model_class: Some(ModelClass::Multiplicative),
            flags: StructuralFlags::default(),
        }
    }

    #[test]
    fn beam_scheme_matches_listing() {
        let space = ActionSpace::default();
        let ps = build_problem_scheme(&beam_description(), &space).unwrap();
        assert_eq!(
            ps.feasible_sa_estimators,
            vec![Estimator::Sobol, Estimator::Chatterjee, Estimator::CVM, Estimator::PceSa]
        );
        assert_eq!(ps.feasible_uq_estimators, vec![Estimator::McsMoments, Estimator::PceMoments]);
        assert_eq!(ps.output_class, OutputClass::Scalar);
        assert!(!ps.high_d_in_flag);
        assert!(!ps.context.multi_output_flag);
        let morris = ps.estimator_flags.iter().find(|f| f.estimator == Estimator::Morris).unwrap();
        assert!(!morris.feasible);
        let sobol = ps.estimator_flags.iter().find(|f| f.estimator == Estimator::Sobol).unwrap();
        assert!(sobol.feasible);
        assert_eq!(sobol.constraint, "N=20000 >= 500*(4+2)=3000");
    }

    #[test]
    fn tiny_budget_leaves_rank_estimator() {
        let space = ActionSpace::default();
        let mut d = beam_description();
        d.d_in = 1;
        d.n_budget = 10;
        d.distributions = vec!["Uniform".into()];
        let ps = build_problem_scheme(&d, &space).unwrap();
        assert_eq!(ps.feasible_sa_estimators, vec![Estimator::Chatterjee]);
    }

    #[test]
    fn g15_admits_pce() {
        let space = ActionSpace::default();
        let mut d = beam_description();
        d.d_in = 15;
        d.n_budget = 50000;
        d.distributions = vec!["Uniform".into(); 15];
        let ps = build_problem_scheme(&d, &space).unwrap();
        assert!(ps.feasible_sa_estimators.contains(&Estimator::PceSa));
        assert!(ps.high_d_in_flag);
    }

    #[test]
    fn invalid_problems_rejected() {
        let space = ActionSpace::default();
        let mut d = beam_description();
        d.d_in = 0;
        d.distributions.clear();
        assert!(matches!(build_problem_scheme(&d, &space), Err(SchemeError::InvalidProblem(_))));
        let mut d = beam_description();
        d.task = "XY".into();
        assert!(matches!(build_problem_scheme(&d, &space), Err(SchemeError::InvalidProblem(_))));
    }

    #[test]
    fn sobol_method_scheme_cost() {
        let space = ActionSpace::default();
        let ps = build_problem_scheme(&beam_description(), &space).unwrap();
        let a = ActionTuple::new(Task::SA, &["MonteCarlo", "Sobol", "Fixed_N", "Scalar"]);
        let hp = BTreeMap::from([("n_samples".to_string(), 8500u64)]);
        let ms = build_method_scheme(&a, &ps, &hp, &space).unwrap();
        assert_eq!(ms.n_min_value, 3000);
        assert_eq!(ms.n_cost_actual, 51000);
        assert_eq!(ms.n_min_formula, "500 * (d_in + 2)");
        assert_eq!(ms.budget_status, BudgetStatus::Sufficient);
        assert_eq!(ms.required_attributes, vec![FIRST_ORDER, TOTAL_ORDER]);
    }

    #[test]
    fn zero_samples_with_small_budget_is_infeasible() {
        let space = ActionSpace::default();
        let mut d = beam_description();
        d.n_budget = 2000;
        let ps = build_problem_scheme(&d, &space).unwrap();
        let a = ActionTuple::new(Task::SA, &["MonteCarlo", "Sobol", "Fixed_N", "Scalar"]);
        let hp = BTreeMap::from([("n_samples".to_string(), 0u64)]);
        let ms = build_method_scheme(&a, &ps, &hp, &space).unwrap();
        assert_eq!(ms.n_cost_actual, 0);
        assert_eq!(ms.budget_status, BudgetStatus::Infeasible);
    }

    #[test]
    fn chatterjee_cost_is_single_loop() {
        let space = ActionSpace::default();
        let ps = build_problem_scheme(&beam_description(), &space).unwrap();
        let a = ActionTuple::new(Task::SA, &["MonteCarlo", "Chatterjee", "Fixed_N", "Scalar"]);
        let hp = BTreeMap::from([("n_samples".to_string(), 10000u64)]);
        let ms = build_method_scheme(&a, &ps, &hp, &space).unwrap();
        assert_eq!(ms.n_cost_actual, 10000);
        assert_eq!(ms.required_attributes, vec!["chatterjee_indices"]);
    }

    #[test]
    fn unknown_estimator_in_action() {
        let space = ActionSpace::default();
        let ps = build_problem_scheme(&beam_description(), &space).unwrap();
        let a = ActionTuple::new(Task::SA, &["MonteCarlo", "FAST", "Fixed_N", "Scalar"]);
        assert!(matches!(
            build_method_scheme(&a, &ps, &BTreeMap::new(), &space),
            Err(SchemeError::UnknownEstimator(_))
        ));
    }

    fn obs(n_samples: u64) -> Observation {
        Observation {
            status: Some(ExecutionStatus::Succeeded),
            intended: Estimator::Sobol,
            executed: Some(Estimator::Sobol),
            n_samples,
            result: None,
            error: None,
            read_attributes: vec![],
        }
    }

    #[test]
    fn insufficient_report_prescribes_doubling() {
        let b = RewardBreakdown::from_components(35.0, 12.0, 15.0, 10.0);
        let d = build_diagnostic_scheme("N=8500 insufficient, sum(S1)=1.044", &obs(8500), &b);
        assert_eq!(d.root_cause, RootCause::InsufficientN);
        assert_eq!(d.prescribed_n_factor, Some(2.0));
        assert_eq!(d.prescribed_hyperparam.unwrap()["n_samples"], 17000);
        assert_eq!(d.bottleneck_dim, RewardComponent::Accuracy);
        assert_eq!(d.convergence_status, ConvergenceStatus::Partial);
        assert!(!d.block_action);
    }

    #[test]
    fn empty_report_perfect_breakdown() {
        let b = RewardBreakdown::from_components(35.0, 35.0, 15.0, 15.0);
        let d = build_diagnostic_scheme("", &obs(1000), &b);
        assert_eq!(d.convergence_status, ConvergenceStatus::Converged);
        assert_eq!(d.root_cause, RootCause::None);
        assert_eq!(d.bottleneck_dim, RewardComponent::Integrity);
    }

    #[test]
    fn attribute_token_blocks() {
        let b = RewardBreakdown::from_components(20.0, 0.0, 0.0, 0.0);
        let d = build_diagnostic_scheme("AttributeError: object has no attribute 'indices'", &obs(1000), &b);
        assert_eq!(d.root_cause, RootCause::AttributeError);
        assert!(d.block_action);
        let d = build_diagnostic_scheme("CRITICAL FAILURE: mu_star reported instead of first_order_indices", &obs(1), &b);
        assert_eq!(d.root_cause, RootCause::WrongEstimator);
        assert!(d.block_action);
    }

    #[test]
    fn nan_is_a_whole_token() {
        assert_eq!(classify_root_cause("financial nominal"), RootCause::None);
        assert_eq!(classify_root_cause("index 3 is NaN"), RootCause::NumericalDegeneracy);
    }

    #[test]
    fn round_trips() {
        let space = ActionSpace::default();
        let ps = build_problem_scheme(&beam_description(), &space).unwrap();
        let s = AnyScheme::Problem(ps.clone());
        assert_eq!(deserialize_scheme(&serialize_scheme(&s).unwrap()).unwrap(), s);
        let a = ActionTuple::new(Task::SA, &["MonteCarlo", "Sobol", "Fixed_N", "Scalar"]);
        let ms = build_method_scheme(&a, &ps, &BTreeMap::new(), &space).unwrap();
        let s = AnyScheme::Method(ms);
        assert_eq!(deserialize_scheme(&serialize_scheme(&s).unwrap()).unwrap(), s);
        assert!(matches!(deserialize_scheme("{"), Err(SchemeError::Parse(_))));
    }

    #[test]
    fn canonical_keys_are_sorted() {
        let space = ActionSpace::default();
        let ps = build_problem_scheme(&beam_description(), &space).unwrap();
        let text = to_canonical_json(&ps).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(text.find("\"context\"").unwrap() < text.find("\"model_id\"").unwrap());
    }
}
