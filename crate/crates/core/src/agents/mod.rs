//! The agent contract: role catalog, payloads, deterministic default rules,
//! script tables that pin outputs, the Inspector checklist, the Debugger
//! rule table and the drift injectors used to attack the pipeline.

pub mod render;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::action_space::{ActionSpace, ActionTuple, Estimator};
use crate::bandit::{select_action, BanditConfig, BanditError, PolicyDecision, PolicyState};
use crate::estimators::{ExecutionError, ModelCatalog, Observation};
use crate::reward::{RewardBreakdown, RewardComponent, SubmartingaleViolation};
use crate::schemes::{
    build_problem_scheme, cost_factor, estimator_info, to_canonical_json, ContextVector, DiagnosticScheme,
    MethodScheme, ProblemDescription, ProblemScheme, SchemeError,
};

pub use render::{method_signature, plan_code, strategy_text};

/// Debugger applications allowed per iteration.
pub const DEFAULT_MAX_DEBUG_RETRIES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Coordinator,
    Gatekeeper,
    ModelTranslator,
    Strategist,
    Critic,
    StudyAgent,
    RefactorAgent,
    Inspector,
    Debugger,
    Advisor,
}

impl AgentRole {
    pub const ALL: [AgentRole; 10] = [
        AgentRole::Coordinator,
        AgentRole::Gatekeeper,
        AgentRole::ModelTranslator,
        AgentRole::Strategist,
        AgentRole::Critic,
        AgentRole::StudyAgent,
        AgentRole::RefactorAgent,
        AgentRole::Inspector,
        AgentRole::Debugger,
        AgentRole::Advisor,
    ];

    /// Payload kinds (input, output) for the role.
    pub fn io(self) -> (PayloadKind, PayloadKind) {
        use PayloadKind as K;
        match self {
            AgentRole::Coordinator => (K::Description, K::Problem),
            AgentRole::Gatekeeper | AgentRole::ModelTranslator => (K::Problem, K::Problem),
            AgentRole::Strategist => (K::StrategistInput, K::Strategy),
            AgentRole::Critic => (K::Strategy, K::Verdict),
            AgentRole::StudyAgent => (K::Strategy, K::Study),
            AgentRole::RefactorAgent => (K::Study, K::Plan),
            AgentRole::Inspector => (K::Inspection, K::Verdict),
            AgentRole::Debugger => (K::Failure, K::Fix),
            AgentRole::Advisor => (K::AdvisorInput, K::Report),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Description,
    Problem,
    StrategistInput,
    Strategy,
    Study,
    Inspection,
    Plan,
    Verdict,
    Failure,
    Fix,
    AdvisorInput,
    Report,
}

/// S_n: the structured stand-in for generated code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub estimator: Estimator,
    pub hyperparams: BTreeMap<String, u64>,
    pub output_bindings: Vec<String>,
    pub model_id: String,
    pub seed: u64,
    pub sampling: String,
    pub output_treatment: String,
}

impl ExecutionPlan {
    /// The plan a faithful Refactor Agent writes for `ms`.
    pub fn from_scheme(ms: &MethodScheme, model_id: &str, seed: u64) -> Self {
        ExecutionPlan {
            estimator: ms.estimator,
            hyperparams: ms.hyperparams.clone(),
            output_bindings: ms.required_attributes.clone(),
            model_id: model_id.to_string(),
            seed,
            sampling: ms.action.dim(0).to_string(),
            output_treatment: ms.output_strategy.clone(),
        }
    }

    pub fn n_samples(&self) -> u64 {
        self.hyperparams.get("n_samples").copied().unwrap_or(0)
    }

    pub fn is_valid(&self) -> bool {
        !self.output_bindings.is_empty()
    }
}

/// What the Strategist sees at the start of an attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategistInput {
    pub n: u32,
    pub attempt: u32,
    pub problem: ProblemScheme,
    pub diagnostic: Option<DiagnosticScheme>,
    /// CP7 fired on the previous iteration.
    pub novelty_warning: bool,
    /// Register flag raised on the previous iteration.
    pub violation: Option<SubmartingaleViolation>,
    /// Warnings attached by upstream checkpoints.
    pub warnings: Vec<String>,
    /// Estimators the Critic rejected earlier in this iteration.
    pub excluded: Vec<Estimator>,
    pub screening_first: bool,
}

impl StrategistInput {
    pub fn new(n: u32, problem: ProblemScheme) -> Self {
        StrategistInput {
            n,
            attempt: 0,
            problem,
            diagnostic: None,
            novelty_warning: false,
            violation: None,
            warnings: Vec::new(),
            excluded: Vec::new(),
            screening_first: false,
        }
    }
}

/// A_n plus the strategy report that carries it downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub decision: PolicyDecision,
    /// The method the downstream agents read. Equal to the decision's scheme
    /// unless drift rewrote it.
    pub method_scheme: MethodScheme,
    pub model_id: String,
    pub context: ContextVector,
    pub text: String,
}

impl StrategyReport {
    pub fn new(decision: PolicyDecision, model_id: &str, context: &ContextVector) -> Self {
        let method_scheme = decision.method_scheme.clone();
        let text = report_text(&method_scheme, context);
        StrategyReport { decision, method_scheme, model_id: model_id.to_string(), context: context.clone(), text }
    }
}

fn report_text(ms: &MethodScheme, x: &ContextVector) -> String {
    format!("{} for a {}", strategy_text(ms), render::context_text(x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub strategy: StrategyReport,
    pub template: Option<String>,
    pub cell_map: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum InspectorVerdict {
    Approved,
    Rejected { reasons: Vec<String> },
}

impl InspectorVerdict {
    pub fn approved(&self) -> bool {
        matches!(self, InspectorVerdict::Approved)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "patch", rename_all = "snake_case")]
pub enum PlanPatch {
    SetHyperparam { name: String, value: u64 },
    Rebind { bindings: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixInstructions {
    pub patches: Vec<PlanPatch>,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("unrecoverable: {reason}")]
pub struct Unrecoverable {
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum FixOutcome {
    Patch(FixInstructions),
    Unrecoverable(Unrecoverable),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvisorInput {
    pub observation: Observation,
    pub method_scheme: MethodScheme,
    pub reward: RewardBreakdown,
    pub n_budget: u64,
    pub r_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum Payload {
    Description(ProblemDescription),
    Problem(ProblemScheme),
    StrategistInput(Box<StrategistInput>),
    Strategy(Box<StrategyReport>),
    Study(Box<StudyReport>),
    Inspection { plan: ExecutionPlan, scheme: Box<MethodScheme> },
    Plan(ExecutionPlan),
    Verdict(InspectorVerdict),
    Failure { plan: ExecutionPlan, error: ExecutionError, scheme: Box<MethodScheme> },
    Fix(FixOutcome),
    AdvisorInput(Box<AdvisorInput>),
    Report(String),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Description(_) => PayloadKind::Description,
            Payload::Problem(_) => PayloadKind::Problem,
            Payload::StrategistInput(_) => PayloadKind::StrategistInput,
            Payload::Strategy(_) => PayloadKind::Strategy,
            Payload::Study(_) => PayloadKind::Study,
            Payload::Inspection { .. } => PayloadKind::Inspection,
            Payload::Plan(_) => PayloadKind::Plan,
            Payload::Verdict(_) => PayloadKind::Verdict,
            Payload::Failure { .. } => PayloadKind::Failure,
            Payload::Fix(_) => PayloadKind::Fix,
            Payload::AdvisorInput(_) => PayloadKind::AdvisorInput,
            Payload::Report(_) => PayloadKind::Report,
        }
    }

    /// sha256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let text = to_canonical_json(self).unwrap_or_default();
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub role: AgentRole,
    pub payload: Payload,
    /// The text a checkpoint embeds for this message.
    pub free_text: Option<String>,
}

impl AgentMessage {
    pub fn new(role: AgentRole, payload: Payload) -> Self {
        AgentMessage { role, payload, free_text: None }
    }

    pub fn text(&self) -> &str {
        self.free_text.as_deref().unwrap_or("")
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("no script entry for {role:?} (key {key})")]
    ScriptMiss { role: AgentRole, key: String },
    #[error("{role:?} expects a {expected:?} payload, got {got:?}")]
    PayloadMismatch { role: AgentRole, expected: PayloadKind, got: PayloadKind },
    #[error("{role:?} needs {what} in its context")]
    MissingContext { role: AgentRole, what: &'static str },
    #[error("no feasible estimator for the problem")]
    NoFeasibleEstimator,
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Execution(#[from] ExecutionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub role: AgentRole,
    /// Input digest, `iteration:N:attempt:K`, `iteration:N` or `*`.
    pub key: String,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub estimator: Option<Estimator>,
    #[serde(default)]
    pub action: Option<ActionTuple>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptTable {
    pub id: String,
    pub entries: Vec<ScriptEntry>,
    /// Roles with no default rule: a lookup miss is an error.
    pub strict_roles: Vec<AgentRole>,
}

impl ScriptTable {
    pub fn lookup(&self, role: AgentRole, digest: &str, n: u32, attempt: u32) -> Option<&ScriptEntry> {
        let keys = [digest.to_string(), format!("iteration:{n}:attempt:{attempt}"), format!("iteration:{n}"), "*".to_string()];
        keys.iter().find_map(|k| self.entries.iter().find(|e| e.role == role && &e.key == k))
    }
}

/// Everything the default rules read besides the message itself.
#[derive(Clone, Copy)]
pub struct AgentContext<'a> {
    pub space: &'a ActionSpace,
    pub bandit: &'a BanditConfig,
    pub policy: Option<&'a PolicyState>,
    pub catalog: Option<&'a ModelCatalog>,
    pub iteration: u32,
    pub attempt: u32,
}

pub fn run_agent(
    role: AgentRole,
    input: &AgentMessage,
    script: &ScriptTable,
    ctx: &AgentContext<'_>,
    rng_seed: u64,
) -> Result<AgentMessage, AgentError> {
    let (expected, _) = role.io();
    if input.payload.kind() != expected {
        return Err(AgentError::PayloadMismatch { role, expected, got: input.payload.kind() });
    }
    let digest = input.payload.digest();
    let entry = script.lookup(role, &digest, ctx.iteration, ctx.attempt);
    if entry.is_none() && script.strict_roles.contains(&role) {
        return Err(AgentError::ScriptMiss { role, key: digest });
    }
    let text_override = entry.and_then(|e| e.text.clone());
    let (payload, text) = match (&input.payload, role) {
        (Payload::Description(desc), AgentRole::Coordinator) => {
            let ps = build_problem_scheme(desc, ctx.space)?;
            let text = render::problem_text(&ps);
            (Payload::Problem(ps), text)
        }
        (Payload::Problem(ps), AgentRole::Gatekeeper) => {
            if ps.feasible_sa_estimators.is_empty() && ps.feasible_uq_estimators.is_empty() {
                return Err(AgentError::NoFeasibleEstimator);
            }
            (Payload::Problem(ps.clone()), render::problem_text(ps))
        }
        (Payload::Problem(ps), AgentRole::ModelTranslator) => {
            if let Some(catalog) = ctx.catalog {
                catalog.get(&ps.model_id)?;
            }
            (Payload::Problem(ps.clone()), render::problem_text(ps))
        }
        (Payload::StrategistInput(si), AgentRole::Strategist) => {
            let report = strategist_default(si, entry, ctx, rng_seed)?;
            let text = report.text.clone();
            (Payload::Strategy(Box::new(report)), text)
        }
        (Payload::Strategy(report), AgentRole::Critic) => {
            let verdict = critic_review(&report.method_scheme);
            let text = verdict_text(&verdict);
            (Payload::Verdict(verdict), text)
        }
        (Payload::Strategy(report), AgentRole::StudyAgent) => {
            let study = study_default(report);
            let text = study.cell_map.clone();
            (Payload::Study(Box::new(study)), text)
        }
        (Payload::Study(study), AgentRole::RefactorAgent) => {
            let mut plan = ExecutionPlan::from_scheme(&study.strategy.method_scheme, &study.strategy.model_id, rng_seed);
            if let Some(e) = entry.and_then(|e| e.estimator) {
                plan.estimator = e;
                plan.output_bindings = estimator_info(e).required.iter().map(|s| s.to_string()).collect();
            }
            let text = plan_code(&plan);
            (Payload::Plan(plan), text)
        }
        (Payload::Inspection { plan, scheme }, AgentRole::Inspector) => {
            let verdict = inspector_check(plan, scheme);
            let text = verdict_text(&verdict);
            (Payload::Verdict(verdict), text)
        }
        (Payload::Failure { plan, error, scheme }, AgentRole::Debugger) => {
            let out = match debugger_fix(plan, error, scheme) {
                Ok(fix) => FixOutcome::Patch(fix),
                Err(u) => FixOutcome::Unrecoverable(u),
            };
            let text = match &out {
                FixOutcome::Patch(f) => f.rationale.clone(),
                FixOutcome::Unrecoverable(u) => u.to_string(),
            };
            (Payload::Fix(out), text)
        }
        (Payload::AdvisorInput(ai), AgentRole::Advisor) => {
            let report = text_override.clone().unwrap_or_else(|| advisor_report(ai));
            (Payload::Report(report.clone()), report)
        }
        (p, r) => return Err(AgentError::PayloadMismatch { role: r, expected, got: p.kind() }),
    };
    let payload = match (payload, &text_override) {
        (Payload::Strategy(mut report), Some(t)) => {
            report.text = t.clone();
            Payload::Strategy(report)
        }
        (p, _) => p,
    };
    Ok(AgentMessage { role, payload, free_text: Some(text_override.unwrap_or(text)) })
}

fn strategist_default(
    si: &StrategistInput,
    entry: Option<&ScriptEntry>,
    ctx: &AgentContext<'_>,
    seed: u64,
) -> Result<StrategyReport, AgentError> {
    let policy = ctx.policy.ok_or(AgentError::MissingContext { role: AgentRole::Strategist, what: "a policy" })?;
    let ps = &si.problem;
    let all = ctx.space.filter_feasible(&ps.context);
    let feasible: Vec<ActionTuple> = if let Some(a) = entry.and_then(|e| e.action.clone()) {
        vec![a]
    } else {
        let mut pool: Vec<ActionTuple> =
            all.iter().filter(|a| a.estimator().map(|e| !si.excluded.contains(&e)).unwrap_or(false)).cloned().collect();
        if pool.is_empty() {
            pool = all.clone();
        }
        let pin = entry.and_then(|e| e.estimator).or(if si.screening_first && si.n == 1 {
            Some(Estimator::Morris)
        } else {
            None
        });
        if let Some(p) = pin {
            let only: Vec<ActionTuple> = pool.iter().filter(|a| a.estimator().ok() == Some(p)).cloned().collect();
            if !only.is_empty() {
                pool = only;
            }
        }
        pool
    };
    let decision = select_action(
        policy,
        ctx.space,
        ps,
        &feasible,
        si.diagnostic.as_ref(),
        si.novelty_warning,
        seed,
        ctx.bandit,
    )?;
    Ok(StrategyReport::new(decision, &ps.model_id, &ps.context))
}

/// The Critic's own structural review; CP2 is evaluated by the orchestrator.
pub fn critic_review(ms: &MethodScheme) -> InspectorVerdict {
    if ms.budget_status == crate::schemes::BudgetStatus::Infeasible {
        InspectorVerdict::Rejected { reasons: vec![format!("{} needs {} evaluations", ms.estimator, ms.n_min_value)] }
    } else {
        InspectorVerdict::Approved
    }
}

fn verdict_text(v: &InspectorVerdict) -> String {
    match v {
        InspectorVerdict::Approved => "approved".into(),
        InspectorVerdict::Rejected { reasons } => format!("rejected: {}", reasons.join("; ")),
    }
}

/// Worked examples the Study Agent copies from. Generalized Sobol has none.
pub fn study_template(e: Estimator) -> Option<String> {
    let usage = match e {
        Estimator::Sobol => "pick-freeze matrices A B and AB_i, Saltelli first order and Jansen total order",
        Estimator::Chatterjee => "rank the output on each input and apply the xi correlation",
        Estimator::CVM => "pick-freeze indicator integrals of the output distribution",
        Estimator::Morris => "winding-stairs trajectories on a p-level grid, mean absolute elementary effect",
        Estimator::PceSa => "least-squares polynomial chaos, indices from squared coefficients",
        Estimator::McsMoments => "plain Monte Carlo propagation, sample mean and variance",
        Estimator::PceMoments => "polynomial chaos propagation, moments from coefficients",
        Estimator::GeneralizedSobol => return None,
    };
    let info = estimator_info(e);
    let outputs: Vec<String> = info.produces.iter().map(|a| render::camel(a)).collect();
    Some(format!(
        "{e} via {} for {} producing {}; usage: {usage}",
        render::short_class(info.library_class),
        render::index_word(info.index_type),
        outputs.join(" ")
    ))
}

fn study_default(report: &StrategyReport) -> StudyReport {
    let ms = &report.method_scheme;
    let hp: Vec<(String, u64)> = ms.hyperparams.iter().map(|(k, v)| (k.clone(), *v)).collect();
    StudyReport {
        strategy: report.clone(),
        template: study_template(ms.estimator),
        cell_map: render::cell_map_text(ms.estimator, &ms.library_class, &ms.required_attributes, &hp),
    }
}

/// Structural checklist: same estimator, every required output bound, no
/// forbidden output bound, and enough samples for the scheme's minimum.
pub fn inspector_check(plan: &ExecutionPlan, ms: &MethodScheme) -> InspectorVerdict {
    let mut reasons = Vec::new();
    if plan.estimator != ms.estimator {
        reasons.push(format!("estimator mismatch: plan runs {}, scheme names {}", plan.estimator, ms.estimator));
    }
    if !plan.is_valid() {
        reasons.push("plan binds no outputs".into());
    }
    for a in &ms.required_attributes {
        if !plan.output_bindings.contains(a) {
            reasons.push(format!("required output {a} not bound"));
        }
    }
    for a in &plan.output_bindings {
        if ms.forbidden_attributes.contains(a) {
            reasons.push(format!("forbidden output {a} bound"));
        }
    }
    let evals = plan.n_samples() * cost_factor(plan.estimator, ms.d_in);
    if evals < ms.n_min_value {
        reasons.push(format!("{evals} evaluations below the minimum {}", ms.n_min_value));
    }
    if reasons.is_empty() {
        InspectorVerdict::Approved
    } else {
        InspectorVerdict::Rejected { reasons }
    }
}

/// Rule table from error class to plan patch.
pub fn debugger_fix(plan: &ExecutionPlan, error: &ExecutionError, ms: &MethodScheme) -> Result<FixInstructions, Unrecoverable> {
    match error {
        ExecutionError::InsufficientSamples { required, .. } => Ok(FixInstructions {
            patches: vec![PlanPatch::SetHyperparam { name: "n_samples".into(), value: *required }],
            rationale: format!("raise n_samples from {} to {required}", plan.n_samples()),
        }),
        ExecutionError::UnknownAttribute { name } => {
            if plan.output_bindings == ms.required_attributes {
                return Err(Unrecoverable { reason: format!("required output {name} is not produced") });
            }
            Ok(FixInstructions {
                patches: vec![PlanPatch::Rebind { bindings: ms.required_attributes.clone() }],
                rationale: format!("rebind outputs: {name} replaced by {}", ms.required_attributes.join(", ")),
            })
        }
        ExecutionError::InvalidHyperparameter { name, .. } if name == "levels" => Ok(FixInstructions {
            patches: vec![PlanPatch::SetHyperparam { name: "levels".into(), value: 4 }],
            rationale: "reset levels to 4".into(),
        }),
        other => Err(Unrecoverable { reason: other.to_string() }),
    }
}

pub fn apply_fix(plan: &ExecutionPlan, fix: &FixInstructions) -> ExecutionPlan {
    let mut out = plan.clone();
    for p in &fix.patches {
        match p {
            PlanPatch::SetHyperparam { name, value } => {
                out.hyperparams.insert(name.clone(), *value);
            }
            PlanPatch::Rebind { bindings } => out.output_bindings = bindings.clone(),
        }
    }
    out
}

/// Warning codes the default Advisor knows how to explain.
pub const EXPLAINABLE_WARNINGS: [&str; 2] = ["negative_index", "sum_s1_above_one"];

fn ranking_text(names: &[f64]) -> String {
    let mut idx: Vec<usize> = (0..names.len()).collect();
    idx.sort_by(|a, b| names[*b].partial_cmp(&names[*a]).unwrap_or(std::cmp::Ordering::Equal));
    idx.iter().take(4).map(|i| format!("X{} {:.3}", i + 1, names[*i])).collect::<Vec<_>>().join(", ")
}

/// Accuracy has the strictly lowest share of its cap.
fn accuracy_limited(b: &RewardBreakdown) -> bool {
    let share = |c: RewardComponent| b.component(c) / c.cap();
    let acc = share(RewardComponent::Accuracy);
    RewardComponent::ORDER.iter().filter(|c| **c != RewardComponent::Accuracy).all(|c| acc + 1e-9 < share(*c))
}

/// Default diagnosis. The wording is chosen so the root-cause keyword rules
/// classify it as intended.
pub fn advisor_report(input: &AdvisorInput) -> String {
    let obs = &input.observation;
    let ms = &input.method_scheme;
    let est = ms.estimator;
    let result = match (&obs.result, &obs.error) {
        (Some(r), _) if obs.succeeded() => r,
        (_, Some(e @ ExecutionError::InsufficientSamples { .. })) => {
            return format!("{est} execution failed with insufficient samples: {e}.")
        }
        (_, Some(e @ ExecutionError::UnknownAttribute { .. })) => {
            return format!("{est} execution failed with an attribute error: {e}.")
        }
        (_, Some(e)) => return format!("{est} execution failed: {e}."),
        _ => return format!("{est} produced no result."),
    };
    let evals = result.evaluations_used;
    let missing: Vec<&String> = ms.required_attributes.iter().filter(|a| result.attribute(a).is_none()).collect();
    if !missing.is_empty() {
        let got: Vec<String> = result.populated_attributes().iter().map(|a| a.replace('_', " ")).collect();
        let want: Vec<String> = ms.required_attributes.iter().map(|a| a.replace('_', " ")).collect();
        return format!(
            "CRITICAL FAILURE: {} reported instead of {} for {est}; the code ran {}.",
            got.join(" and "),
            want.join(" and "),
            result.estimator
        );
    }
    if let Some(bad) = obs.read_attributes.iter().find(|a| ms.forbidden_attributes.contains(a)) {
        return format!("attribute error: the code read {bad}, which {est} does not define.");
    }
    let primary = ms.required_attributes.first().and_then(|a| result.attribute(a)).unwrap_or(&[]);
    if result.nan_count > 0 || result.negative_variance_flag || result.has_critical_warning() {
        return format!(
            "degenerate output from {est}: {} NaN values, negative variance {}.",
            result.nan_count, result.negative_variance_flag
        );
    }
    let mut notes = String::new();
    for w in result.warnings.iter().filter(|w| EXPLAINABLE_WARNINGS.contains(&w.code.as_str())) {
        if !notes.contains(&w.code) {
            notes.push_str(&format!(" Flag {} is within sampling noise.", w.code));
        }
    }
    let total = input.reward.total;
    if total >= input.r_threshold {
        return format!("{est} indices converged at N={evals}: {}.{notes}", ranking_text(primary));
    }
    if total > 0.0 && accuracy_limited(&input.reward) {
        let doubled = 2 * obs.n_samples * cost_factor(est, ms.d_in);
        if doubled <= input.n_budget {
            return format!(
                "{est} estimates insufficient at N={evals} ({}); doubling the sample size to {doubled} fits the budget.{notes}",
                ranking_text(primary)
            );
        }
        return format!("{est} precision limited by the budget at N={evals}: {}.{notes}", ranking_text(primary));
    }
    format!("{est} indices at N={evals}: {}.{notes}", ranking_text(primary))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    MethodSwap,
    FieldCorruption,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftSite {
    /// Before the Study Agent reads the strategy report.
    Study,
    /// After the Study Agent, before the Refactor Agent.
    #[default]
    Refactor,
}

fn default_target() -> String {
    "estimator".into()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub kind: DriftKind,
    #[serde(default = "default_target")]
    pub target_field: String,
    #[serde(default)]
    pub replacement_value: Option<String>,
    /// Drawn from uniformly when no replacement value is given.
    #[serde(default)]
    pub replacement_pool: Vec<Estimator>,
    #[serde(default = "yes")]
    pub exclude_current: bool,
    pub probability: f64,
    /// Only this iteration is attacked; every iteration when absent.
    #[serde(default)]
    pub activation_iteration: Option<u32>,
    #[serde(default)]
    pub site: DriftSite,
    /// Only reports naming this estimator are attacked.
    #[serde(default)]
    pub source_filter: Option<Estimator>,
}

#[derive(Debug, Error, PartialEq)]
#[error("drift probability {0} outside [0, 1]")]
pub struct DriftSpecError(pub f64);

impl DriftSpec {
    pub fn none() -> Self {
        DriftSpec {
            kind: DriftKind::None,
            target_field: default_target(),
            replacement_value: None,
            replacement_pool: Vec::new(),
            exclude_current: true,
            probability: 0.0,
            activation_iteration: None,
            site: DriftSite::Refactor,
            source_filter: None,
        }
    }

    pub fn method_swap(to: Estimator, probability: f64) -> Self {
        DriftSpec {
            kind: DriftKind::MethodSwap,
            replacement_value: Some(to.as_str().to_string()),
            probability,
            ..DriftSpec::none()
        }
    }

    pub fn validate(&self) -> Result<(), DriftSpecError> {
        if (0.0..=1.0).contains(&self.probability) {
            Ok(())
        } else {
            Err(DriftSpecError(self.probability))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub n: u32,
    pub site: DriftSite,
    pub kind: DriftKind,
    pub target_field: String,
    pub original: String,
    pub replacement: String,
}

/// The method scheme rewritten to name `e`. Sizing is left as the Strategist
/// wrote it; settings only the old method understands are dropped.
pub fn swap_estimator(ms: &MethodScheme, e: Estimator) -> MethodScheme {
    let info = estimator_info(e);
    let strings = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut out = ms.clone();
    out.action = ms.action.with_estimator(e);
    out.estimator = e;
    out.index_type = info.index_type;
    out.produces = strings(info.produces);
    out.sampling_scheme = info.sampling_scheme;
    out.library_class = info.library_class.to_string();
    out.required_attributes = strings(info.required);
    out.forbidden_attributes = strings(info.forbidden);
    out.valid_when = strings(info.valid_when);
    out.invalid_when = strings(info.invalid_when);
    if e != Estimator::Morris {
        out.hyperparams.remove("levels");
    }
    out
}

fn report_mut(payload: &mut Payload) -> Option<&mut StrategyReport> {
    match payload {
        Payload::Strategy(r) => Some(r),
        Payload::Study(s) => Some(&mut s.strategy),
        _ => None,
    }
}

/// With probability `spec.probability`, a copy of `msg` whose strategy
/// report has `target_field` replaced. The input is never touched.
pub fn inject_drift(msg: &AgentMessage, spec: &DriftSpec, n: u32, rng_seed: u64) -> (AgentMessage, Option<DriftEvent>) {
    let identity = (msg.clone(), None);
    if spec.kind == DriftKind::None || spec.activation_iteration.is_some_and(|k| k != n) {
        return identity;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    if rng.random::<f64>() >= spec.probability {
        return identity;
    }
    let mut out = msg.clone();
    let Some(report) = report_mut(&mut out.payload) else { return identity };
    let current = report.method_scheme.estimator;
    if spec.source_filter.is_some_and(|f| f != current) {
        return identity;
    }
    let swap = spec.kind == DriftKind::MethodSwap || spec.target_field == "estimator";
    let (original, replacement) = if swap {
        let to = match spec.replacement_value.as_deref().and_then(|v| v.parse::<Estimator>().ok()) {
            Some(e) => e,
            None => {
                let pool: Vec<Estimator> =
                    spec.replacement_pool.iter().copied().filter(|e| !spec.exclude_current || *e != current).collect();
                if pool.is_empty() {
                    return identity;
                }
                pool[rng.random_range(0..pool.len())]
            }
        };
        report.method_scheme = swap_estimator(&report.method_scheme, to);
        (current.to_string(), to.to_string())
    } else {
        let ms = &mut report.method_scheme;
        match spec.target_field.as_str() {
            "required_attributes" | "output_bindings" => {
                let new: Vec<String> = spec
                    .replacement_value
                    .as_deref()
                    .unwrap_or("")
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                let old = ms.required_attributes.join(",");
                ms.required_attributes = new.clone();
                (old, new.join(","))
            }
            field if ms.hyperparams.contains_key(field) => {
                let value = spec.replacement_value.as_deref().and_then(|v| v.parse::<u64>().ok()).unwrap_or(1);
                let old = ms.hyperparams.insert(field.to_string(), value).unwrap_or(0);
                (old.to_string(), value.to_string())
            }
            _ => return identity,
        }
    };
    report.text = report_text(&report.method_scheme, &report.context);
    let text = report.text.clone();
    if let Payload::Study(s) = &mut out.payload {
        let ms = &s.strategy.method_scheme;
        let hp: Vec<(String, u64)> = ms.hyperparams.iter().map(|(k, v)| (k.clone(), *v)).collect();
        s.template = study_template(ms.estimator);
        s.cell_map = render::cell_map_text(ms.estimator, &ms.library_class, &ms.required_attributes, &hp);
        out.free_text = Some(s.cell_map.clone());
    } else {
        out.free_text = Some(text);
    }
    let event = DriftEvent { n, site: spec.site, kind: spec.kind, target_field: spec.target_field.clone(), original, replacement };
    (out, Some(event))
}
