//! Session orchestration: Group A conceptualization, CP0, and the bandit
//! loop with every checkpoint wired at its boundary.

mod ablation;
mod environment;
mod trace;

pub use ablation::{run_ablation_suite, summarize, write_ablation_csv, AblationCondition, AblationRow, AblationRun, ConditionSummary};
pub use environment::{EvalRequest, Environment, NumericEnvironment, SimulatedEnvironment};
pub use trace::{read_jsonl, trace_to_jsonl, write_jsonl, TraceLine};

use std::collections::BTreeMap;
use std::ops::Deref;
use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::action_space::{ActionSpace, ActionSpaceConfig, ActionTuple, Estimator};
use crate::agents::{
    render, run_agent, AgentContext, AgentError, AgentMessage, AgentRole, AdvisorInput, DriftEvent, DriftSite,
    DriftSpec, ExecutionPlan, FixOutcome, InspectorVerdict, Payload, ScriptTable, StrategistInput, StrategyReport,
    StudyReport, DEFAULT_MAX_DEBUG_RETRIES,
};
use crate::archive::Archive;
use crate::bandit::{encode_features, update, warm_start, BanditConfig, BanditError, PolicyState};
use crate::checkpoints::{evaluate_cp0, CheckpointBank, CheckpointConfig, CheckpointId, CheckpointResult, Cp0Result, MatchKind, Verdict};
use crate::embedding::{calibrate_null, load_corpus, EmbeddingProvider, NULL_CORPUS};
use crate::estimators::{ExecutionStatus, Observation};
use crate::reward::{RewardBreakdown, RewardConfig, RewardError, RegisterState, SubmartingaleViolation};
use crate::schemes::{
    build_diagnostic_scheme_with, to_canonical_json, DiagnosticScheme, MethodScheme, ProblemDescription, ProblemScheme,
    SchemeError,
};
use crate::seeds::derive_tagged;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub n_max: u32,
    pub r_threshold: f64,
    /// Stop at the first iteration that reaches the threshold.
    pub stop_on_convergence: bool,
    pub checkpoints: CheckpointConfig,
    /// Consult the Inspector when CP5 blocks a plan.
    pub inspector: bool,
    pub drift: Vec<DriftSpec>,
    pub seed: u64,
    pub script: ScriptTable,
    pub archive_path: Option<PathBuf>,
    pub persist_policy: bool,
    pub max_debug_retries: u32,
    pub bandit: BanditConfig,
    pub reward: RewardConfig,
    pub action_space: ActionSpaceConfig,
    pub session_id: Option<String>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            n_max: 5,
            r_threshold: 85.0,
            stop_on_convergence: true,
            checkpoints: CheckpointConfig::default(),
            inspector: true,
            drift: Vec::new(),
            seed: 0,
            script: ScriptTable::default(),
            archive_path: None,
            persist_policy: false,
            max_debug_retries: DEFAULT_MAX_DEBUG_RETRIES,
            bandit: BanditConfig::default(),
            reward: RewardConfig::default(),
            action_space: ActionSpaceConfig::default(),
            session_id: None,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.n_max < 1 {
            return Err(PipelineError::Config("n_max must be at least 1".into()));
        }
        if !(self.r_threshold > 0.0 && self.r_threshold <= 100.0) {
            return Err(PipelineError::Config(format!("r_threshold {} outside (0, 100]", self.r_threshold)));
        }
        for d in &self.drift {
            d.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// sha256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(to_canonical_json(self).unwrap_or_default().as_bytes()))
    }

    pub fn ablated() -> Self {
        let mut cfg = SessionConfig::default();
        cfg.checkpoints.ablate_all = true;
        cfg
    }
}

/// Feedback the Strategist received at the start of the iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StrategistNotes {
    pub violation: Option<SubmartingaleViolation>,
    pub warnings: Vec<String>,
    pub novelty_warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordData {
    pub n: u32,
    pub action: ActionTuple,
    /// The policy's method scheme for the action.
    pub method_scheme: MethodScheme,
    pub plan: Option<ExecutionPlan>,
    pub observation: Option<Observation>,
    pub reward: RewardBreakdown,
    pub checkpoint_events: Vec<CheckpointResult>,
    pub drift_events: Vec<DriftEvent>,
    pub diagnostic: DiagnosticScheme,
    pub strategist_notes: StrategistNotes,
    pub advisor_report: Option<String>,
    pub inspector_rejections: u32,
    #[serde(default)]
    pub inspector_findings: Vec<String>,
    pub debug_fixes: u32,
    /// Why the iteration ended without an observation.
    pub failure: Option<String>,
}

/// One (A_n, S_n, O_n, R_n) tuple. `mismatch` is derived from the stored
/// action and plan and cannot be set.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    data: RecordData,
    mismatch: bool,
}

impl IterationRecord {
    pub fn new(data: RecordData) -> Self {
        let intended = data.action.estimator().ok();
        let mismatch = data.plan.as_ref().is_some_and(|p| Some(p.estimator) != intended);
        IterationRecord { data, mismatch }
    }

    pub fn mismatch(&self) -> bool {
        self.mismatch
    }

    /// Plan hyperparameters differ from the policy's; logged, not a mismatch.
    pub fn hyperparam_divergence(&self) -> bool {
        self.data.plan.as_ref().is_some_and(|p| p.hyperparams != self.data.method_scheme.hyperparams)
    }

    pub fn data(&self) -> &RecordData {
        &self.data
    }

    pub fn blocks(&self) -> usize {
        self.checkpoint_events.iter().filter(|e| e.verdict == Verdict::Block).count()
    }

    pub fn warnings(&self) -> usize {
        self.checkpoint_events.iter().filter(|e| e.verdict == Verdict::Warn).count()
    }
}

impl Deref for IterationRecord {
    type Target = RecordData;

    fn deref(&self) -> &RecordData {
        &self.data
    }
}

#[derive(Serialize)]
struct RecordOut<'a> {
    #[serde(flatten)]
    data: &'a RecordData,
    mismatch: bool,
    hyperparam_divergence: bool,
}

impl Serialize for IterationRecord {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RecordOut { data: &self.data, mismatch: self.mismatch, hyperparam_divergence: self.hyperparam_divergence() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for IterationRecord {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        RecordData::deserialize(d).map(IterationRecord::new)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    BudgetExhausted,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub session_id: String,
    pub config_digest: String,
    pub provider_id: String,
    pub environment_id: String,
    pub null_floor: f64,
    pub config: SessionConfig,
    pub problem: ProblemScheme,
    /// CP1 events of the conceptualization phase.
    pub group_a_events: Vec<CheckpointResult>,
    pub cp0: Option<Cp0Result>,
    pub iterations: Vec<IterationRecord>,
    pub outcome: Outcome,
    pub best_reward: f64,
    pub iterations_to_converge: Option<u32>,
    pub submartingale_flags: Vec<u32>,
    pub abort_reason: Option<String>,
}

impl SessionTrace {
    pub fn mismatches(&self) -> usize {
        self.iterations.iter().filter(|r| r.mismatch()).count()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.reward.total).collect()
    }

    /// First iteration reaching the best reward.
    pub fn iterations_to_best(&self) -> Option<u32> {
        self.iterations.iter().find(|r| r.reward.total >= self.best_reward).map(|r| r.n)
    }

    pub fn checkpoint_events(&self) -> impl Iterator<Item = &CheckpointResult> {
        self.group_a_events.iter().chain(self.iterations.iter().flat_map(|r| r.checkpoint_events.iter()))
    }

    pub fn count_verdicts(&self, v: Verdict) -> usize {
        self.checkpoint_events().filter(|e| e.verdict == v).count()
    }
}

/// 0.95-quantile (by default) of the null similarity distribution.
pub fn null_floor(provider: &dyn EmbeddingProvider, cfg: &CheckpointConfig, seed: u64) -> f64 {
    let corpus = load_corpus(NULL_CORPUS);
    calibrate_null(provider, &corpus, cfg.null_pairs, seed).map(|d| d.quantile(cfg.null_quantile)).unwrap_or(0.0)
}

/// Shared, read-only collaborators of a session plus the starting policy.
pub struct SessionDeps<'a> {
    pub space: &'a ActionSpace,
    pub env: &'a dyn Environment,
    pub provider: &'a dyn EmbeddingProvider,
    pub null_floor: f64,
    pub archive: &'a Archive,
    /// Persisted policy to continue from; a fresh one is built when absent.
    pub policy: Option<PolicyState>,
}

pub struct SessionOutput {
    pub trace: SessionTrace,
    pub policy: PolicyState,
}

/// Mutable loop state between iterations.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub n: u32,
    pub problem: ProblemScheme,
    pub policy: PolicyState,
    pub bank: CheckpointBank,
    pub register: RegisterState,
    pub diagnostic: Option<DiagnosticScheme>,
    pub novelty_warning: bool,
    pub pending_violation: Option<SubmartingaleViolation>,
    pub pending_warnings: Vec<String>,
    pub previous_estimator: Option<Estimator>,
    pub previous_observations: BTreeMap<Estimator, Observation>,
    pub screening_first: bool,
}

impl SessionState {
    pub fn new(problem: ProblemScheme, policy: PolicyState, bank: CheckpointBank) -> Self {
        SessionState {
            n: 0,
            problem,
            policy,
            bank,
            register: RegisterState::default(),
            diagnostic: None,
            novelty_warning: false,
            pending_violation: None,
            pending_warnings: Vec::new(),
            previous_estimator: None,
            previous_observations: BTreeMap::new(),
            screening_first: false,
        }
    }
}

struct Gate<'a> {
    cfg: &'a SessionConfig,
    provider: &'a dyn EmbeddingProvider,
}

impl Gate<'_> {
    /// None when the checkpoint is switched off entirely.
    fn check(
        &self,
        bank: &mut CheckpointBank,
        events: &mut Vec<CheckpointResult>,
        id: CheckpointId,
        up: &str,
        down: &str,
        attempt: u32,
    ) -> Option<Verdict> {
        if !self.cfg.checkpoints.enabled(id) {
            return None;
        }
        let mut r = bank.check(&self.cfg.checkpoints, id, up, down, self.provider);
        r.retry_count = attempt;
        let v = r.verdict;
        events.push(r);
        Some(v)
    }
}

fn blocked(v: Option<Verdict>) -> bool {
    v == Some(Verdict::Block)
}

fn expect_strategy(msg: AgentMessage) -> Result<StrategyReport, PipelineError> {
    match msg.payload {
        Payload::Strategy(r) => Ok(*r),
        other => Err(PipelineError::Config(format!("strategist returned {:?}", other.kind()))),
    }
}

fn expect_study(msg: &AgentMessage) -> Result<&StudyReport, PipelineError> {
    match &msg.payload {
        Payload::Study(s) => Ok(s),
        other => Err(PipelineError::Config(format!("study agent returned {:?}", other.kind()))),
    }
}

fn apply_drift(
    cfg: &SessionConfig,
    site: DriftSite,
    msg: &AgentMessage,
    n: u32,
    events: &mut Vec<DriftEvent>,
) -> AgentMessage {
    let mut out = msg.clone();
    for (i, spec) in cfg.drift.iter().enumerate().filter(|(_, d)| d.site == site) {
        let (next, ev) = crate::agents::inject_drift(&out, spec, n, derive_tagged(cfg.seed, "drift", &[n as u64, i as u64]));
        out = next;
        events.extend(ev);
    }
    out
}

/// One pass of the loop body. Checkpoint events are pushed in boundary order.
pub fn run_iteration(
    cfg: &SessionConfig,
    deps: &SessionDeps<'_>,
    st: &mut SessionState,
) -> Result<IterationRecord, PipelineError> {
    st.n += 1;
    let n = st.n;
    let gate = Gate { cfg, provider: deps.provider };
    let budget = cfg.checkpoints.retry_budget;
    let mut events = Vec::new();
    let mut drift_events = Vec::new();
    let notes = StrategistNotes {
        violation: st.pending_violation.take(),
        warnings: std::mem::take(&mut st.pending_warnings),
        novelty_warning: st.novelty_warning,
    };
    let problem_text = render::problem_text(&st.problem);
    let ctx = |attempt: u32, policy: &PolicyState| -> AgentContext<'_> {
        let _ = policy;
        AgentContext {
            space: deps.space,
            bandit: &cfg.bandit,
            policy: None,
            catalog: deps.env.catalog(),
            iteration: n,
            attempt,
        }
    };

    // Policy: Strategist, Critic and CP2.
    let mut excluded = Vec::new();
    let mut accepted: Option<(AgentMessage, StrategyReport)> = None;
    let mut last: Option<StrategyReport> = None;
    for attempt in 0..=budget {
        let si = StrategistInput {
            n,
            attempt,
            problem: st.problem.clone(),
            diagnostic: st.diagnostic.clone(),
            novelty_warning: notes.novelty_warning,
            violation: notes.violation.clone(),
            warnings: notes.warnings.clone(),
            excluded: excluded.clone(),
            screening_first: st.screening_first,
        };
        let actx = AgentContext { policy: Some(&st.policy), ..ctx(attempt, &st.policy) };
        let msg = run_agent(
            AgentRole::Strategist,
            &AgentMessage::new(AgentRole::Strategist, Payload::StrategistInput(Box::new(si))),
            &cfg.script,
            &actx,
            derive_tagged(cfg.seed, "strategist", &[n as u64, attempt as u64]),
        )?;
        let report = expect_strategy(msg.clone())?;
        let critic = run_agent(AgentRole::Critic, &msg, &cfg.script, &actx, 0)?;
        let approved = matches!(critic.payload, Payload::Verdict(InspectorVerdict::Approved));
        let cp2 = gate.check(&mut st.bank, &mut events, CheckpointId::CP2, &problem_text, msg.text(), attempt);
        last = Some(report.clone());
        if approved && !blocked(cp2) {
            accepted = Some((msg, report));
            break;
        }
        excluded.push(report.method_scheme.estimator);
    }
    let Some((strategy_msg, report)) = accepted else {
        let report = last.expect("at least one strategist attempt");
        return Ok(fail_iteration(cfg, deps, st, n, &report, events, drift_events, notes, "strategy rejected after retries"));
    };
    let action = report.decision.action.clone();
    let policy_ms = report.decision.method_scheme.clone();
    let strategy = render::strategy_text(&policy_ms);

    // CP7 compares method identities of consecutive actions.
    if let Some(prev) = st.previous_estimator {
        let cp7 = gate.check(
            &mut st.bank,
            &mut events,
            CheckpointId::CP7,
            &render::method_signature(policy_ms.estimator),
            &render::method_signature(prev),
            0,
        );
        st.novelty_warning = cp7 == Some(Verdict::Warn);
        if st.novelty_warning {
            st.pending_warnings.push(format!("CP7: {} repeats the previous method", policy_ms.estimator));
        }
    }
    st.previous_estimator = Some(policy_ms.estimator);

    // Implementation: Study Agent with CP3 and CP4.
    let actx = ctx(0, &st.policy);
    let mut study_msg = None;
    for attempt in 0..=budget {
        let input = if attempt == 0 { apply_drift(cfg, DriftSite::Study, &strategy_msg, n, &mut drift_events) } else { strategy_msg.clone() };
        let msg = run_agent(AgentRole::StudyAgent, &input, &cfg.script, &AgentContext { attempt, ..actx }, 0)?;
        let study = expect_study(&msg)?;
        let template = study.template.clone().unwrap_or_else(|| format!("no template for {}", study.strategy.method_scheme.estimator));
        let cp3 = gate.check(&mut st.bank, &mut events, CheckpointId::CP3, &strategy, &template, attempt);
        if cp3 == Some(Verdict::Warn) {
            st.pending_warnings.push("CP3: study template diverges from the strategy".into());
        }
        let cp4 = gate.check(&mut st.bank, &mut events, CheckpointId::CP4, &strategy, &study.cell_map, attempt);
        if !blocked(cp4) {
            study_msg = Some(msg);
            break;
        }
    }
    let Some(study_msg) = study_msg else {
        return Ok(fail_iteration(cfg, deps, st, n, &report, events, drift_events, notes, "cell map rejected after retries"));
    };

    // Refactor Agent and CP5. A CP5 block calls in the Inspector, which
    // either certifies the plan against the strategy or has it rewritten
    // from the undrifted study.
    let clean_study = run_agent(AgentRole::StudyAgent, &strategy_msg, &cfg.script, &actx, 0)?;
    let mut plan = None;
    let mut inspector_rejections = 0;
    let mut inspector_findings = Vec::new();
    for attempt in 0..=budget {
        let input = if attempt == 0 { apply_drift(cfg, DriftSite::Refactor, &study_msg, n, &mut drift_events) } else { clean_study.clone() };
        let actx = AgentContext { attempt, ..actx };
        let out = run_agent(AgentRole::RefactorAgent, &input, &cfg.script, &actx, derive_tagged(cfg.seed, "plan", &[n as u64]))?;
        let Payload::Plan(candidate) = out.payload else {
            return Err(PipelineError::Config("refactor agent returned no plan".into()));
        };
        let cp5 = gate.check(&mut st.bank, &mut events, CheckpointId::CP5, &strategy, &render::plan_code(&candidate), attempt);
        if !blocked(cp5) {
            plan = Some(candidate);
            break;
        }
        if cfg.inspector {
            let msg = AgentMessage::new(
                AgentRole::Inspector,
                Payload::Inspection { plan: candidate.clone(), scheme: Box::new(policy_ms.clone()) },
            );
            match run_agent(AgentRole::Inspector, &msg, &cfg.script, &actx, 0)?.payload {
                Payload::Verdict(InspectorVerdict::Approved) => {
                    plan = Some(candidate);
                    break;
                }
                Payload::Verdict(InspectorVerdict::Rejected { reasons }) => {
                    inspector_rejections += 1;
                    inspector_findings.extend(reasons);
                }
                _ => inspector_rejections += 1,
            }
        }
    }
    let Some(mut plan) = plan else {
        let mut rec = fail_iteration(cfg, deps, st, n, &report, events, drift_events, notes, "plan rejected after retries");
        rec.data.inspector_rejections = inspector_rejections;
        rec.data.inspector_findings = inspector_findings;
        return Ok(rec);
    };

    // Execution with the Debugger loop.
    let mut debug_fixes = 0;
    let (result, error) = loop {
        match deps.env.execute(&plan) {
            Ok(r) => break (Some(r), None),
            Err(e) if debug_fixes < cfg.max_debug_retries => {
                let msg = AgentMessage::new(
                    AgentRole::Debugger,
                    Payload::Failure { plan: plan.clone(), error: e.clone(), scheme: Box::new(policy_ms.clone()) },
                );
                let out = run_agent(AgentRole::Debugger, &msg, &cfg.script, &actx, 0)?;
                match out.payload {
                    Payload::Fix(FixOutcome::Patch(fix)) => {
                        plan = crate::agents::apply_fix(&plan, &fix);
                        debug_fixes += 1;
                    }
                    _ => break (None, Some(e)),
                }
            }
            Err(e) => break (None, Some(e)),
        }
    };
    let mut obs = Observation {
        status: Some(if result.is_some() { ExecutionStatus::Succeeded } else { ExecutionStatus::Failed }),
        intended: policy_ms.estimator,
        executed: Some(plan.estimator),
        n_samples: plan.n_samples(),
        result,
        error,
        read_attributes: plan.output_bindings.clone(),
    };

    // Evaluation: reward preview, Advisor and CP6, final reward.
    let x = st.problem.context.clone();
    let prev = st.previous_observations.get(&policy_ms.estimator).cloned();
    let env_seed = derive_tagged(cfg.seed, "env", &[n as u64]);
    let score = |obs: &Observation| {
        deps.env.evaluate(&EvalRequest {
            observation: obs,
            method_scheme: &policy_ms,
            context: &x,
            previous: prev.as_ref(),
            model_id: &st.problem.model_id,
            n,
            seed: env_seed,
        })
    };
    let preview = score(&obs)?;
    let advisor_input = AdvisorInput {
        observation: obs.clone(),
        method_scheme: policy_ms.clone(),
        reward: preview,
        n_budget: x.n_budget,
        r_threshold: cfg.r_threshold,
    };
    let advisor_msg = AgentMessage::new(AgentRole::Advisor, Payload::AdvisorInput(Box::new(advisor_input.clone())));
    let mut advisor_report = run_agent(AgentRole::Advisor, &advisor_msg, &cfg.script, &actx, 0)?.text().to_string();
    let cp6 = gate.check(&mut st.bank, &mut events, CheckpointId::CP6, &render::observation_text(&obs), &advisor_report, 0);
    if cp6 == Some(Verdict::Warn) {
        advisor_report = crate::agents::advisor_report(&advisor_input);
        st.pending_warnings.push("CP6: advisor report re-grounded on the observation".into());
    }
    if let Some(r) = obs.result.as_mut() {
        for w in r.warnings.iter_mut() {
            w.addressed = advisor_report.contains(&w.code);
        }
    }
    let reward = score(&obs)?;
    let diagnostic = build_diagnostic_scheme_with(&advisor_report, &obs, &reward, cfg.r_threshold);

    // Register and policy update.
    let phi = encode_features(deps.space, &x, &action);
    let signal = if diagnostic.block_action { 0.0 } else { reward.total };
    update(&mut st.policy, &phi, signal)?;
    st.previous_observations.insert(policy_ms.estimator, obs.clone());
    let rec = IterationRecord::new(RecordData {
        n,
        action,
        method_scheme: policy_ms,
        plan: Some(plan),
        observation: Some(obs),
        reward,
        checkpoint_events: events,
        drift_events,
        diagnostic: diagnostic.clone(),
        strategist_notes: notes,
        advisor_report: Some(advisor_report),
        inspector_rejections,
        inspector_findings,
        debug_fixes,
        failure: None,
    });
    st.pending_violation = st.register.append(rec.clone());
    st.diagnostic = Some(diagnostic);
    Ok(rec)
}

#[allow(clippy::too_many_arguments)]
fn fail_iteration(
    _cfg: &SessionConfig,
    deps: &SessionDeps<'_>,
    st: &mut SessionState,
    n: u32,
    report: &StrategyReport,
    events: Vec<CheckpointResult>,
    drift_events: Vec<DriftEvent>,
    notes: StrategistNotes,
    why: &str,
) -> IterationRecord {
    let action = report.decision.action.clone();
    let ms = report.decision.method_scheme.clone();
    let diagnostic = DiagnosticScheme::failed_iteration(Some(ms.estimator), why);
    let phi = encode_features(deps.space, &st.problem.context, &action);
    // A zero reward is always valid, so the update cannot fail on the value.
    let _ = update(&mut st.policy, &phi, 0.0);
    let rec = IterationRecord::new(RecordData {
        n,
        action,
        method_scheme: ms,
        plan: None,
        observation: None,
        reward: RewardBreakdown::zero(why),
        checkpoint_events: events,
        drift_events,
        diagnostic: diagnostic.clone(),
        strategist_notes: notes,
        advisor_report: None,
        inspector_rejections: 0,
        inspector_findings: Vec::new(),
        debug_fixes: 0,
        failure: Some(why.to_string()),
    });
    st.pending_violation = st.register.append(rec.clone());
    st.diagnostic = Some(diagnostic);
    rec
}

fn session_id(cfg: &SessionConfig, desc: &ProblemDescription) -> String {
    cfg.session_id.clone().unwrap_or_else(|| format!("{}-seed{}", desc.model_id, cfg.seed))
}

/// Group A once, CP0, then the loop until convergence or `n_max`.
pub fn run_session(
    cfg: &SessionConfig,
    desc: &ProblemDescription,
    deps: SessionDeps<'_>,
) -> Result<SessionOutput, PipelineError> {
    cfg.validate()?;
    let gate = Gate { cfg, provider: deps.provider };
    let mut bank = CheckpointBank::new(&cfg.checkpoints, deps.null_floor);
    let mut group_a = Vec::new();
    let ctx = AgentContext {
        space: deps.space,
        bandit: &cfg.bandit,
        policy: None,
        catalog: deps.env.catalog(),
        iteration: 0,
        attempt: 0,
    };
    let fresh_policy = |task| PolicyState::new(deps.space, task, &cfg.bandit);

    // Coordinator with CP1 reprompts.
    let input = AgentMessage::new(AgentRole::Coordinator, Payload::Description(desc.clone()));
    let mut problem = None;
    let mut last = None;
    for attempt in 0..=cfg.checkpoints.retry_budget {
        let out = run_agent(AgentRole::Coordinator, &input, &cfg.script, &AgentContext { attempt, ..ctx }, 0)?;
        let Payload::Problem(ps) = out.payload.clone() else {
            return Err(PipelineError::Config("coordinator returned no problem scheme".into()));
        };
        let request = if desc.request.trim().is_empty() { render::default_request(&ps) } else { desc.request.clone() };
        let v = gate.check(&mut bank, &mut group_a, CheckpointId::CP1, &request, out.text(), attempt);
        last = Some(ps.clone());
        if !blocked(v) {
            problem = Some(ps);
            break;
        }
    }
    let aborted = |ps: ProblemScheme, group_a: Vec<CheckpointResult>, why: String| {
        let policy = deps.policy.clone().unwrap_or_else(|| fresh_policy(ps.context.task));
        SessionOutput {
            trace: SessionTrace {
                session_id: session_id(cfg, desc),
                config_digest: cfg.digest(),
                provider_id: deps.provider.id(),
                environment_id: deps.env.id(),
                null_floor: deps.null_floor,
                config: cfg.clone(),
                problem: ps,
                group_a_events: group_a,
                cp0: None,
                iterations: Vec::new(),
                outcome: Outcome::Aborted,
                best_reward: 0.0,
                iterations_to_converge: None,
                submartingale_flags: Vec::new(),
                abort_reason: Some(why),
            },
            policy,
        }
    };
    let Some(ps) = problem else {
        let ps = last.expect("coordinator ran");
        return Ok(aborted(ps, group_a, "problem scheme rejected by CP1 after retries".into()));
    };
    let mut ps = ps;
    for role in [AgentRole::Gatekeeper, AgentRole::ModelTranslator] {
        match run_agent(role, &AgentMessage::new(role, Payload::Problem(ps.clone())), &cfg.script, &ctx, 0) {
            Ok(AgentMessage { payload: Payload::Problem(next), .. }) => ps = next,
            Ok(_) => return Ok(aborted(ps, group_a, format!("{role:?} returned no problem scheme"))),
            Err(e) => return Ok(aborted(ps, group_a, format!("{role:?}: {e}"))),
        }
    }

    // CP0 and the warm start.
    let task = ps.context.task;
    let persisted = deps.policy.clone().filter(|p| p.task == task && p.posterior.dim() == fresh_policy(task).posterior.dim());
    let had_policy = persisted.is_some();
    let mut policy = persisted.unwrap_or_else(|| fresh_policy(task));
    let cp0 = cfg.checkpoints.enabled(CheckpointId::CP0).then(|| {
        evaluate_cp0(&ps, deps.archive, &cfg.checkpoints, deps.space.config().screening_dim_threshold)
    });
    match &cp0 {
        Some(c) => {
            policy.begin_session(c.exploration_mode);
            if let (Some(entry), false) = (&c.warm_start, had_policy) {
                if c.match_kind != MatchKind::None {
                    warm_start(&mut policy, deps.space, &ps.context, entry, c.match_kind, &cfg.bandit)?;
                }
            }
        }
        None => policy.begin_session(crate::checkpoints::ExplorationMode::Neutral),
    }

    let mut st = SessionState::new(ps, policy, bank);
    st.screening_first = cp0.as_ref().is_some_and(|c| c.screening_first);
    let mut converged_at = None;
    for _ in 0..cfg.n_max {
        let rec = run_iteration(cfg, &deps, &mut st)?;
        if rec.reward.total >= cfg.r_threshold && converged_at.is_none() {
            converged_at = Some(rec.n);
            if cfg.stop_on_convergence {
                break;
            }
        }
    }
    let iterations: Vec<IterationRecord> = st.register.history().to_vec();
    let best_reward = iterations.iter().map(|r| r.reward.total).fold(0.0, f64::max);
    let trace = SessionTrace {
        session_id: session_id(cfg, desc),
        config_digest: cfg.digest(),
        provider_id: deps.provider.id(),
        environment_id: deps.env.id(),
        null_floor: deps.null_floor,
        config: cfg.clone(),
        problem: st.problem.clone(),
        group_a_events: group_a,
        cp0,
        outcome: if converged_at.is_some() { Outcome::Converged } else { Outcome::BudgetExhausted },
        best_reward,
        iterations_to_converge: converged_at,
        submartingale_flags: st.register.submartingale_flags().to_vec(),
        abort_reason: None,
        iterations,
    };
    Ok(SessionOutput { trace, policy: st.policy })
}

/// Runs one session against `archive` and records it there. With
/// `persist_policy` the archived policy snapshot seeds the session and the
/// final policy replaces it.
pub fn run_archived_session(
    cfg: &SessionConfig,
    desc: &ProblemDescription,
    space: &ActionSpace,
    env: &dyn Environment,
    provider: &dyn EmbeddingProvider,
    null_floor: f64,
    archive: &mut Archive,
) -> Result<SessionOutput, Box<dyn std::error::Error + Send + Sync>> {
    let policy = if cfg.persist_policy {
        archive.policy.as_ref().map(PolicyState::from_snapshot).transpose()?
    } else {
        None
    };
    let out = run_session(cfg, desc, SessionDeps { space, env, provider, null_floor, archive, policy })?;
    if out.trace.outcome != Outcome::Aborted && !out.trace.iterations.is_empty() {
        archive.record_session(&out.trace, cfg.persist_policy.then(|| out.policy.snapshot()))?;
    }
    Ok(out)
}

/// `run_archived_session` on the archive file at `cfg.archive_path`, or on
/// a throwaway in-memory archive when there is none.
pub fn run_persistent_session(
    cfg: &SessionConfig,
    desc: &ProblemDescription,
    space: &ActionSpace,
    env: &dyn Environment,
    provider: &dyn EmbeddingProvider,
    null_floor: f64,
) -> Result<SessionOutput, Box<dyn std::error::Error + Send + Sync>> {
    let mut archive = match &cfg.archive_path {
        Some(p) => Archive::load(p)?,
        None => Archive::in_memory(),
    };
    run_archived_session(cfg, desc, space, env, provider, null_floor, &mut archive)
}
