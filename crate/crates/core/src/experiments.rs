//! Experiment configs and drivers: the checkpoint ablation, the CP5
//! method swap, G-function numerics, multi-session runs with CP0, and the
//! empowerment and regret harnesses.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_space::{ActionSpace, ActionSpaceConfig, ActionSpaceError, Dimension, Estimator};
use crate::agents::{AgentRole, DriftSpec, ExecutionPlan, ScriptEntry, ScriptTable};
use crate::archive::Archive;
use crate::checkpoints::{CheckpointConfig, CheckpointId, CheckpointOverride, ExplorationMode, MatchKind};
use crate::embedding::HashingEmbedder;
use crate::estimators::{benchmark_catalog, execute_plan, ExecutionError, ModelCatalog, SAResult};
use crate::metrics::{estimate_empowerment, EmpowermentEstimate, MetricsError, OutcomeBinning};
use crate::pipeline::{
    null_floor, run_ablation_suite, run_archived_session, AblationCondition, AblationRun, Environment,
    NumericEnvironment, Outcome, PipelineError, SessionConfig, SessionTrace, SimulatedEnvironment,
};
use crate::schemes::ProblemDescription;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    ActionSpace(#[from] ActionSpaceError),
    #[error(transparent)]
    Execution(#[from] ExecutionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Session(String),
}

/// Which backend executes plans and scores observations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentSpec {
    #[default]
    Numeric,
    Simulated(SimulatedEnvironment),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub model_id: String,
    pub n_budget: u64,
    pub epsilon: f64,
    #[serde(default)]
    pub request: String,
}

impl ProblemSpec {
    pub fn new(model_id: &str, n_budget: u64, epsilon: f64) -> Self {
        ProblemSpec { model_id: model_id.into(), n_budget, epsilon, request: String::new() }
    }

    pub fn describe(&self, catalog: &ModelCatalog) -> Result<ProblemDescription, ExperimentError> {
        let m = catalog.get(&self.model_id).map_err(|_| ExperimentError::Config(format!("unknown problem id {}", self.model_id)))?;
        Ok(m.describe(self.n_budget, self.epsilon, &self.request))
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub problem: ProblemSpec,
    /// Problems of consecutive sessions; the single problem when empty.
    #[serde(default)]
    pub sessions: Vec<ProblemSpec>,
    #[serde(default)]
    pub session: SessionConfig,
    #[serde(default)]
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub conditions: Vec<AblationCondition>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Archive file that carries both the session entries and the policy snapshot.
    #[serde(default)]
    pub policy_path: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub null_seed: u64,
}

impl ExperimentConfig {
    pub fn new(experiment: &str, problem: ProblemSpec) -> Self {
        ExperimentConfig {
            experiment: experiment.into(),
            problem,
            sessions: Vec::new(),
            session: SessionConfig::default(),
            environment: EnvironmentSpec::Numeric,
            conditions: Vec::new(),
            seeds: default_seeds(),
            policy_path: None,
            output_dir: None,
            null_seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.seeds.is_empty() {
            return Err(ExperimentError::Config("seeds must be non-empty".into()));
        }
        self.session.validate()?;
        let catalog = benchmark_catalog();
        for p in std::iter::once(&self.problem).chain(&self.sessions) {
            p.describe(&catalog)?;
        }
        for c in &self.conditions {
            for d in &c.drift {
                d.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
            }
        }
        ActionSpace::new(self.session.action_space.clone())?;
        Ok(())
    }

    /// Replaces the seed list and the session seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = vec![seed];
        self.session.seed = seed;
        self
    }

    pub fn session_problems(&self) -> Vec<ProblemSpec> {
        if self.sessions.is_empty() {
            vec![self.problem.clone()]
        } else {
            self.sessions.clone()
        }
    }
}

/// Read-only collaborators built once per experiment.
pub struct Runtime {
    pub catalog: ModelCatalog,
    pub space: ActionSpace,
    pub env: Box<dyn Environment>,
    pub provider: HashingEmbedder,
    pub null_floor: f64,
}

impl Runtime {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let catalog = benchmark_catalog();
        let space = ActionSpace::new(cfg.session.action_space.clone())?;
        let env: Box<dyn Environment> = match &cfg.environment {
            EnvironmentSpec::Numeric => {
                let mut e = NumericEnvironment::new(catalog.clone());
                e.reward = cfg.session.reward.clone();
                Box::new(e)
            }
            EnvironmentSpec::Simulated(s) => Box::new(s.clone()),
        };
        let provider = HashingEmbedder::default();
        let null_floor = null_floor(&provider, &cfg.session.checkpoints, cfg.null_seed);
        Ok(Runtime { catalog, space, env, provider, null_floor })
    }

    pub fn session(&self, cfg: &SessionConfig, desc: &ProblemDescription, archive: &mut Archive) -> Result<SessionTrace, ExperimentError> {
        run_archived_session(cfg, desc, &self.space, self.env.as_ref(), &self.provider, self.null_floor, archive)
            .map(|o| o.trace)
            .map_err(|e| ExperimentError::Session(e.to_string()))
    }
}

/// One session on the configured problem with the configured seed. The
/// archive is `session.archive_path` when set.
pub fn run_single(cfg: &ExperimentConfig) -> Result<SessionTrace, ExperimentError> {
    let rt = Runtime::new(cfg)?;
    let desc = cfg.problem.describe(&rt.catalog)?;
    let mut archive = match &cfg.session.archive_path {
        Some(p) => Archive::load(p).map_err(|e| ExperimentError::Session(e.to_string()))?,
        None => Archive::in_memory(),
    };
    rt.session(&cfg.session, &desc, &mut archive)
}

pub fn run_ablation(cfg: &ExperimentConfig) -> Result<AblationRun, ExperimentError> {
    let rt = Runtime::new(cfg)?;
    let desc = cfg.problem.describe(&rt.catalog)?;
    Ok(run_ablation_suite(&cfg.session, &desc, &cfg.conditions, &cfg.seeds, &rt.space, rt.env.as_ref(), &rt.provider, rt.null_floor)?)
}

/// One row of the multi-session table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub seed: u64,
    pub session: usize,
    pub session_id: String,
    pub model_id: String,
    /// Estimators in iteration order, `;`-separated.
    pub estimators: String,
    pub rewards: String,
    pub best_reward: f64,
    pub iterations_to_best: Option<u32>,
    pub cp0_similarity: Option<f64>,
    pub cp0_match: Option<MatchKind>,
    pub exploration_mode: Option<ExplorationMode>,
    pub screening_first: bool,
    pub outcome: Outcome,
}

impl SessionSummary {
    pub fn from_trace(seed: u64, session: usize, t: &SessionTrace) -> Self {
        let est: Vec<String> = t.iterations.iter().map(|r| r.method_scheme.estimator.to_string()).collect();
        let rewards: Vec<String> = t.iterations.iter().map(|r| format!("{:.2}", r.reward.total)).collect();
        SessionSummary {
            seed,
            session,
            session_id: t.session_id.clone(),
            model_id: t.problem.model_id.clone(),
            estimators: est.join(";"),
            rewards: rewards.join(";"),
            best_reward: t.best_reward,
            iterations_to_best: t.iterations_to_best(),
            cp0_similarity: t.cp0.as_ref().map(|c| c.similarity),
            cp0_match: t.cp0.as_ref().map(|c| c.match_kind),
            exploration_mode: t.cp0.as_ref().map(|c| c.exploration_mode),
            screening_first: t.cp0.as_ref().is_some_and(|c| c.screening_first),
            outcome: t.outcome,
        }
    }
}

/// Consecutive sessions sharing `archive` (and the policy in it when
/// `persist_policy` is on).
pub fn run_sequence(
    rt: &Runtime,
    cfg: &ExperimentConfig,
    seed: u64,
    archive: &mut Archive,
) -> Result<Vec<(SessionSummary, SessionTrace)>, ExperimentError> {
    let mut out = Vec::new();
    for (i, p) in cfg.session_problems().iter().enumerate() {
        let mut s = cfg.session.clone();
        s.seed = crate::seeds::derive_tagged(seed, "session", &[i as u64]);
        s.session_id = Some(format!("{}-seed{seed}-session{}", cfg.experiment, i + 1));
        let trace = rt.session(&s, &p.describe(&rt.catalog)?, archive)?;
        out.push((SessionSummary::from_trace(seed, i + 1, &trace), trace));
    }
    Ok(out)
}

/// Medians across seeds of the per-session best reward and iterations to best.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSessionReport {
    pub seeds: usize,
    pub median_best_reward: Vec<f64>,
    pub median_iterations_to_best: Vec<f64>,
    pub per_seed: Vec<Vec<SessionSummary>>,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Independent session sequences per seed, each on a fresh in-memory archive.
pub fn cross_session(cfg: &ExperimentConfig) -> Result<CrossSessionReport, ExperimentError> {
    let rt = Runtime::new(cfg)?;
    let per_seed: Vec<Vec<SessionSummary>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut archive = Archive::in_memory();
            run_sequence(&rt, cfg, seed, &mut archive).map(|v| v.into_iter().map(|(s, _)| s).collect())
        })
        .collect::<Result<_, _>>()?;
    let (median_best_reward, median_iterations_to_best) = session_medians(&per_seed);
    Ok(CrossSessionReport { seeds: per_seed.len(), median_best_reward, median_iterations_to_best, per_seed })
}

/// Per-session medians across seeds of the best reward and iterations to
/// best (infinite when a session never executed).
pub fn session_medians(per_seed: &[Vec<SessionSummary>]) -> (Vec<f64>, Vec<f64>) {
    let k = per_seed.iter().map(Vec::len).min().unwrap_or(0);
    let column = |f: &dyn Fn(&SessionSummary) -> f64| -> Vec<f64> {
        (0..k).map(|i| median(&per_seed.iter().map(|s| f(&s[i])).collect::<Vec<_>>())).collect()
    };
    (
        column(&|s| s.best_reward),
        column(&|s| s.iterations_to_best.map(f64::from).unwrap_or(f64::INFINITY)),
    )
}

/// MI of every condition's pooled traces.
pub fn empowerment(cfg: &ExperimentConfig) -> Result<Vec<(String, EmpowermentEstimate)>, ExperimentError> {
    let run = run_ablation(cfg)?;
    cfg.conditions
        .iter()
        .map(|c| {
            let traces: Vec<SessionTrace> = run
                .rows
                .iter()
                .zip(&run.traces)
                .filter(|(r, _)| r.condition == c.name)
                .map(|(_, t)| t.clone())
                .collect();
            Ok((c.name.clone(), estimate_empowerment(&traces, OutcomeBinning::default())?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub seeds: usize,
    /// Mean over seeds of the expected per-step regret at each iteration.
    pub per_step: Vec<f64>,
    pub early_mean: f64,
    pub late_mean: f64,
}

/// Expected per-step regret from the environment's mean table, so that
/// reward noise does not enter the curve.
pub fn regret(cfg: &ExperimentConfig) -> Result<RegretReport, ExperimentError> {
    let EnvironmentSpec::Simulated(sim) = &cfg.environment else {
        return Err(ExperimentError::Config("regret needs a simulated environment".into()));
    };
    let rt = Runtime::new(cfg)?;
    let desc = cfg.problem.describe(&rt.catalog)?;
    let arms = rt.space.estimators_in_catalog(crate::action_space::Task::SA);
    let best = arms.iter().map(|e| sim.mean_for(e.as_str(), "Fixed_N")).fold(f64::NEG_INFINITY, f64::max);
    let curves: Vec<Vec<f64>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut s = cfg.session.clone();
            s.seed = seed;
            let t = rt.session(&s, &desc, &mut Archive::in_memory())?;
            Ok(t.iterations
                .iter()
                .map(|r| best - sim.mean_for(r.method_scheme.estimator.as_str(), r.action.dim(2)))
                .collect())
        })
        .collect::<Result<_, ExperimentError>>()?;
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    let per_step: Vec<f64> = (0..len).map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / curves.len() as f64).collect();
    let window = |a: usize, b: usize| -> f64 {
        let s = &per_step[a.min(len)..b.min(len)];
        if s.is_empty() {
            f64::NAN
        } else {
            s.iter().sum::<f64>() / s.len() as f64
        }
    };
    Ok(RegretReport { seeds: curves.len(), early_mean: window(0, 20), late_mean: window(80, 100), per_step })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GFunctionReport {
    pub a: Vec<f64>,
    pub sobol_evaluations: u64,
    pub sobol_s1: Vec<f64>,
    pub morris_evaluations: u64,
    pub mu_star: Vec<f64>,
    /// Input indices (0-based) sorted by descending mu*.
    pub morris_ranking: Vec<usize>,
}

fn plan(e: Estimator, model: &str, n: u64, bindings: &[&str], seed: u64) -> ExecutionPlan {
    let mut hp = BTreeMap::from([("n_samples".to_string(), n)]);
    if e == Estimator::Morris {
        hp.insert("levels".into(), 4);
    }
    ExecutionPlan {
        estimator: e,
        hyperparams: hp,
        output_bindings: bindings.iter().map(|s| s.to_string()).collect(),
        model_id: model.into(),
        seed,
        sampling: "MonteCarlo".into(),
        output_treatment: "Scalar".into(),
    }
}

/// Sobol pick-freeze within `max_evaluations` and Morris with 200
/// trajectories on the 15-d G-function.
pub fn g_function_numerics(max_evaluations: u64, seed: u64) -> Result<GFunctionReport, ExecutionError> {
    let catalog = benchmark_catalog();
    let d = crate::estimators::G15_A.len() as u64;
    let n = max_evaluations / (d + 2);
    let sobol: SAResult = execute_plan(&plan(Estimator::Sobol, "g_function_15", n, &["first_order_indices"], seed), &catalog)?;
    let morris: SAResult = execute_plan(&plan(Estimator::Morris, "g_function_15", 200, &["mu_star"], seed), &catalog)?;
    let mu = morris.mu_star.clone().unwrap_or_default();
    let mut ranking: Vec<usize> = (0..mu.len()).collect();
    ranking.sort_by(|a, b| mu[*b].total_cmp(&mu[*a]));
    Ok(GFunctionReport {
        a: crate::estimators::G15_A.to_vec(),
        sobol_evaluations: sobol.evaluations_used,
        sobol_s1: sobol.s1.clone().unwrap_or_default(),
        morris_evaluations: morris.evaluations_used,
        mu_star: mu,
        morris_ranking: ranking,
    })
}

fn swap_pool(pool: &[Estimator], p: f64) -> DriftSpec {
    let mut d = DriftSpec::method_swap(pool[0], p);
    d.replacement_value = None;
    d.replacement_pool = pool.to_vec();
    d
}

fn ablated() -> CheckpointConfig {
    CheckpointConfig { ablate_all: true, ..Default::default() }
}

/// Structural model of the ablation study: drift with probability 2/3 to
/// a rank or screening estimator, with and without checkpoints.
pub fn eq3_ablation() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new("eq3_ablation", ProblemSpec::new("structural_eq3", 20_000, 0.05));
    let drift = vec![swap_pool(&[Estimator::Chatterjee, Estimator::Morris], 2.0 / 3.0)];
    cfg.conditions = vec![
        AblationCondition { name: "no_cp".into(), checkpoints: ablated(), inspector: None, drift: drift.clone() },
        AblationCondition { name: "cp".into(), checkpoints: CheckpointConfig::default(), inspector: None, drift },
    ];
    cfg.seeds = vec![0, 1, 2];
    cfg
}

/// Sobol pinned at iteration 1 and swapped to Morris before the Refactor
/// Agent, with CP5 ablated or active.
pub fn cp5_method_swap() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new("cp5_method_swap", ProblemSpec::new("g_function_8", 15_000, 0.1));
    cfg.session.script = ScriptTable {
        id: "cp5_pin_sobol".into(),
        entries: vec![ScriptEntry {
            role: AgentRole::Strategist,
            key: "iteration:1".into(),
            text: None,
            estimator: Some(Estimator::Sobol),
            action: None,
        }],
        strict_roles: Vec::new(),
    };
    let mut drift = DriftSpec::method_swap(Estimator::Morris, 1.0);
    drift.source_filter = Some(Estimator::Sobol);
    drift.activation_iteration = Some(1);
    cfg.conditions = vec![
        AblationCondition {
            name: "ablated".into(),
            checkpoints: CheckpointConfig::default().with_theta(CheckpointId::CP5, -1.0),
            inspector: None,
            drift: vec![drift.clone()],
        },
        AblationCondition { name: "full".into(), checkpoints: CheckpointConfig::default(), inspector: None, drift: vec![drift] },
    ];
    cfg
}

/// A two-arm SA space: one sampling, budget and output choice.
pub fn two_arm_space(a: Estimator, b: Estimator) -> ActionSpaceConfig {
    let mut s = ActionSpaceConfig::default();
    let dim = |name: &str, v: &[&str]| Dimension { name: name.into(), values: v.iter().map(|x| x.to_string()).collect() };
    s.sa_dimensions = vec![
        dim("sampling", &["MonteCarlo"]),
        dim("estimator", &[a.as_str(), b.as_str()]),
        dim("budget_allocation", &["Fixed_N"]),
        dim("output_treatment", &["Scalar"]),
    ];
    s
}

fn two_arm_env(hi: f64, lo: f64, sd: f64) -> SimulatedEnvironment {
    SimulatedEnvironment {
        rewards: BTreeMap::from([("Sobol".to_string(), hi), ("Chatterjee".to_string(), lo)]),
        noise_sd: sd,
        ..Default::default()
    }
}

/// 500 iterations on arms with means 90/40: checkpoints on, or ablated
/// with every plan's estimator replaced uniformly at random.
pub fn empowerment_experiment() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new("empowerment", ProblemSpec::new("structural_eq3", 20_000, 0.05));
    cfg.session.n_max = 500;
    cfg.session.stop_on_convergence = false;
    cfg.session.action_space = two_arm_space(Estimator::Sobol, Estimator::Chatterjee);
    cfg.environment = EnvironmentSpec::Simulated(two_arm_env(90.0, 40.0, 5.0));
    let mut drift = swap_pool(&[Estimator::Sobol, Estimator::Chatterjee], 1.0);
    drift.exclude_current = false;
    cfg.conditions = vec![
        AblationCondition { name: "checkpoints".into(), checkpoints: CheckpointConfig::default(), inspector: None, drift: Vec::new() },
        AblationCondition { name: "full_drift".into(), checkpoints: ablated(), inspector: None, drift: vec![drift] },
    ];
    cfg
}

/// Two arms 20 apart with sd 5 over 100 iterations. CP7 is switched off:
/// its diversity pressure is a deliberate trade against regret.
pub fn regret_experiment() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new("regret", ProblemSpec::new("structural_eq3", 20_000, 0.05));
    cfg.session.n_max = 100;
    cfg.session.stop_on_convergence = false;
    cfg.session.action_space = two_arm_space(Estimator::Sobol, Estimator::Chatterjee);
    cfg.session.checkpoints.overrides.insert(CheckpointId::CP7, CheckpointOverride { enabled: false, ..Default::default() });
    cfg.environment = EnvironmentSpec::Simulated(two_arm_env(80.0, 60.0, 5.0));
    cfg.seeds = (0..50).collect();
    cfg
}

/// Three sessions on the 15-d G-function in a deterministic simulated
/// environment with the archive and policy carried over.
pub fn g_function_sessions() -> ExperimentConfig {
    let p = ProblemSpec::new("g_function_15", 50_000, 0.05);
    let mut cfg = ExperimentConfig::new("g_function_sessions", p.clone());
    cfg.sessions = vec![p.clone(), p.clone(), p];
    cfg.session.persist_policy = true;
    cfg.environment = EnvironmentSpec::Simulated(SimulatedEnvironment {
        rewards: BTreeMap::from([
            ("Sobol".to_string(), 75.5),
            ("PCE_SA".to_string(), 68.8),
            ("Chatterjee".to_string(), 64.2),
            ("CVM".to_string(), 60.8),
            ("Morris".to_string(), 45.0),
        ]),
        default_reward: 30.0,
        d_in: 15,
        ..Default::default()
    });
    cfg.seeds = (0..20).collect();
    cfg
}

/// Beam, beam again, then the 20-d thermal stub against the same archive.
pub fn cp0_contrast() -> ExperimentConfig {
    let beam = ProblemSpec::new("cantilever_beam", 20_000, 0.05);
    let mut cfg = ExperimentConfig::new("cp0_contrast", beam.clone());
    cfg.sessions = vec![beam.clone(), beam, ProblemSpec::new("thermal_stub", 20_000, 0.05)];
    cfg.session.persist_policy = true;
    cfg
}

/// Plain single session on the cantilever beam.
pub fn beam_run() -> ExperimentConfig {
    ExperimentConfig::new("beam_run", ProblemSpec::new("cantilever_beam", 20_000, 0.05))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_configs_validate() {
        for cfg in [eq3_ablation(), cp5_method_swap(), empowerment_experiment(), regret_experiment(), g_function_sessions(), cp0_contrast(), beam_run()] {
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn unknown_problem_is_a_config_error() {
        let cfg = ExperimentConfig::new("x", ProblemSpec::new("no_such_model", 1000, 0.05));
        assert!(matches!(cfg.validate(), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn empty_seeds_rejected() {
        let mut cfg = beam_run();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
