//! Thompson-sampling contextual bandit over a shared linear reward model.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_space::{ActionSpace, ActionTuple, Estimator, Task};
use crate::archive::ArchiveEntry;
use crate::checkpoints::{ExplorationMode, MatchKind};
use crate::schemes::{
    build_method_scheme, cost_factor, ContextVector, DiagnosticScheme, DistFamily, MethodScheme, ProblemScheme,
    SchemeError,
};

#[derive(Debug, Error, PartialEq)]
pub enum BanditError {
    #[error("no feasible action")]
    NoFeasibleAction,
    #[error("invalid reward {0}")]
    InvalidReward(f64),
    #[error("feature dimension {got} does not match policy dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("posterior precision is not positive definite")]
    NotPositiveDefinite,
    #[error("warm start needs a close or weak match")]
    WarmStartRejected,
    #[error(transparent)]
    Scheme(#[from] SchemeError),
}

pub const CONTEXT_FEATURES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// Estimator the vector encodes, used for selection counts.
    pub estimator: Option<Estimator>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

pub fn feature_dim(space: &ActionSpace, task: Task) -> usize {
    let dims = space.dimensions(task);
    let one_hot: usize = dims.iter().map(|d| d.values.len()).sum();
    let estimators = dims[crate::action_space::ESTIMATOR_DIM].values.len();
    CONTEXT_FEATURES + one_hot + 2 * estimators
}

fn context_block(x: &ContextVector) -> [f64; CONTEXT_FEATURES] {
    let d = x.dist_family.len().max(1) as f64;
    let normal = x.dist_family.iter().filter(|f| **f == DistFamily::Normal).count() as f64 / d;
    let feasible = (x.feasibility_bits.count_ones() as f64 / Estimator::ALL.len() as f64).min(1.0);
    [
        (x.d_in as f64 / 50.0).min(1.0),
        (x.d_out as f64 / 10.0).min(1.0),
        ((x.n_budget.max(1) as f64).log10() / 7.0).clamp(0.0, 1.0),
        x.epsilon.clamp(0.0, 1.0),
        if x.task == Task::UQ { 1.0 } else { 0.0 },
        normal,
        if x.multi_output_flag { 1.0 } else { 0.0 },
        feasible,
    ]
}

/// Context block, one-hot per action dimension, then the estimator one-hot
/// scaled by d_in and by log N.
pub fn encode_features(space: &ActionSpace, x: &ContextVector, a: &ActionTuple) -> FeatureVector {
    let dims = space.dimensions(a.task);
    let ctx = context_block(x);
    let mut values = ctx.to_vec();
    let mut est_slot = None;
    for (i, dim) in dims.iter().enumerate() {
        let pos = dim.values.iter().position(|v| v == a.dim(i));
        if i == crate::action_space::ESTIMATOR_DIM {
            est_slot = pos;
        }
        values.extend((0..dim.values.len()).map(|k| if Some(k) == pos { 1.0 } else { 0.0 }));
    }
    let n_est = dims[crate::action_space::ESTIMATOR_DIM].values.len();
    for scale in [ctx[0], ctx[2]] {
        values.extend((0..n_est).map(|k| if Some(k) == est_slot { scale } else { 0.0 }));
    }
    FeatureVector { values, estimator: a.estimator().ok() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BanditConfig {
    pub ridge: f64,
    pub noise_variance: f64,
    pub decay: f64,
    pub epsilon_floor: f64,
    pub base_exploit: f64,
    pub base_neutral: f64,
    pub base_explore: f64,
    pub novelty_penalty: f64,
    pub block_penalty: f64,
    pub safety_factor: f64,
    pub close_weight: f64,
    pub weak_weight: f64,
    pub morris_levels: u64,
}

impl Default for BanditConfig {
    fn default() -> Self {
        BanditConfig {
            ridge: 1.0,
            noise_variance: 25.0,
            decay: 0.6,
            epsilon_floor: 0.02,
            base_exploit: 0.1,
            base_neutral: 0.5,
            base_explore: 1.0,
            novelty_penalty: 5.0,
            block_penalty: 1000.0,
            safety_factor: 2.0,
            close_weight: 1.0,
            weak_weight: 0.3,
            morris_levels: 4,
        }
    }
}

pub fn exploration_schedule(n: u32, mode: ExplorationMode, cfg: &BanditConfig) -> f64 {
    let base = match mode {
        ExplorationMode::Exploit => cfg.base_exploit,
        ExplorationMode::Neutral => cfg.base_neutral,
        ExplorationMode::ExploreMax => cfg.base_explore,
    };
    (base * cfg.decay.powi(n.max(1) as i32 - 1)).max(cfg.epsilon_floor)
}

/// Bayesian linear regression with prior precision ridge*I; the noise
/// variance scales the posterior covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPosterior {
    pub precision: DMatrix<f64>,
    pub b: DVector<f64>,
    pub noise_variance: f64,
}

impl LinearPosterior {
    pub fn new(dim: usize, ridge: f64, noise_variance: f64) -> Self {
        LinearPosterior {
            precision: DMatrix::identity(dim, dim) * ridge,
            b: DVector::zeros(dim),
            noise_variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn update(&mut self, phi: &[f64], reward: f64, weight: f64) -> Result<(), BanditError> {
        if phi.len() != self.dim() {
            return Err(BanditError::Dimension { expected: self.dim(), got: phi.len() });
        }
        let v = DVector::from_column_slice(phi);
        let next = &self.precision + (&v * v.transpose()) * weight;
        if Cholesky::new(next.clone()).is_none() {
            return Err(BanditError::NotPositiveDefinite);
        }
        self.precision = next;
        self.b += v * (weight * reward);
        Ok(())
    }

    pub fn mean(&self) -> DVector<f64> {
        Cholesky::new(self.precision.clone()).expect("precision stays positive definite").solve(&self.b)
    }

    /// Draws w ~ N(mean, noise_variance * precision^-1).
    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let chol = Cholesky::new(self.precision.clone()).expect("precision stays positive definite");
        let mean = chol.solve(&self.b);
        let z = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let lt = chol.l().transpose();
        let dev = lt.solve_upper_triangular(&z).expect("triangular factor is invertible");
        mean + dev * self.noise_variance.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub task: Task,
    pub posterior: LinearPosterior,
    /// Updates in the current session.
    pub iteration: u32,
    pub lifetime_updates: u64,
    /// Selections per estimator in the current session.
    pub estimator_counts: BTreeMap<Estimator, u32>,
    pub exploration_mode: ExplorationMode,
}

impl PolicyState {
    pub fn new(space: &ActionSpace, task: Task, cfg: &BanditConfig) -> Self {
        PolicyState {
            task,
            posterior: LinearPosterior::new(feature_dim(space, task), cfg.ridge, cfg.noise_variance),
            iteration: 0,
            lifetime_updates: 0,
            estimator_counts: BTreeMap::new(),
            exploration_mode: ExplorationMode::ExploreMax,
        }
    }

    /// Resets the session-local counters; the posterior carries over.
    pub fn begin_session(&mut self, mode: ExplorationMode) {
        self.iteration = 0;
        self.estimator_counts.clear();
        self.exploration_mode = mode;
    }

    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot {
            task: self.task,
            dim: self.posterior.dim(),
            posterior_mean: self.posterior.mean().iter().copied().collect(),
            precision: self.posterior.precision.iter().copied().collect(),
            b: self.posterior.b.iter().copied().collect(),
            noise_variance: self.posterior.noise_variance,
            lifetime_updates: self.lifetime_updates,
        }
    }

    pub fn from_snapshot(s: &PolicySnapshot) -> Result<Self, BanditError> {
        if s.precision.len() != s.dim * s.dim || s.b.len() != s.dim {
            return Err(BanditError::Dimension { expected: s.dim, got: s.b.len() });
        }
        let precision = DMatrix::from_column_slice(s.dim, s.dim, &s.precision);
        if Cholesky::new(precision.clone()).is_none() {
            return Err(BanditError::NotPositiveDefinite);
        }
        Ok(PolicyState {
            task: s.task,
            posterior: LinearPosterior { precision, b: DVector::from_column_slice(&s.b), noise_variance: s.noise_variance },
            iteration: 0,
            lifetime_updates: s.lifetime_updates,
            estimator_counts: BTreeMap::new(),
            exploration_mode: ExplorationMode::ExploreMax,
        })
    }
}

/// Serialized posterior; precision is column-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub task: Task,
    pub dim: usize,
    pub posterior_mean: Vec<f64>,
    pub precision: Vec<f64>,
    pub b: Vec<f64>,
    pub noise_variance: f64,
    pub lifetime_updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDecision {
    pub action: ActionTuple,
    pub method_scheme: MethodScheme,
    pub sampled_scores: BTreeMap<String, f64>,
    pub novelty_penalty_applied: bool,
    pub epsilon: f64,
    pub explored: bool,
}

/// Hyperparameters when the diagnosis prescribes none.
pub fn default_hyperparams(
    space: &ActionSpace,
    ps: &ProblemScheme,
    a: &ActionTuple,
    cfg: &BanditConfig,
) -> Result<BTreeMap<String, u64>, BanditError> {
    let e = a.estimator().map_err(SchemeError::Action)?;
    let x = &ps.context;
    let n_min = crate::schemes::n_min_formula(e, space.config()).eval(x.d_in, space.config());
    let staged = space
        .dimensions(a.task)
        .iter()
        .position(|d| d.name == "budget_allocation")
        .map(|i| a.dim(i) == "Staged")
        .unwrap_or(false);
    let evals = if staged { x.n_budget } else { x.n_budget.min((cfg.safety_factor * n_min as f64).ceil() as u64) };
    let n = (evals / cost_factor(e, x.d_in)).max(1);
    let mut hp = BTreeMap::from([("n_samples".to_string(), n)]);
    if e == Estimator::Morris {
        hp.insert("levels".into(), cfg.morris_levels);
    }
    Ok(hp)
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Thompson draw with an epsilon-uniform overlay. `blocked` marks candidates
/// the uniform branch must skip when any alternative exists.
pub fn thompson_choice<R: Rng>(
    posterior: &LinearPosterior,
    features: &[Vec<f64>],
    penalties: &[f64],
    blocked: &[bool],
    epsilon: f64,
    rng: &mut R,
) -> (usize, Vec<f64>, bool) {
    let w = posterior.sample(rng);
    let scores: Vec<f64> = features
        .iter()
        .zip(penalties)
        .map(|(phi, p)| phi.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() - p)
        .collect();
    let explore = rng.random::<f64>() < epsilon;
    if explore {
        let open: Vec<usize> = (0..features.len()).filter(|i| !blocked[*i]).collect();
        let pool: Vec<usize> = if open.is_empty() { (0..features.len()).collect() } else { open };
        let pick = pool[rng.random_range(0..pool.len())];
        (pick, scores, true)
    } else {
        (argmax(&scores), scores, false)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn select_action(
    st: &PolicyState,
    space: &ActionSpace,
    ps: &ProblemScheme,
    feasible: &[ActionTuple],
    diag: Option<&DiagnosticScheme>,
    novelty_warning: bool,
    seed: u64,
    cfg: &BanditConfig,
) -> Result<PolicyDecision, BanditError> {
    if feasible.is_empty() {
        return Err(BanditError::NoFeasibleAction);
    }
    let mut candidates: Vec<&ActionTuple> = feasible.iter().collect();
    let prescribed = diag.and_then(|d| d.prescribed_estimator);
    if let Some(p) = prescribed {
        let only: Vec<&ActionTuple> = feasible.iter().filter(|a| a.estimator().ok() == Some(p)).collect();
        if !only.is_empty() {
            candidates = only;
        }
    }
    let blocked_est = diag.filter(|d| d.block_action).and_then(|d| d.subject_estimator);
    let x = &ps.context;
    let features: Vec<Vec<f64>> = candidates.iter().map(|a| encode_features(space, x, a).values).collect();
    let est: Vec<Option<Estimator>> = candidates.iter().map(|a| a.estimator().ok()).collect();
    let blocked: Vec<bool> = est.iter().map(|e| blocked_est.is_some() && *e == blocked_est).collect();
    let penalties: Vec<f64> = est
        .iter()
        .zip(&blocked)
        .map(|(e, b)| {
            let count = e.and_then(|e| st.estimator_counts.get(&e)).copied().unwrap_or(0) as f64;
            let novelty = if novelty_warning { cfg.novelty_penalty * count } else { 0.0 };
            novelty + if *b { cfg.block_penalty } else { 0.0 }
        })
        .collect();
    let epsilon = exploration_schedule(st.iteration + 1, st.exploration_mode, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pick, scores, explored) = thompson_choice(&st.posterior, &features, &penalties, &blocked, epsilon, &mut rng);
    let action = candidates[pick].clone();
    let hyperparams = match diag {
        Some(d) if prescribed.is_some() && prescribed == est[pick] && d.prescribed_hyperparam.is_some() => {
            let mut hp = default_hyperparams(space, ps, &action, cfg)?;
            hp.extend(d.prescribed_hyperparam.clone().unwrap_or_default());
            hp
        }
        _ => default_hyperparams(space, ps, &action, cfg)?,
    };
    let method_scheme = build_method_scheme(&action, ps, &hyperparams, space)?;
    let novelty_penalty_applied = novelty_warning && est[pick].map(|e| st.estimator_counts.contains_key(&e)).unwrap_or(false);
    Ok(PolicyDecision {
        action,
        method_scheme,
        sampled_scores: candidates.iter().map(|a| a.key()).zip(scores).collect(),
        novelty_penalty_applied,
        epsilon,
        explored,
    })
}

pub fn validate_reward(reward: f64) -> Result<(), BanditError> {
    if !reward.is_finite() || !(0.0..=100.0).contains(&reward) {
        return Err(BanditError::InvalidReward(reward));
    }
    Ok(())
}

pub fn update(st: &mut PolicyState, phi: &FeatureVector, reward: f64) -> Result<(), BanditError> {
    update_weighted(st, phi, reward, 1.0)
}

/// Equivalent to `weight` repeated identical updates.
pub fn update_weighted(st: &mut PolicyState, phi: &FeatureVector, reward: f64, weight: f64) -> Result<(), BanditError> {
    validate_reward(reward)?;
    if phi.dim() != st.posterior.dim() {
        return Err(BanditError::Dimension { expected: st.posterior.dim(), got: phi.dim() });
    }
    st.iteration += 1;
    if phi.is_zero() {
        return Ok(());
    }
    st.posterior.update(&phi.values, reward, weight)?;
    st.lifetime_updates += 1;
    if let Some(e) = phi.estimator {
        *st.estimator_counts.entry(e).or_insert(0) += 1;
    }
    Ok(())
}

/// Replays archived per-arm means as pseudo-observations of weight
/// w*count, with w = 1.0 for a close match and 0.3 for a weak one.
pub fn warm_start(
    st: &mut PolicyState,
    space: &ActionSpace,
    x: &ContextVector,
    entry: &ArchiveEntry,
    kind: MatchKind,
    cfg: &BanditConfig,
) -> Result<(), BanditError> {
    let (w, mode) = match kind {
        MatchKind::Close => (cfg.close_weight, ExplorationMode::Exploit),
        MatchKind::Weak => (cfg.weak_weight, ExplorationMode::Neutral),
        MatchKind::None => return Err(BanditError::WarmStartRejected),
    };
    for stats in entry.per_arm_stats.values() {
        let a = &stats.representative_action;
        if a.task != st.task || space.check_shape(a).is_err() {
            continue;
        }
        let phi = encode_features(space, x, a);
        validate_reward(stats.mean_reward)?;
        st.posterior.update(&phi.values, stats.mean_reward, w * stats.count as f64)?;
    }
    st.exploration_mode = mode;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::ArmStats;
    use crate::estimators::benchmark_catalog;
    use crate::schemes::{build_problem_scheme, ConvergenceStatus, RootCause};
    use crate::reward::RewardComponent;
    use rand_distr::{Distribution, Normal};
    use statrs::distribution::{ContinuousCDF, Normal as SNormal};

    fn beam() -> (ActionSpace, ProblemScheme) {
        let space = ActionSpace::default();
        let m = benchmark_catalog().get("cantilever_beam").unwrap();
        let ps = build_problem_scheme(&m.describe(20000, 0.05, ""), &space).unwrap();
        (space, ps)
    }

    fn sa(dims: [&str; 4]) -> ActionTuple {
        ActionTuple::new(Task::SA, &dims)
    }

    #[test]
    fn schedule_values() {
        let c = BanditConfig::default();
        assert_eq!(exploration_schedule(1, ExplorationMode::ExploreMax, &c), 1.0);
        assert_eq!(exploration_schedule(200, ExplorationMode::Exploit, &c), 0.02);
        assert!((exploration_schedule(3, ExplorationMode::Neutral, &c) - 0.18).abs() < 1e-12);
    }

    #[test]
    fn features_differ_by_block() {
        let (space, ps) = beam();
        let a = encode_features(&space, &ps.context, &sa(["MonteCarlo", "Sobol", "Fixed_N", "Scalar"]));
        let b = encode_features(&space, &ps.context, &sa(["MonteCarlo", "Sobol", "Staged", "Scalar"]));
        let diff: Vec<usize> = (0..a.dim()).filter(|i| a.values[*i] != b.values[*i]).collect();
        // budget_allocation block sits after context (8), sampling (2) and estimator (6).
        assert_eq!(diff, vec![16, 17]);
        let c = encode_features(&space, &ps.context, &sa(["MonteCarlo", "Chatterjee", "Fixed_N", "Scalar"]));
        let diff: Vec<usize> = (0..a.dim()).filter(|i| a.values[*i] != c.values[*i]).collect();
        assert!(diff.iter().all(|i| (10..16).contains(i) || *i >= 20), "{diff:?}");
        assert_eq!(a.dim(), feature_dim(&space, Task::SA));
    }

    #[test]
    fn context_block_tracks_d_in() {
        let (space, ps) = beam();
        let g = benchmark_catalog().get("g_function_15").unwrap();
        let ps15 = build_problem_scheme(&g.describe(20000, 0.05, ""), &space).unwrap();
        let a = sa(["MonteCarlo", "Sobol", "Fixed_N", "Scalar"]);
        let u = encode_features(&space, &ps.context, &a);
        let v = encode_features(&space, &ps15.context, &a);
        assert_ne!(u.values[..CONTEXT_FEATURES], v.values[..CONTEXT_FEATURES]);
        assert!(u.values[..CONTEXT_FEATURES].iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn injective_over_catalogue() {
        let (space, ps) = beam();
        for task in [Task::SA, Task::UQ] {
            let acts = space.enumerate_actions(task);
            let vs: Vec<_> = acts.iter().map(|a| encode_features(&space, &ps.context, a).values).collect();
            for i in 0..vs.len() {
                for j in (i + 1)..vs.len() {
                    assert_ne!(vs[i], vs[j]);
                }
            }
        }
    }

    #[test]
    fn single_action_always_selected() {
        let (space, ps) = beam();
        let st = PolicyState::new(&space, Task::SA, &BanditConfig::default());
        let a = sa(["MonteCarlo", "Chatterjee", "Fixed_N", "Scalar"]);
        for seed in 0..20 {
            let d = select_action(&st, &space, &ps, std::slice::from_ref(&a), None, false, seed, &BanditConfig::default()).unwrap();
            assert_eq!(d.action, a);
        }
        assert_eq!(
            select_action(&st, &space, &ps, &[], None, false, 0, &BanditConfig::default()).unwrap_err(),
            BanditError::NoFeasibleAction
        );
    }

    #[test]
    fn prescription_sets_hyperparams() {
        let (space, ps) = beam();
        let cfg = BanditConfig::default();
        let st = PolicyState::new(&space, Task::SA, &cfg);
        let diag = DiagnosticScheme {
            convergence_status: ConvergenceStatus::Partial,
            bottleneck_dim: RewardComponent::Accuracy,
            reward: 60.0,
            root_cause: RootCause::InsufficientN,
            subject_estimator: Some(Estimator::Sobol),
            prescribed_estimator: Some(Estimator::Sobol),
            prescribed_n_factor: Some(2.0),
            prescribed_hyperparam: Some(BTreeMap::from([("n_samples".to_string(), 17000)])),
            penalize_action: false,
            block_action: false,
            physical_insight: String::new(),
        };
        let feasible = space.filter_feasible(&ps.context);
        for seed in 0..10 {
            let d = select_action(&st, &space, &ps, &feasible, Some(&diag), false, seed, &cfg).unwrap();
            assert_eq!(d.action.estimator().unwrap(), Estimator::Sobol);
            assert_eq!(d.method_scheme.hyperparams["n_samples"], 17000);
        }
    }

    #[test]
    fn default_sizing() {
        let (space, ps) = beam();
        let cfg = BanditConfig::default();
        let hp = default_hyperparams(&space, &ps, &sa(["MonteCarlo", "Sobol", "Fixed_N", "Scalar"]), &cfg).unwrap();
        // min(20000, 2 * 3000) / (4 + 2)
        assert_eq!(hp["n_samples"], 1000);
        let hp = default_hyperparams(&space, &ps, &sa(["MonteCarlo", "Sobol", "Staged", "Scalar"]), &cfg).unwrap();
        assert_eq!(hp["n_samples"], 3333);
    }

    #[test]
    fn closed_form_one_dim_update() {
        let mut p = LinearPosterior::new(1, 1.0, 25.0);
        p.update(&[1.0], 100.0, 1.0).unwrap();
        // precision 1 + 1 = 2, b = 100 -> mean 50
        assert!((p.mean()[0] - 50.0).abs() < 1e-12);
        let mut q = LinearPosterior::new(3, 2.0, 25.0);
        q.update(&[1.0, 0.0, 0.0], 100.0, 1.0).unwrap();
        assert!((q.mean()[0] - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(q.mean()[1], 0.0);
    }

    #[test]
    fn zero_feature_only_counts_iteration() {
        let (space, _) = beam();
        let cfg = BanditConfig::default();
        let mut st = PolicyState::new(&space, Task::SA, &cfg);
        let before = st.clone();
        let zero = FeatureVector { values: vec![0.0; feature_dim(&space, Task::SA)], estimator: Some(Estimator::Sobol) };
        update(&mut st, &zero, 50.0).unwrap();
        assert_eq!(st.iteration, 1);
        assert_eq!(st.posterior, before.posterior);
        assert!(st.estimator_counts.is_empty());
        assert!(matches!(update(&mut st, &zero, f64::NAN), Err(BanditError::InvalidReward(_))));
    }

    #[test]
    fn batched_update_matches_repeats() {
        let mut a = LinearPosterior::new(3, 1.0, 25.0);
        let mut b = a.clone();
        let phi = [0.3, 1.0, 0.5];
        a.update(&phi, 70.0, 1.0).unwrap();
        a.update(&phi, 70.0, 1.0).unwrap();
        b.update(&phi, 70.0, 2.0).unwrap();
        assert!((a.precision - b.precision).abs().max() < 1e-12);
        assert!((a.b - b.b).abs().max() < 1e-12);
    }

    /// Two independent 1-d arms: the selection frequency matches the closed
    /// form P(w1 > w2) mixed with the uniform branch.
    #[test]
    fn two_arm_frequency() {
        let cfg = BanditConfig::default();
        let mut p = LinearPosterior::new(2, cfg.ridge, cfg.noise_variance);
        for _ in 0..25 {
            p.update(&[1.0, 0.0], 90.0, 1.0).unwrap();
            p.update(&[0.0, 1.0], 10.0, 1.0).unwrap();
        }
        let eps = exploration_schedule(51, ExplorationMode::ExploreMax, &cfg);
        let feats = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let mut hits = 0;
        for seed in 0..1000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (i, _, _) = thompson_choice(&p, &feats, &[0.0, 0.0], &[false, false], eps, &mut rng);
            hits += (i == 0) as u32;
        }
        let freq = hits as f64 / 1000.0;
        let mu = 25.0 * 90.0 / 26.0 - 25.0 * 10.0 / 26.0;
        let sd = (2.0 * 25.0 / 26.0f64).sqrt();
        let oracle = (1.0 - eps) * SNormal::new(0.0, 1.0).unwrap().cdf(mu / sd) + eps * 0.5;
        assert!(freq > 0.9, "{freq}");
        assert!((freq - oracle).abs() < 0.02, "{freq} vs {oracle}");
    }

    #[test]
    fn argmax_invariance_under_affine_scores() {
        let scores = [3.0, -1.0, 7.5, 7.4];
        let t: Vec<f64> = scores.iter().map(|s| 2.5 * s + 40.0).collect();
        assert_eq!(argmax(&scores), argmax(&t));
    }

    #[test]
    fn warm_start_close_prefers_archived_arm() {
        let (space, ps) = beam();
        let cfg = BanditConfig::default();
        let sobol = sa(["MonteCarlo", "Sobol", "Fixed_N", "Scalar"]);
        let chat = sa(["MonteCarlo", "Chatterjee", "Fixed_N", "Scalar"]);
        let entry = ArchiveEntry {
            session_id: "s".into(),
            model_id: "cantilever_beam".into(),
            timestamp: 0,
            task: Task::SA,
            d_in: 4,
            problem_features: crate::archive::problem_features(&ps),
            best_action: sobol.clone(),
            best_reward: 93.0,
            per_arm_stats: BTreeMap::from([
                (Estimator::Sobol, ArmStats { count: 2, mean_reward: 91.0, feature_digest: String::new(), representative_action: sobol.clone() }),
                (Estimator::Chatterjee, ArmStats { count: 1, mean_reward: 60.0, feature_digest: String::new(), representative_action: chat }),
            ]),
        };
        let mut st = PolicyState::new(&space, Task::SA, &cfg);
        st.begin_session(ExplorationMode::ExploreMax);
        warm_start(&mut st, &space, &ps.context, &entry, MatchKind::Close, &cfg).unwrap();
        assert_eq!(st.exploration_mode, ExplorationMode::Exploit);
        let feasible = space.filter_feasible(&ps.context);
        let mut top = 0;
        for seed in 0..1000 {
            let d = select_action(&st, &space, &ps, &feasible, None, false, seed, &cfg).unwrap();
            let best = d.sampled_scores.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0.clone();
            top += best.contains("|Sobol|") as u32;
        }
        assert!(top >= 950, "{top}");

        let mut weak = PolicyState::new(&space, Task::SA, &cfg);
        warm_start(&mut weak, &space, &ps.context, &entry, MatchKind::Weak, &cfg).unwrap();
        let close_shift = &st.posterior.b;
        let weak_shift = &weak.posterior.b;
        assert!((weak_shift - close_shift * 0.3).abs().max() < 1e-9);
        assert_eq!(
            warm_start(&mut weak, &space, &ps.context, &entry, MatchKind::None, &cfg),
            Err(BanditError::WarmStartRejected)
        );
    }

    #[test]
    fn snapshot_round_trip() {
        let (space, ps) = beam();
        let cfg = BanditConfig::default();
        let mut st = PolicyState::new(&space, Task::SA, &cfg);
        let a = sa(["MonteCarlo", "Sobol", "Fixed_N", "Scalar"]);
        update(&mut st, &encode_features(&space, &ps.context, &a), 80.0).unwrap();
        let snap = st.snapshot();
        let text = serde_json::to_string(&snap).unwrap();
        let back: PolicySnapshot = serde_json::from_str(&text).unwrap();
        let restored = PolicyState::from_snapshot(&back).unwrap();
        assert!((restored.posterior.precision - st.posterior.precision).abs().max() < 1e-12);
    }

    /// Two estimators with means 20 points apart: average regret per step
    /// shrinks between 20 and 100 iterations.
    #[test]
    fn regret_is_sublinear() {
        let (space, ps) = beam();
        let cfg = BanditConfig::default();
        let good = sa(["MonteCarlo", "Sobol", "Fixed_N", "Scalar"]);
        let bad = sa(["MonteCarlo", "Chatterjee", "Fixed_N", "Scalar"]);
        let means: [f64; 2] = [80.0, 60.0];
        let (mut r20, mut r100) = (0.0, 0.0);
        for seed in 0..50u64 {
            let mut st = PolicyState::new(&space, Task::SA, &cfg);
            st.begin_session(ExplorationMode::Neutral);
            let mut noise_rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let noise = Normal::new(0.0, 5.0).unwrap();
            let mut regret = 0.0;
            for n in 1..=100u64 {
                let d = select_action(&st, &space, &ps, &[good.clone(), bad.clone()], None, false, seed * 1000 + n, &cfg)
                    .unwrap();
                let k = if d.action == good { 0 } else { 1 };
                regret += means[0] - means[k];
                let r = (means[k] + noise.sample(&mut noise_rng)).clamp(0.0, 100.0);
                update(&mut st, &encode_features(&space, &ps.context, &d.action), r).unwrap();
                if n == 20 {
                    r20 += regret;
                }
            }
            r100 += regret;
        }
        assert!(r100 / 100.0 < r20 / 20.0, "{r20} {r100}");
    }
}
