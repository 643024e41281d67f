//! Semantic gates at agent boundaries and their adaptive thresholds.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::archive::{Archive, ArchiveEntry};
use crate::embedding::{text_similarity, EmbeddingProvider};
use crate::schemes::ProblemScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CheckpointId {
    CP0,
    CP1,
    CP2,
    CP3,
    CP4,
    CP5,
    CP6,
    CP7,
}

impl CheckpointId {
    pub const ALL: [CheckpointId; 8] = [
        CheckpointId::CP0,
        CheckpointId::CP1,
        CheckpointId::CP2,
        CheckpointId::CP3,
        CheckpointId::CP4,
        CheckpointId::CP5,
        CheckpointId::CP6,
        CheckpointId::CP7,
    ];
}

impl fmt::Display for CheckpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureAction {
    RepromptCoordinator,
    CriticReject,
    WarnStudyAgent,
    StudyAgentRetry,
    InspectorReject,
    WarnAdvisor,
    WarnStrategist,
    NeutralWarmStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSpec {
    pub id: CheckpointId,
    pub upstream: String,
    pub downstream: String,
    pub blocking: bool,
    pub inverted: bool,
    pub theta0: f64,
    pub theta_min: f64,
    pub adaptive: bool,
    pub on_failure: FailureAction,
}

pub fn checkpoint_spec(id: CheckpointId) -> CheckpointSpec {
    use CheckpointId::*;
    use FailureAction::*;
    let (up, down, blocking, theta0, theta_min, on_failure) = match id {
        CP0 => ("problem scheme", "archive", false, 0.70, 0.70, NeutralWarmStart),
        CP1 => ("user request", "problem scheme", true, 0.25, 0.15, RepromptCoordinator),
        CP2 => ("problem scheme", "strategy", true, 0.30, 0.20, CriticReject),
        CP3 => ("strategy", "study report", false, 0.30, 0.20, WarnStudyAgent),
        CP4 => ("strategy", "implementation plan", true, 0.35, 0.25, StudyAgentRetry),
        CP5 => ("strategy", "code", true, 0.35, 0.25, InspectorReject),
        CP6 => ("observation", "advisor report", false, 0.30, 0.20, WarnAdvisor),
        CP7 => ("new action", "previous action", false, 0.35, 0.25, WarnStrategist),
    };
    CheckpointSpec {
        id,
        upstream: up.into(),
        downstream: down.into(),
        blocking,
        inverted: id == CP7,
        theta0,
        theta_min,
        adaptive: id != CP0,
        on_failure,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveConfig {
    pub decay: f64,
    pub warmup: u32,
    pub cap_margin: f64,
    pub std_multiplier: f64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig { decay: 0.8, warmup: 3, cap_margin: 0.10, std_multiplier: 1.0 }
    }
}

/// Thresholds at or below this value disable a gate (ablation mode).
pub const ABLATION_THETA: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub theta0: f64,
    pub ema_mean: f64,
    pub ema_var: f64,
    pub count: u32,
    pub floor: f64,
    pub cap: f64,
    pub current: f64,
}

impl ThresholdState {
    pub fn new(theta0: f64, theta_min: f64, null_floor: f64, cfg: &AdaptiveConfig) -> Self {
        if theta0 <= ABLATION_THETA {
            return ThresholdState::ablated();
        }
        let floor = theta_min.max(null_floor);
        let cap = (theta0 + cfg.cap_margin).max(floor);
        ThresholdState { theta0, ema_mean: 0.0, ema_var: 0.0, count: 0, floor, cap, current: theta0.clamp(floor, cap) }
    }

    pub fn for_spec(spec: &CheckpointSpec, null_floor: f64, cfg: &AdaptiveConfig) -> Self {
        ThresholdState::new(spec.theta0, spec.theta_min, null_floor, cfg)
    }

    pub fn ablated() -> Self {
        ThresholdState {
            theta0: ABLATION_THETA,
            ema_mean: 0.0,
            ema_var: 0.0,
            count: 0,
            floor: ABLATION_THETA,
            cap: ABLATION_THETA,
            current: ABLATION_THETA,
        }
    }

    pub fn is_ablated(&self) -> bool {
        self.current <= ABLATION_THETA
    }
}

/// EMA of observed similarities; after warmup the threshold tracks mean - k*std
/// inside [floor, cap].
pub fn update_threshold(st: &ThresholdState, observed: f64, cfg: &AdaptiveConfig) -> ThresholdState {
    let mut next = st.clone();
    if st.is_ablated() || !observed.is_finite() {
        return next;
    }
    if st.count == 0 {
        next.ema_mean = observed;
        next.ema_var = 0.0;
    } else {
        let l = cfg.decay;
        next.ema_mean = l * st.ema_mean + (1.0 - l) * observed;
        next.ema_var = l * st.ema_var + (1.0 - l) * (observed - st.ema_mean).powi(2);
    }
    next.count = st.count + 1;
    next.current = if next.count >= cfg.warmup {
        (next.ema_mean - cfg.std_multiplier * next.ema_var.sqrt()).clamp(next.floor, next.cap)
    } else {
        st.theta0.clamp(next.floor, next.cap)
    };
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Block,
    Warn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointResult {
    pub cp_id: CheckpointId,
    pub similarity: f64,
    pub threshold: f64,
    pub verdict: Verdict,
    pub failure_action: Option<FailureAction>,
    pub retry_count: u32,
    pub novelty: bool,
}

/// Verdict for a similarity against the current threshold.
pub fn judge(spec: &CheckpointSpec, similarity: f64, st: &ThresholdState) -> CheckpointResult {
    let ok = if st.is_ablated() {
        true
    } else if spec.inverted {
        similarity < st.current
    } else {
        similarity >= st.current
    };
    let verdict = match (ok, spec.blocking) {
        (true, _) => Verdict::Pass,
        (false, true) => Verdict::Block,
        (false, false) => Verdict::Warn,
    };
    CheckpointResult {
        cp_id: spec.id,
        similarity,
        threshold: st.current,
        verdict,
        failure_action: (!ok).then_some(spec.on_failure),
        retry_count: 0,
        novelty: spec.inverted && !ok,
    }
}

pub fn evaluate(
    spec: &CheckpointSpec,
    upstream: &str,
    downstream: &str,
    st: &ThresholdState,
    provider: &dyn EmbeddingProvider,
) -> CheckpointResult {
    judge(spec, text_similarity(provider, upstream, downstream), st)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckpointOverride {
    pub theta0: Option<f64>,
    pub theta_min: Option<f64>,
    pub adaptive: Option<bool>,
    pub enabled: bool,
}

impl Default for CheckpointOverride {
    fn default() -> Self {
        CheckpointOverride { theta0: None, theta_min: None, adaptive: None, enabled: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckpointConfig {
    pub overrides: BTreeMap<CheckpointId, CheckpointOverride>,
    /// Forces every threshold to -1.
    pub ablate_all: bool,
    pub adaptive: AdaptiveConfig,
    pub cp0_close: f64,
    pub retry_budget: u32,
    pub null_quantile: f64,
    pub null_pairs: usize,
}

impl Default for CheckpointConfig {
    fn default() -> Self {
        CheckpointConfig {
            overrides: BTreeMap::new(),
            ablate_all: false,
            adaptive: AdaptiveConfig::default(),
            cp0_close: 0.90,
            retry_budget: 3,
            null_quantile: 0.95,
            null_pairs: 2000,
        }
    }
}

impl CheckpointConfig {
    pub fn spec(&self, id: CheckpointId) -> CheckpointSpec {
        let mut s = checkpoint_spec(id);
        if let Some(o) = self.overrides.get(&id) {
            if let Some(t) = o.theta0 {
                s.theta0 = t;
            }
            if let Some(t) = o.theta_min {
                s.theta_min = t;
            }
            if let Some(a) = o.adaptive {
                s.adaptive = a && id != CheckpointId::CP0;
            }
        }
        if self.ablate_all {
            s.theta0 = ABLATION_THETA;
            s.theta_min = ABLATION_THETA;
        }
        s.theta_min = s.theta_min.min(s.theta0);
        s
    }

    pub fn enabled(&self, id: CheckpointId) -> bool {
        self.overrides.get(&id).map(|o| o.enabled).unwrap_or(true)
    }

    pub fn ablated(&self, id: CheckpointId) -> bool {
        self.spec(id).theta0 <= ABLATION_THETA
    }

    /// Ablates only the given checkpoint.
    pub fn with_theta(mut self, id: CheckpointId, theta: f64) -> Self {
        let o = self.overrides.entry(id).or_default();
        o.theta0 = Some(theta);
        o.theta_min = Some(theta);
        self
    }
}

/// Session-local threshold states for CP1..CP7.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointBank {
    pub states: BTreeMap<CheckpointId, ThresholdState>,
}

impl CheckpointBank {
    pub fn new(cfg: &CheckpointConfig, null_floor: f64) -> Self {
        let states = CheckpointId::ALL
            .iter()
            .filter(|id| **id != CheckpointId::CP0)
            .map(|id| (*id, ThresholdState::for_spec(&cfg.spec(*id), null_floor, &cfg.adaptive)))
            .collect();
        CheckpointBank { states }
    }

    pub fn state(&self, id: CheckpointId) -> &ThresholdState {
        &self.states[&id]
    }

    /// Evaluates and then feeds the similarity back into the adaptive state.
    pub fn check(
        &mut self,
        cfg: &CheckpointConfig,
        id: CheckpointId,
        upstream: &str,
        downstream: &str,
        provider: &dyn EmbeddingProvider,
    ) -> CheckpointResult {
        let spec = cfg.spec(id);
        let st = self.states.get_mut(&id).expect("CP1..CP7 state");
        let res = evaluate(&spec, upstream, downstream, st, provider);
        if spec.adaptive {
            *st = update_threshold(st, res.similarity, &cfg.adaptive);
        }
        res
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Close,
    Weak,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplorationMode {
    Exploit,
    Neutral,
    ExploreMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cp0Result {
    pub similarity: f64,
    #[serde(rename = "match")]
    pub match_kind: MatchKind,
    pub warm_start: Option<ArchiveEntry>,
    pub exploration_mode: ExplorationMode,
    pub screening_first: bool,
}

pub fn evaluate_cp0(ps: &ProblemScheme, archive: &Archive, cfg: &CheckpointConfig, screening_dim_threshold: u32) -> Cp0Result {
    let spec = cfg.spec(CheckpointId::CP0);
    let best = archive.lookup(ps);
    let similarity = best.as_ref().map(|(_, s)| *s).unwrap_or(0.0);
    let match_kind = if best.is_some() && similarity >= cfg.cp0_close {
        MatchKind::Close
    } else if best.is_some() && similarity >= spec.theta0 {
        MatchKind::Weak
    } else {
        MatchKind::None
    };
    let exploration_mode = match match_kind {
        MatchKind::Close => ExplorationMode::Exploit,
        MatchKind::Weak => ExplorationMode::Neutral,
        MatchKind::None => ExplorationMode::ExploreMax,
    };
    Cp0Result {
        similarity,
        match_kind,
        warm_start: if match_kind == MatchKind::None { None } else { best.map(|(e, _)| e.clone()) },
        exploration_mode,
        screening_first: match_kind == MatchKind::None && ps.context.d_in >= screening_dim_threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{cosine, HashingEmbedder};
    use proptest::prelude::*;

    fn fresh(id: CheckpointId) -> (CheckpointSpec, ThresholdState) {
        let s = checkpoint_spec(id);
        let st = ThresholdState::for_spec(&s, 0.0, &AdaptiveConfig::default());
        (s, st)
    }

    #[test]
    fn table_invariants() {
        for id in CheckpointId::ALL {
            let s = checkpoint_spec(id);
            assert!(s.theta_min <= s.theta0);
            assert_eq!(s.inverted, id == CheckpointId::CP7);
        }
        assert!(!checkpoint_spec(CheckpointId::CP0).adaptive);
        assert!(!checkpoint_spec(CheckpointId::CP7).blocking);
        let blocking: Vec<_> = CheckpointId::ALL.iter().filter(|i| checkpoint_spec(**i).blocking).collect();
        assert_eq!(blocking, vec![&CheckpointId::CP1, &CheckpointId::CP2, &CheckpointId::CP4, &CheckpointId::CP5]);
        let p = |id| {
            let s = checkpoint_spec(id);
            (s.theta0, s.theta_min)
        };
        assert_eq!(p(CheckpointId::CP1), (0.25, 0.15));
        assert_eq!(p(CheckpointId::CP5), (0.35, 0.25));
        assert_eq!(p(CheckpointId::CP7), (0.35, 0.25));
    }

    #[test]
    fn cp2_blocks_low_similarity() {
        let (s, st) = fresh(CheckpointId::CP2);
        let r = judge(&s, 0.10, &st);
        assert_eq!(r.verdict, Verdict::Block);
        assert_eq!(r.failure_action, Some(FailureAction::CriticReject));
    }

    #[test]
    fn cp7_warns_on_identical_actions() {
        let (s, st) = fresh(CheckpointId::CP7);
        let e = HashingEmbedder::default();
        let r = evaluate(&s, "Sobol pick-freeze", "Sobol pick-freeze", &st, &e);
        assert!((r.similarity - 1.0).abs() < 1e-12);
        assert_eq!(r.verdict, Verdict::Warn);
        assert!(r.novelty);
        assert_eq!(r.failure_action, Some(FailureAction::WarnStrategist));
    }

    #[test]
    fn identical_texts_pass_non_inverted() {
        let e = HashingEmbedder::default();
        for id in CheckpointId::ALL.into_iter().filter(|i| *i != CheckpointId::CP7) {
            let (s, st) = fresh(id);
            assert_eq!(evaluate(&s, "same text", "same text", &st, &e).verdict, Verdict::Pass);
        }
    }

    #[test]
    fn ablation_passes_everything() {
        let cfg = CheckpointConfig { ablate_all: true, ..Default::default() };
        let e = HashingEmbedder::default();
        for id in CheckpointId::ALL.into_iter().filter(|i| *i != CheckpointId::CP0) {
            let spec = cfg.spec(id);
            let st = ThresholdState::for_spec(&spec, 0.3, &cfg.adaptive);
            assert_eq!(evaluate(&spec, "alpha", "zeta omega", &st, &e).verdict, Verdict::Pass);
            assert_eq!(evaluate(&spec, "same", "same", &st, &e).verdict, Verdict::Pass);
        }
    }

    #[test]
    fn tightening_hand_computed() {
        let cfg = AdaptiveConfig::default();
        let (s, mut st) = fresh(CheckpointId::CP5);
        let obs = s.theta0 + 0.3;
        // Constant input: mean stays at obs, variance stays 0, so the
        // post-warmup threshold is min(obs, theta0 + 0.1).
        let mut seen = Vec::new();
        for _ in 0..5 {
            st = update_threshold(&st, obs, &cfg);
            seen.push(st.current);
        }
        assert_eq!(seen[0], 0.35);
        assert_eq!(seen[1], 0.35);
        for c in &seen[2..] {
            assert!((c - 0.45).abs() < 1e-12);
        }
    }

    #[test]
    fn ema_recurrence_with_variation() {
        let cfg = AdaptiveConfig::default();
        let (_, mut st) = fresh(CheckpointId::CP6);
        let xs = [0.5, 0.3, 0.4];
        for x in xs {
            st = update_threshold(&st, x, &cfg);
        }
        // mean: 0.5 -> 0.46 -> 0.448; var: 0 -> 0.2*0.04=0.008 -> 0.8*0.008+0.2*0.0036=0.00712
        assert!((st.ema_mean - 0.448).abs() < 1e-12);
        assert!((st.ema_var - 0.00712).abs() < 1e-12);
        let expect = (0.448 - 0.00712f64.sqrt()).clamp(0.20, 0.40);
        assert!((st.current - expect).abs() < 1e-12);
    }

    #[test]
    fn low_observations_clamp_to_floor() {
        let cfg = AdaptiveConfig::default();
        let (_, mut st) = fresh(CheckpointId::CP4);
        for _ in 0..4 {
            st = update_threshold(&st, st.floor - 0.2, &cfg);
        }
        assert_eq!(st.current, st.floor);
    }

    #[test]
    fn warmup_keeps_theta0() {
        let cfg = AdaptiveConfig::default();
        let (_, mut st) = fresh(CheckpointId::CP3);
        for x in [0.9, 0.1] {
            st = update_threshold(&st, x, &cfg);
            assert_eq!(st.current, 0.30);
        }
    }

    #[test]
    fn null_floor_raises_floor() {
        let st = ThresholdState::new(0.30, 0.20, 0.33, &AdaptiveConfig::default());
        assert_eq!(st.floor, 0.33);
        assert_eq!(st.current, 0.33);
        let st = ThresholdState::new(0.30, 0.20, 0.55, &AdaptiveConfig::default());
        assert_eq!((st.floor, st.cap, st.current), (0.55, 0.55, 0.55));
    }

    #[test]
    fn cp0_empty_archive() {
        let ps = crate::schemes::build_problem_scheme(
            &crate::estimators::benchmark_catalog().get("cantilever_beam").unwrap().describe(20000, 0.05, ""),
            &crate::action_space::ActionSpace::default(),
        )
        .unwrap();
        let r = evaluate_cp0(&ps, &Archive::default(), &CheckpointConfig::default(), 8);
        assert_eq!(r.similarity, 0.0);
        assert_eq!(r.match_kind, MatchKind::None);
        assert_eq!(r.exploration_mode, ExplorationMode::ExploreMax);
        assert!(!r.screening_first);
    }

    proptest! {
        #[test]
        fn current_never_below_floor(xs in proptest::collection::vec(-2.0f64..2.0, 0..40), id in 1usize..8) {
            let cfg = AdaptiveConfig::default();
            let (_, mut st) = fresh(CheckpointId::ALL[id]);
            for x in xs {
                st = update_threshold(&st, x, &cfg);
                prop_assert!(st.current >= st.floor);
                prop_assert!(st.current <= st.theta0 + 0.10 + 1e-12);
                prop_assert!(st.floor >= checkpoint_spec(CheckpointId::ALL[id]).theta_min);
            }
        }

        #[test]
        fn verdict_kind_matches_blocking(s in -1.0f64..1.0, id in 1usize..8) {
            let (spec, st) = fresh(CheckpointId::ALL[id]);
            let r = judge(&spec, s, &st);
            if spec.blocking { prop_assert_ne!(r.verdict, Verdict::Warn); } else { prop_assert_ne!(r.verdict, Verdict::Block); }
        }

        #[test]
        fn cp7_scale_invariant(a in "[a-z]{1,6}( [a-z]{1,6}){0,5}", b in "[a-z]{1,6}( [a-z]{1,6}){0,5}", k in 0.1f64..10.0) {
            let e = HashingEmbedder::default();
            let (spec, st) = fresh(CheckpointId::CP7);
            let u = e.embed(&a);
            let v = e.embed(&b);
            let r1 = judge(&spec, cosine(&u, &v).unwrap(), &st);
            let r2 = judge(&spec, cosine(&u.scaled(k), &v.scaled(k)).unwrap(), &st);
            prop_assert_eq!(r1.verdict, r2.verdict);
        }
    }
}
