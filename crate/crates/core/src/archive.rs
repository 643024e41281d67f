//! Cross-session store behind CP0 and the persisted policy.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::action_space::{ActionTuple, Estimator, Task};
use crate::bandit::PolicySnapshot;
use crate::pipeline::SessionTrace;
use crate::schemes::{DistFamily, ProblemScheme};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read archive {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt archive {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("unsupported archive schema version {0}")]
    Version(u32),
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("archive has no file path")]
    NoPath,
    #[error("cannot write archive {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot encode archive: {0}")]
    Encode(String),
    #[error("session trace has no iterations")]
    EmptyTrace,
}

/// Weights of the composite similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityWeights {
    pub cosine: f64,
    pub task: f64,
    pub dimension: f64,
    pub dimension_width: f64,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        SimilarityWeights { cosine: 0.5, task: 0.3, dimension: 0.2, dimension_width: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub count: u32,
    pub mean_reward: f64,
    pub feature_digest: String,
    /// Best-scoring action of this estimator in the session.
    pub representative_action: ActionTuple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub session_id: String,
    pub model_id: String,
    pub timestamp: u64,
    pub task: Task,
    pub d_in: u32,
    pub problem_features: Vec<f64>,
    pub best_action: ActionTuple,
    pub best_reward: f64,
    pub per_arm_stats: BTreeMap<Estimator, ArmStats>,
}

/// d/50, log10 N / 7, task one-hot, family fractions, then structural flags.
pub fn problem_features(ps: &ProblemScheme) -> Vec<f64> {
    let x = &ps.context;
    let d = x.dist_family.len().max(1) as f64;
    let frac = |f: DistFamily| x.dist_family.iter().filter(|g| **g == f).count() as f64 / d;
    let b = |v: bool| if v { 1.0 } else { 0.0 };
    vec![
        x.d_in as f64 / 50.0,
        (x.n_budget.max(1) as f64).log10() / 7.0,
        b(x.task == Task::SA),
        b(x.task == Task::UQ),
        frac(DistFamily::Uniform),
        frac(DistFamily::Normal),
        frac(DistFamily::Other),
        b(x.multi_output_flag),
        b(ps.high_d_in_flag),
        b(ps.has_dependence),
        b(ps.field_out_flag),
    ]
}

fn raw_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn similarity_with(w: &SimilarityWeights, ps: &ProblemScheme, entry: &ArchiveEntry) -> f64 {
    let cos = raw_cosine(&problem_features(ps), &entry.problem_features);
    let task = if ps.context.task == entry.task { 1.0 } else { 0.0 };
    let dd = (ps.context.d_in as f64 - entry.d_in as f64).abs();
    (w.cosine * cos + w.task * task + w.dimension * (-dd / w.dimension_width).exp()).clamp(0.0, 1.0)
}

pub fn similarity(ps: &ProblemScheme, entry: &ArchiveEntry) -> f64 {
    similarity_with(&SimilarityWeights::default(), ps, entry)
}

#[derive(Debug, Serialize, Deserialize)]
struct ArchiveFile {
    schema_version: u32,
    entries: Vec<ArchiveEntry>,
    policy: Option<PolicySnapshot>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub entries: Vec<ArchiveEntry>,
    pub policy: Option<PolicySnapshot>,
    pub weights: SimilarityWeights,
    pub path: Option<PathBuf>,
}

fn lock_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".lock");
    PathBuf::from(p)
}

fn io_err(path: &Path, source: std::io::Error) -> PersistError {
    PersistError::Io { path: path.display().to_string(), source }
}

impl Archive {
    pub fn in_memory() -> Self {
        Archive::default()
    }

    /// A missing file is an empty archive bound to that path.
    pub fn load(path: &Path) -> Result<Archive, LoadError> {
        let mut a = Archive { path: Some(path.to_path_buf()), ..Default::default() };
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(a),
            Err(source) => return Err(LoadError::Io { path: path.display().to_string(), source }),
        };
        let file: ArchiveFile = serde_json::from_str(&text)
            .map_err(|e| LoadError::Corrupt { path: path.display().to_string(), reason: e.to_string() })?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(LoadError::Version(file.schema_version));
        }
        a.entries = file.entries;
        a.entries.sort_by_key(|e| e.timestamp);
        a.policy = file.policy;
        Ok(a)
    }

    pub fn to_json(&self) -> Result<String, PersistError> {
        let file = ArchiveFile { schema_version: SCHEMA_VERSION, entries: self.entries.clone(), policy: self.policy.clone() };
        let v = serde_json::to_value(&file).map_err(|e| PersistError::Encode(e.to_string()))?;
        serde_json::to_string_pretty(&v).map_err(|e| PersistError::Encode(e.to_string()))
    }

    /// Writes under an exclusive lock via a temp file and rename.
    pub fn persist(&self) -> Result<(), PersistError> {
        let path = self.path.as_deref().ok_or(PersistError::NoPath)?;
        let text = self.to_json()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let lp = lock_path(path);
        let lock = OpenOptions::new().create(true).truncate(false).write(true).open(&lp).map_err(|e| io_err(&lp, e))?;
        lock.lock().map_err(|e| io_err(&lp, e))?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        let result = (|| {
            let mut f = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
            f.write_all(text.as_bytes()).map_err(|e| io_err(&tmp, e))?;
            f.sync_all().map_err(|e| io_err(&tmp, e))?;
            fs::rename(&tmp, path).map_err(|e| io_err(path, e))
        })();
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        let _ = lock.unlock();
        result
    }

    pub fn similarity(&self, ps: &ProblemScheme, entry: &ArchiveEntry) -> f64 {
        similarity_with(&self.weights, ps, entry)
    }

    /// Most similar entry; the newest wins ties.
    pub fn lookup(&self, ps: &ProblemScheme) -> Option<(&ArchiveEntry, f64)> {
        let mut best: Option<(&ArchiveEntry, f64)> = None;
        for e in &self.entries {
            let s = self.similarity(ps, e);
            if best.map(|(b, bs)| s > bs || (s == bs && e.timestamp >= b.timestamp)).unwrap_or(true) {
                best = Some((e, s));
            }
        }
        best
    }

    fn next_timestamp(&self) -> u64 {
        self.entries.iter().map(|e| e.timestamp + 1).max().unwrap_or(0)
    }

    pub fn entry_from_trace(&self, trace: &SessionTrace) -> Result<ArchiveEntry, PersistError> {
        let ps = &trace.problem;
        let features = problem_features(ps);
        let best = trace
            .iterations
            .iter()
            .fold(None, |acc: Option<&crate::pipeline::IterationRecord>, r| match acc {
                Some(b) if b.reward.total >= r.reward.total => Some(b),
                _ => Some(r),
            })
            .ok_or(PersistError::EmptyTrace)?;
        let mut arms: BTreeMap<Estimator, (u32, f64, &ActionTuple, f64)> = BTreeMap::new();
        for r in &trace.iterations {
            let Ok(e) = r.action.estimator() else { continue };
            let slot = arms.entry(e).or_insert((0, 0.0, &r.action, f64::NEG_INFINITY));
            slot.0 += 1;
            slot.1 += r.reward.total;
            if r.reward.total > slot.3 {
                slot.2 = &r.action;
                slot.3 = r.reward.total;
            }
        }
        let per_arm_stats = arms
            .into_iter()
            .map(|(e, (count, sum, rep, _))| {
                let mut h = Sha256::new();
                h.update(serde_json::to_string(&features).unwrap_or_default());
                h.update(rep.key());
                let stats = ArmStats {
                    count,
                    mean_reward: sum / count as f64,
                    feature_digest: hex::encode(h.finalize()),
                    representative_action: rep.clone(),
                };
                (e, stats)
            })
            .collect();
        Ok(ArchiveEntry {
            session_id: trace.session_id.clone(),
            model_id: ps.model_id.clone(),
            timestamp: self.next_timestamp(),
            task: ps.context.task,
            d_in: ps.context.d_in,
            problem_features: features,
            best_action: best.action.clone(),
            best_reward: best.reward.total.clamp(0.0, 100.0),
            per_arm_stats,
        })
    }

    /// Appends the session and, when bound to a file, persists. On a write
    /// failure the in-memory archive is left as it was.
    pub fn record_session(&mut self, trace: &SessionTrace, policy: Option<PolicySnapshot>) -> Result<(), PersistError> {
        let entry = self.entry_from_trace(trace)?;
        let mut next = self.clone();
        next.entries.push(entry);
        if policy.is_some() {
            next.policy = policy;
        }
        if next.path.is_some() {
            next.persist()?;
        }
        *self = next;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_space::ActionSpace;
    use crate::estimators::benchmark_catalog;
    use crate::schemes::build_problem_scheme;
    use proptest::prelude::*;

    pub(crate) fn scheme_for(model: &str, n: u64) -> ProblemScheme {
        let m = benchmark_catalog().get(model).unwrap();
        build_problem_scheme(&m.describe(n, 0.05, ""), &ActionSpace::default()).unwrap()
    }

    pub(crate) fn entry_for(ps: &ProblemScheme, ts: u64, reward: f64) -> ArchiveEntry {
        let a = ActionTuple::new(Task::SA, &["MonteCarlo", "Sobol", "Fixed_N", "Scalar"]);
        ArchiveEntry {
            session_id: format!("s{ts}"),
            model_id: ps.model_id.clone(),
            timestamp: ts,
            task: ps.context.task,
            d_in: ps.context.d_in,
            problem_features: problem_features(ps),
            best_action: a.clone(),
            best_reward: reward,
            per_arm_stats: BTreeMap::from([(
                Estimator::Sobol,
                ArmStats { count: 2, mean_reward: reward, feature_digest: "x".into(), representative_action: a },
            )]),
        }
    }

    #[test]
    fn identical_scheme_is_one() {
        let ps = scheme_for("cantilever_beam", 20000);
        assert!((similarity(&ps, &entry_for(&ps, 0, 90.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn beam_budget_change_is_close() {
        let a = scheme_for("cantilever_beam", 20000);
        let b = scheme_for("cantilever_beam", 25000);
        let s = similarity(&a, &entry_for(&b, 0, 90.0));
        // Frozen value of the composite for this pair.
        assert!((s - 0.999_983_204_347).abs() < 1e-9, "{s}");
        assert!(s >= 0.95);
    }

    #[test]
    fn beam_vs_thermal_is_anomalous() {
        let beam = scheme_for("cantilever_beam", 20000);
        let thermal = scheme_for("thermal_stub", 20000);
        let s = similarity(&thermal, &entry_for(&beam, 0, 90.0));
        assert!(s < 0.70, "{s}");
    }

    #[test]
    fn lookup_rules() {
        let beam = scheme_for("cantilever_beam", 20000);
        let g8 = scheme_for("g_function_8", 15000);
        let mut a = Archive::default();
        assert!(a.lookup(&beam).is_none());
        a.entries.push(entry_for(&beam, 0, 80.0));
        a.entries.push(entry_for(&beam, 1, 90.0));
        assert_eq!(a.lookup(&beam).unwrap().0.timestamp, 1);
        a.entries.push(entry_for(&g8, 2, 70.0));
        let (e, s) = a.lookup(&beam).unwrap();
        assert_eq!(e.model_id, "cantilever_beam");
        let max = a.entries.iter().map(|e| similarity(&beam, e)).fold(0.0, f64::max);
        assert_eq!(s, max);
    }

    #[test]
    fn persist_round_trip_and_corrupt_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("archive.json");
        let ps = scheme_for("cantilever_beam", 20000);
        let mut a = Archive::load(&path).unwrap();
        assert!(a.entries.is_empty());
        a.entries.push(entry_for(&ps, 0, 91.5));
        a.persist().unwrap();
        let b = Archive::load(&path).unwrap();
        assert_eq!(a, b);

        fs::write(&path, "{not json").unwrap();
        assert!(matches!(Archive::load(&path), Err(LoadError::Corrupt { .. })));
        assert_eq!(fs::read_to_string(&path).unwrap(), "{not json");
    }

    proptest! {
        #[test]
        fn similarity_bounded_and_symmetric(n1 in 100u64..1_000_000, n2 in 100u64..1_000_000, m in 0usize..4) {
            let models = ["cantilever_beam", "g_function_8", "thermal_stub", "ishigami"];
            let a = scheme_for(models[m], n1);
            let b = scheme_for(models[(m + 1) % 4], n2);
            let s_ab = similarity(&a, &entry_for(&b, 0, 50.0));
            let s_ba = similarity(&b, &entry_for(&a, 0, 50.0));
            prop_assert!((0.0..=1.0).contains(&s_ab));
            prop_assert!((s_ab - s_ba).abs() < 1e-12);
        }
    }
}
