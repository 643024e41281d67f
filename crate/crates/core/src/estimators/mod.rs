//! Numerical backends and the execution runner.

mod chatterjee;
mod cvm;
mod models;
mod morris;
mod runner;
mod sampling;
mod simulated;
mod sobol;

pub use chatterjee::{chatterjee, chatterjee_xi};
pub use cvm::{cvm, cvm_index};
pub use models::{benchmark_catalog, g_function, ishigami, G15_A, G8_A, BenchmarkModel, InputDist, ModelCatalog, ModelFn};
pub use morris::morris;
pub use runner::{execute_plan, modeled_runtime, runtime_baseline};
pub use sampling::{input_matrix, unit_matrix, SamplingStrategy};
pub use simulated::simulated_surrogate;
pub use sobol::sobol_saltelli;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_space::Estimator;

/// S1 below this is treated as a negative partial-variance estimate.
pub const NEGATIVE_INDEX_TOL: f64 = 0.05;
/// Output variance below this is degenerate.
pub const DEGENERATE_VARIANCE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputTreatment {
    Scalar,
    Aggregated,
}

impl OutputTreatment {
    pub fn parse(s: &str) -> OutputTreatment {
        if s.eq_ignore_ascii_case("aggregated") {
            OutputTreatment::Aggregated
        } else {
            OutputTreatment::Scalar
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warning,
    Critical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecWarning {
    pub code: String,
    pub message: String,
    pub severity: Severity,
    /// Set by the orchestrator when the Advisor's report mentions the code.
    #[serde(default)]
    pub addressed: bool,
}

impl ExecWarning {
    pub fn new(code: &str, severity: Severity, message: impl Into<String>) -> Self {
        ExecWarning { code: code.into(), message: message.into(), severity, addressed: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SAResult {
    pub estimator: Estimator,
    #[serde(with = "nan_vec", default)]
    pub s1: Option<Vec<f64>>,
    #[serde(with = "nan_vec", default)]
    pub st: Option<Vec<f64>>,
    #[serde(with = "nan_vec", default)]
    pub rank_indices: Option<Vec<f64>>,
    #[serde(with = "nan_vec", default)]
    pub cvm_indices: Option<Vec<f64>>,
    #[serde(with = "nan_vec", default)]
    pub mu_star: Option<Vec<f64>>,
    #[serde(with = "nan_vec", default)]
    pub sigma: Option<Vec<f64>>,
    #[serde(with = "nan_vec", default)]
    pub generalized_s1: Option<Vec<f64>>,
    #[serde(with = "nan_vec", default)]
    pub generalized_st: Option<Vec<f64>>,
    pub evaluations_used: u64,
    pub runtime_seconds: f64,
    pub warnings: Vec<ExecWarning>,
    pub nan_count: u32,
    pub negative_variance_flag: bool,
}

pub const ATTRIBUTE_NAMES: [&str; 8] = [
    "first_order_indices",
    "total_order_indices",
    "chatterjee_indices",
    "cvm_indices",
    "mu_star",
    "sigma",
    "generalized_first_order_indices",
    "generalized_total_order_indices",
];

impl SAResult {
    pub fn empty(estimator: Estimator) -> Self {
        SAResult {
            estimator,
            s1: None,
            st: None,
            rank_indices: None,
            cvm_indices: None,
            mu_star: None,
            sigma: None,
            generalized_s1: None,
            generalized_st: None,
            evaluations_used: 0,
            runtime_seconds: 0.0,
            warnings: Vec::new(),
            nan_count: 0,
            negative_variance_flag: false,
        }
    }

    pub fn attribute(&self, name: &str) -> Option<&[f64]> {
        let v = match name {
            "first_order_indices" => &self.s1,
            "total_order_indices" => &self.st,
            "chatterjee_indices" => &self.rank_indices,
            "cvm_indices" => &self.cvm_indices,
            "mu_star" => &self.mu_star,
            "sigma" => &self.sigma,
            "generalized_first_order_indices" => &self.generalized_s1,
            "generalized_total_order_indices" => &self.generalized_st,
            _ => return None,
        };
        v.as_deref()
    }

    fn slot(&mut self, name: &str) -> Option<&mut Option<Vec<f64>>> {
        Some(match name {
            "first_order_indices" => &mut self.s1,
            "total_order_indices" => &mut self.st,
            "chatterjee_indices" => &mut self.rank_indices,
            "cvm_indices" => &mut self.cvm_indices,
            "mu_star" => &mut self.mu_star,
            "sigma" => &mut self.sigma,
            "generalized_first_order_indices" => &mut self.generalized_s1,
            "generalized_total_order_indices" => &mut self.generalized_st,
            _ => return None,
        })
    }

    pub fn set_attribute(&mut self, name: &str, values: Vec<f64>) -> bool {
        match self.slot(name) {
            Some(s) => {
                *s = Some(values);
                true
            }
            None => false,
        }
    }

    pub fn populated_attributes(&self) -> Vec<&'static str> {
        ATTRIBUTE_NAMES.iter().copied().filter(|n| self.attribute(n).is_some()).collect()
    }

    /// Recount NaNs over every populated attribute.
    pub fn refresh_nan_count(&mut self) {
        self.nan_count = ATTRIBUTE_NAMES
            .iter()
            .filter_map(|n| self.attribute(n))
            .map(|v| v.iter().filter(|x| x.is_nan()).count() as u32)
            .sum();
    }

    pub fn has_critical_warning(&self) -> bool {
        self.warnings.iter().any(|w| w.severity == Severity::Critical)
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum ExecutionError {
    #[error("{estimator} needs at least {required} samples, plan has {got}")]
    InsufficientSamples { estimator: Estimator, got: u64, required: u64 },
    #[error("result object has no attribute '{name}'")]
    UnknownAttribute { name: String },
    #[error("unknown model '{id}'")]
    UnknownModel { id: String },
    #[error("invalid hyperparameter {name}={value}: {reason}")]
    InvalidHyperparameter { name: String, value: u64, reason: String },
    #[error("no numerical backend for {estimator}")]
    Unsupported { estimator: Estimator },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionStatus {
    Succeeded,
    Failed,
}

/// O_n: what came back from the execution runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub status: Option<ExecutionStatus>,
    /// Estimator named by the policy's action.
    pub intended: Estimator,
    /// Estimator the executed plan actually ran.
    pub executed: Option<Estimator>,
    pub n_samples: u64,
    pub result: Option<SAResult>,
    pub error: Option<ExecutionError>,
    /// Attributes the plan read from the result object.
    pub read_attributes: Vec<String>,
}

impl Observation {
    pub fn succeeded(&self) -> bool {
        self.status == Some(ExecutionStatus::Succeeded) && self.result.is_some()
    }

    pub fn warnings(&self) -> &[ExecWarning] {
        self.result.as_ref().map(|r| r.warnings.as_slice()).unwrap_or(&[])
    }
}

/// Serialises NaN entries as JSON null and back.
mod nan_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref()
            .map(|xs| xs.iter().map(|x| if x.is_finite() { Some(*x) } else { None }).collect::<Vec<_>>())
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
        let raw: Option<Vec<Option<f64>>> = Option::deserialize(d)?;
        Ok(raw.map(|xs| xs.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_round_trip_through_json() {
        let mut r = SAResult::empty(Estimator::Sobol);
        r.s1 = Some(vec![0.5, f64::NAN]);
        r.refresh_nan_count();
        assert_eq!(r.nan_count, 1);
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("[0.5,null]"));
        let back: SAResult = serde_json::from_str(&text).unwrap();
        assert!(back.s1.as_ref().unwrap()[1].is_nan());
        assert_eq!(back.populated_attributes(), vec!["first_order_indices"]);
    }
}
