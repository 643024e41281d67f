//! Deterministic text renderings of schemes, plans and observations. These
//! are the strings the checkpoints embed.

use crate::action_space::Estimator;
use crate::estimators::{Observation, SAResult};
use crate::schemes::{estimator_info, ContextVector, IndexType, MethodScheme, ProblemScheme, SamplingScheme};

use super::ExecutionPlan;

pub(crate) fn camel(attr: &str) -> String {
    attr.split('_')
        .filter(|p| !p.is_empty())
        .map(|p| {
            let mut c = p.chars();
            match c.next() {
                Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
                None => String::new(),
            }
        })
        .collect()
}

/// Class name without its module path.
pub fn short_class(library_class: &str) -> &str {
    library_class.rsplit('.').next().unwrap_or(library_class)
}

pub(crate) fn index_word(t: IndexType) -> &'static str {
    match t {
        IndexType::VarianceBased => "VarianceDecomposition",
        IndexType::RankBased => "RankCorrelation",
        IndexType::Screening => "ElementaryEffects",
        IndexType::Moments => "MomentPropagation",
    }
}

fn sampling_word(s: SamplingScheme) -> &'static str {
    match s {
        SamplingScheme::PickFreeze => "PickFreeze",
        SamplingScheme::GivenData => "GivenData",
        SamplingScheme::WindingStairs => "WindingStairs",
        SamplingScheme::Regression => "Regression",
        SamplingScheme::Direct => "DirectSampling",
    }
}

/// Method identity only; CP7 compares two of these.
pub fn method_signature(e: Estimator) -> String {
    let info = estimator_info(e);
    format!(
        "{} {} {} {}",
        e.as_str(),
        short_class(info.library_class),
        index_word(info.index_type),
        sampling_word(info.sampling_scheme)
    )
}

pub fn context_text(x: &ContextVector) -> String {
    let mut dists: Vec<String> = x.dist_family.iter().map(|d| format!("{d:?}")).collect();
    dists.dedup();
    format!(
        "{:?} task with {} inputs and {} outputs, budget {} evaluations, tolerance {}; input distributions {}",
        x.task,
        x.d_in,
        x.d_out,
        x.n_budget,
        x.epsilon,
        dists.join(" ")
    )
}

pub fn problem_text(ps: &ProblemScheme) -> String {
    let feasible: Vec<&str> = ps
        .feasible_sa_estimators
        .iter()
        .chain(&ps.feasible_uq_estimators)
        .map(|e| e.as_str())
        .collect();
    format!(
        "model {} {}; {:?} output, {:?} structure; feasible estimators {}",
        ps.model_id,
        context_text(&ps.context),
        ps.output_class,
        ps.model_class,
        feasible.join(" ")
    )
}

/// What the user typed when the description carries no request.
pub fn default_request(ps: &ProblemScheme) -> String {
    let x = &ps.context;
    format!(
        "Run a {:?} study of model {} with {} uncertain inputs and {} output, budget {} evaluations, tolerance {}",
        x.task, ps.model_id, x.d_in, x.d_out, x.n_budget, x.epsilon
    )
}

pub fn strategy_text(ms: &MethodScheme) -> String {
    let outputs: Vec<String> = ms.required_attributes.iter().map(|a| camel(a)).collect();
    let hp: Vec<String> = ms.hyperparams.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!(
        "Selected {} via {} for {} producing {}; {}; sampling {}, budget allocation {}, output {}",
        ms.estimator.as_str(),
        short_class(&ms.library_class),
        index_word(ms.index_type),
        outputs.join(" "),
        hp.join(" "),
        ms.action.dim(0),
        ms.action.dim(2),
        ms.action.dim(3)
    )
}

/// Cell map of the Study Agent: which class, which attributes, which settings.
pub fn cell_map_text(estimator: Estimator, library_class: &str, bindings: &[String], hyperparams: &[(String, u64)]) -> String {
    let cls = short_class(library_class);
    let outs: Vec<String> = bindings.iter().map(|a| camel(a)).collect();
    let hp: Vec<String> = hyperparams.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!(
        "import {cls}; configure {est} {}; run {est} {cls} {}; save {}",
        hp.join(" "),
        index_word(estimator_info(estimator).index_type),
        outs.join(" "),
        est = estimator.as_str()
    )
}

/// The plan printed as the code it stands for.
pub fn plan_code(plan: &ExecutionPlan) -> String {
    let cls = short_class(estimator_info(plan.estimator).library_class);
    let hp: Vec<String> = plan.hyperparams.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let reads: Vec<String> = plan.output_bindings.iter().map(|a| format!("{cls}.{}", camel(a))).collect();
    format!(
        "{cls}({model}, {hp}).run() # {est}\nsave({reads})",
        model = plan.model_id,
        hp = hp.join(", "),
        est = plan.estimator.as_str(),
        reads = reads.join(", ")
    )
}

fn fmt_values(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| if x.is_nan() { "NaN".into() } else { format!("{x:.3}") }).collect();
    parts.join(" ")
}

pub fn result_text(r: &SAResult) -> String {
    let mut parts = vec![format!("{} evaluations {}", r.estimator.as_str(), r.evaluations_used)];
    for a in r.populated_attributes() {
        parts.push(format!("{} {}", camel(a), fmt_values(r.attribute(a).unwrap_or(&[]))));
    }
    for w in &r.warnings {
        parts.push(format!("warning {}", w.code));
    }
    parts.join("; ")
}

pub fn observation_text(obs: &Observation) -> String {
    match (&obs.result, &obs.error) {
        (Some(r), _) if obs.succeeded() => result_text(r),
        (_, Some(e)) => format!("{} execution failed: {e}", obs.intended.as_str()),
        _ => format!("{} produced no result", obs.intended.as_str()),
    }
}
