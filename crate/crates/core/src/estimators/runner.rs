use super::models::ModelCatalog;
use super::sampling::SamplingStrategy;
use super::{chatterjee, cvm, morris, simulated_surrogate, sobol_saltelli, ExecutionError, OutputTreatment, SAResult};
use crate::action_space::Estimator;
use crate::agents::ExecutionPlan;
use crate::schemes::cost_factor;

/// Seconds per unit of work in the runtime model.
const SECONDS_PER_UNIT: f64 = 1e-6;

/// Deterministic runtime model: one unit per model evaluation plus the
/// estimator's post-processing work. Wall-clock time is never read so traces
/// stay reproducible.
pub fn modeled_runtime(e: Estimator, n_samples: u64, d_in: u32) -> f64 {
    let n = n_samples as f64;
    let d = d_in as f64;
    let evals = n * cost_factor(e, d_in) as f64;
    let post = match e {
        Estimator::Chatterjee | Estimator::CVM => d * n * n.max(2.0).log2(),
        Estimator::PceSa | Estimator::PceMoments => 4.0 * d * n,
        _ => d * n,
    };
    (evals + post) * SECONDS_PER_UNIT
}

/// Runtime of the same estimator sized at its minimum sample rule.
pub fn runtime_baseline(e: Estimator, n_min_evaluations: u64, d_in: u32) -> f64 {
    let cf = cost_factor(e, d_in);
    modeled_runtime(e, n_min_evaluations.div_ceil(cf), d_in)
}

pub fn execute_plan(plan: &ExecutionPlan, catalog: &ModelCatalog) -> Result<SAResult, ExecutionError> {
    let model = catalog.get(&plan.model_id)?;
    let n = plan.n_samples() as usize;
    let strategy = SamplingStrategy::parse(&plan.sampling);
    let treatment = OutputTreatment::parse(&plan.output_treatment);
    let mut result = match plan.estimator {
        Estimator::Sobol => sobol_saltelli(&model, n, plan.seed, strategy, treatment)?,
        Estimator::Chatterjee => chatterjee(&model, n, plan.seed, strategy, treatment)?,
        Estimator::CVM => cvm(&model, n, plan.seed, strategy, treatment)?,
        Estimator::Morris => {
            let levels = plan.hyperparams.get("levels").copied().unwrap_or(4) as usize;
            morris(&model, n, levels, plan.seed, treatment)?
        }
        Estimator::PceSa | Estimator::GeneralizedSobol => {
            simulated_surrogate(&model, plan.estimator, n, plan.seed, strategy, treatment)?
        }
        other => return Err(ExecutionError::Unsupported { estimator: other }),
    };
    for name in &plan.output_bindings {
        if result.attribute(name).is_none() {
            return Err(ExecutionError::UnknownAttribute { name: name.clone() });
        }
    }
    result.runtime_seconds = modeled_runtime(plan.estimator, n as u64, model.d_in as u32);
    Ok(result)
}
