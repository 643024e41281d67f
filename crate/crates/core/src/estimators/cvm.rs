use super::chatterjee::{argsort, given_data, variance};
use super::models::BenchmarkModel;
use super::sampling::SamplingStrategy;
use super::{ExecWarning, ExecutionError, OutputTreatment, SAResult, Severity, DEGENERATE_VARIANCE};
use crate::action_space::Estimator;

/// Cramer-von Mises index from given data.
///
/// Neighbouring points in x_i order stand in for a conditional replicate, so
/// P(Y <= t, Y' <= t) is estimated by the share of neighbour pairs whose
/// maximum is at most t. Cost is one sort per input plus binary searches.
pub fn cvm_index(x: &[f64], y: &[f64]) -> f64 {
    let n = y.len();
    let mut ys = y.to_vec();
    ys.sort_by(|a, b| a.total_cmp(b));
    let order = argsort(x);
    let mut maxima: Vec<f64> = order.windows(2).map(|w| y[w[0]].max(y[w[1]])).collect();
    maxima.sort_by(|a, b| a.total_cmp(b));
    let m = maxima.len() as f64;
    let nf = n as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for t in y {
        let f = ys.partition_point(|v| v <= t) as f64 / nf;
        let joint = maxima.partition_point(|v| v <= t) as f64 / m;
        num += joint - f * f;
        den += f * (1.0 - f);
    }
    num / den
}

pub fn cvm(
    m: &BenchmarkModel,
    n: usize,
    seed: u64,
    strategy: SamplingStrategy,
    treatment: OutputTreatment,
) -> Result<SAResult, ExecutionError> {
    if n < 10 {
        return Err(ExecutionError::InsufficientSamples { estimator: Estimator::CVM, got: n as u64, required: 10 });
    }
    let (cols, y) = given_data(m, n, seed, strategy, treatment);
    let mut r = SAResult::empty(Estimator::CVM);
    r.evaluations_used = n as u64;
    let idx = if variance(&y) < DEGENERATE_VARIANCE {
        r.warnings.push(ExecWarning::new("degenerate_output_variance", Severity::Critical, "constant output"));
        vec![f64::NAN; m.d_in]
    } else {
        cols.iter().map(|c| cvm_index(c, &y)).collect()
    };
    r.cvm_indices = Some(idx);
    r.refresh_nan_count();
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::models::{BenchmarkModel, InputDist};

    #[test]
    fn identity_and_independent_inputs() {
        let m = BenchmarkModel::scalar_fn("id", vec![InputDist::Uniform { low: 0.0, high: 1.0 }; 2], |x| x[0]);
        let r = cvm(&m, 5000, 1, SamplingStrategy::MonteCarlo, OutputTreatment::Scalar).unwrap();
        let s = r.cvm_indices.unwrap();
        assert!(s[0] > 0.95, "{s:?}");
        assert!(s[1].abs() < 0.05, "{s:?}");
    }

    #[test]
    fn additive_inputs_share() {
        let m = BenchmarkModel::scalar_fn("add", vec![InputDist::Uniform { low: 0.0, high: 1.0 }; 2], |x| x[0] + x[1]);
        let s = cvm(&m, 20_000, 3, SamplingStrategy::MonteCarlo, OutputTreatment::Scalar).unwrap().cvm_indices.unwrap();
        assert!((s[0] - s[1]).abs() < 0.05 && s[0] > 0.2 && s[0] < 0.6, "{s:?}");
    }
}
