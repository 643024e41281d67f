use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::models::BenchmarkModel;
use super::sampling::{input_matrix, unit_matrix, SamplingStrategy};
use super::sobol::evaluate_rows;
use super::{ExecWarning, ExecutionError, OutputTreatment, SAResult, Severity, DEGENERATE_VARIANCE};
use crate::action_space::Estimator;

/// 1-based ranks with ties given their average position.
pub(crate) fn midranks(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| y[*a].total_cmp(&y[*b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && y[order[j + 1]] == y[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

pub(crate) fn argsort(x: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|a, b| x[*a].total_cmp(&x[*b]).then(a.cmp(b)));
    order
}

/// xi_n = 1 - 3 sum |r_(j+1) - r_(j)| / (n^2 - 1), pairs ordered by x.
pub fn chatterjee_xi(x: &[f64], y_ranks: &[f64]) -> f64 {
    let n = x.len();
    let order = argsort(x);
    let s: f64 = order.windows(2).map(|w| (y_ranks[w[1]] - y_ranks[w[0]]).abs()).sum();
    1.0 - 3.0 * s / ((n * n) as f64 - 1.0)
}

pub(crate) fn variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
}

pub(crate) fn given_data(
    m: &BenchmarkModel,
    n: usize,
    seed: u64,
    strategy: SamplingStrategy,
    treatment: OutputTreatment,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = unit_matrix(n, m.d_in, strategy, &mut rng);
    let x = input_matrix(m, &u);
    let y = evaluate_rows(m, &x, treatment);
    let cols = (0..m.d_in).map(|i| (0..n).map(|r| x[r * m.d_in + i]).collect()).collect();
    (cols, y)
}

pub fn chatterjee(
    m: &BenchmarkModel,
    n: usize,
    seed: u64,
    strategy: SamplingStrategy,
    treatment: OutputTreatment,
) -> Result<SAResult, ExecutionError> {
    if n < 10 {
        return Err(ExecutionError::InsufficientSamples { estimator: Estimator::Chatterjee, got: n as u64, required: 10 });
    }
    let (cols, y) = given_data(m, n, seed, strategy, treatment);
    let mut r = SAResult::empty(Estimator::Chatterjee);
    r.evaluations_used = n as u64;
    let xi: Vec<f64> = if variance(&y) < DEGENERATE_VARIANCE {
        r.warnings.push(ExecWarning::new("degenerate_output_variance", Severity::Critical, "constant output"));
        vec![f64::NAN; m.d_in]
    } else {
        let ranks = midranks(&y);
        cols.iter().map(|c| chatterjee_xi(c, &ranks)).collect()
    };
    for (i, v) in xi.iter().enumerate() {
        if *v < 0.0 {
            r.warnings.push(ExecWarning::new(
                "negative_index",
                Severity::Warning,
                format!("X{} index is negative ({v:.4}), violating non-negativity", i + 1),
            ));
        }
    }
    r.rank_indices = Some(xi);
    r.refresh_nan_count();
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::models::{structural_eq3, BenchmarkModel, InputDist};

    fn unit(d: usize) -> Vec<InputDist> {
        vec![InputDist::Uniform { low: 0.0, high: 1.0 }; d]
    }

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn identity_dependence_is_near_one() {
        let m = BenchmarkModel::scalar_fn("id", unit(2), |x| x[0]);
        let r = chatterjee(&m, 10_000, 4, SamplingStrategy::MonteCarlo, OutputTreatment::Scalar).unwrap();
        let xi = r.rank_indices.unwrap();
        assert!(xi[0] >= 0.95, "{xi:?}");
        assert!(xi[1].abs() < 0.05, "{xi:?}");
        assert_eq!(r.evaluations_used, 10_000);
    }

    #[test]
    fn eq3_ordering() {
        let r = chatterjee(&structural_eq3(), 10_000, 0, SamplingStrategy::MonteCarlo, OutputTreatment::Scalar).unwrap();
        let xi = r.rank_indices.unwrap();
        assert!(xi[0] > xi[1] && xi[1] > xi[2] && xi[2] > xi[3], "{xi:?}");
        assert!(xi[3].abs() < 0.03, "{xi:?}");
    }

    #[test]
    fn monotone_transform_invariance() {
        let m1 = BenchmarkModel::scalar_fn("a", unit(3), |x| x[0] + 0.5 * x[1] * x[2]);
        let m2 = BenchmarkModel::scalar_fn("b", unit(3), |x| (x[0] + 0.5 * x[1] * x[2]).powi(3).exp());
        let a = chatterjee(&m1, 500, 2, SamplingStrategy::MonteCarlo, OutputTreatment::Scalar).unwrap();
        let b = chatterjee(&m2, 500, 2, SamplingStrategy::MonteCarlo, OutputTreatment::Scalar).unwrap();
        assert_eq!(a.rank_indices, b.rank_indices);
    }

    #[test]
    fn needs_ten_samples() {
        let m = BenchmarkModel::scalar_fn("id", unit(1), |x| x[0]);
        assert!(matches!(
            chatterjee(&m, 9, 0, SamplingStrategy::MonteCarlo, OutputTreatment::Scalar),
            Err(ExecutionError::InsufficientSamples { required: 10, .. })
        ));
    }
}
