use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::models::BenchmarkModel;
use super::sampling::{input_matrix, unit_matrix, SamplingStrategy};
use super::{ExecWarning, ExecutionError, OutputTreatment, SAResult, Severity, DEGENERATE_VARIANCE, NEGATIVE_INDEX_TOL};
use crate::action_space::Estimator;

pub(crate) fn evaluate_rows(m: &BenchmarkModel, xs: &[f64], t: OutputTreatment) -> Vec<f64> {
    xs.par_chunks(m.d_in).map(|row| m.scalar(row, t)).collect()
}

pub(crate) struct PickFreeze {
    pub s1: Vec<f64>,
    pub st: Vec<f64>,
    pub degenerate: bool,
}

/// Saltelli first-order (centred) and Jansen total-order estimates from
/// evaluations at A, B and the d column-substituted matrices AB_i.
pub(crate) fn pick_freeze_indices(fa: &[f64], fb: &[f64], fab: &[Vec<f64>]) -> PickFreeze {
    let n = fa.len() as f64;
    let f0 = (fa.iter().sum::<f64>() + fb.iter().sum::<f64>()) / (2.0 * n);
    let var = (fa.iter().chain(fb).map(|y| (y - f0).powi(2)).sum::<f64>()) / (2.0 * n);
    let d = fab.len();
    if !(var.is_finite() && var >= DEGENERATE_VARIANCE) {
        return PickFreeze { s1: vec![f64::NAN; d], st: vec![f64::NAN; d], degenerate: true };
    }
    let mut s1 = Vec::with_capacity(d);
    let mut st = Vec::with_capacity(d);
    for col in fab {
        let vi = fb.iter().zip(col).zip(fa).map(|((b, ab), a)| (b - f0) * (ab - a)).sum::<f64>() / n;
        let vt = fa.iter().zip(col).map(|(a, ab)| (a - ab).powi(2)).sum::<f64>() / (2.0 * n);
        s1.push(vi / var);
        st.push(vt / var);
    }
    PickFreeze { s1, st, degenerate: false }
}

pub(crate) fn run_pick_freeze(
    m: &BenchmarkModel,
    n: usize,
    seed: u64,
    strategy: SamplingStrategy,
    treatment: OutputTreatment,
) -> PickFreeze {
    let d = m.d_in;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ua = unit_matrix(n, d, strategy, &mut rng);
    let ub = unit_matrix(n, d, strategy, &mut rng);
    let xa = input_matrix(m, &ua);
    let xb = input_matrix(m, &ub);
    let fa = evaluate_rows(m, &xa, treatment);
    let fb = evaluate_rows(m, &xb, treatment);
    let fab: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let mut xab = xa.clone();
            for r in 0..n {
                xab[r * d + i] = xb[r * d + i];
            }
            evaluate_rows(m, &xab, treatment)
        })
        .collect();
    pick_freeze_indices(&fa, &fb, &fab)
}

pub fn sobol_saltelli(
    m: &BenchmarkModel,
    n: usize,
    seed: u64,
    strategy: SamplingStrategy,
    treatment: OutputTreatment,
) -> Result<SAResult, ExecutionError> {
    if n < 2 {
        return Err(ExecutionError::InsufficientSamples { estimator: Estimator::Sobol, got: n as u64, required: 2 });
    }
    let pf = run_pick_freeze(m, n, seed, strategy, treatment);
    let mut r = SAResult::empty(Estimator::Sobol);
    r.evaluations_used = (n * (m.d_in + 2)) as u64;
    if pf.degenerate {
        r.warnings.push(ExecWarning::new(
            "degenerate_output_variance",
            Severity::Critical,
            "output variance below 1e-14; indices undefined",
        ));
    } else {
        r.negative_variance_flag = pf.s1.iter().any(|s| *s < -NEGATIVE_INDEX_TOL);
        let sum: f64 = pf.s1.iter().sum();
        if sum > 1.0 {
            r.warnings.push(ExecWarning::new(
                "sum_s1_above_one",
                Severity::Info,
                format!("sum(S1)={sum:.3} exceeds 1"),
            ));
        }
    }
    r.s1 = Some(pf.s1);
    r.st = Some(pf.st);
    r.refresh_nan_count();
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::models::{g_function, BenchmarkModel, InputDist};

    fn additive() -> BenchmarkModel {
        BenchmarkModel::scalar_fn("add", vec![InputDist::Uniform { low: 0.0, high: 1.0 }; 2], |x| x[0] + x[1])
    }

    #[test]
    fn additive_model_splits_variance() {
        let r = sobol_saltelli(&additive(), 50_000, 1, SamplingStrategy::MonteCarlo, OutputTreatment::Scalar).unwrap();
        let s1 = r.s1.unwrap();
        let st = r.st.unwrap();
        for i in 0..2 {
            assert!((s1[i] - 0.5).abs() < 0.02, "{s1:?}");
            assert!((st[i] - s1[i]).abs() < 0.02, "{st:?}");
        }
        assert_eq!(r.evaluations_used, 200_000);
        assert_eq!(r.nan_count, 0);
    }

    #[test]
    fn constant_model_is_degenerate() {
        let m = BenchmarkModel::scalar_fn("c", vec![InputDist::Uniform { low: 0.0, high: 1.0 }; 3], |_| 4.2);
        let r = sobol_saltelli(&m, 100, 1, SamplingStrategy::MonteCarlo, OutputTreatment::Scalar).unwrap();
        assert!(!r.negative_variance_flag);
        assert!(r.s1.as_ref().unwrap().iter().all(|s| s.is_nan()));
        assert_eq!(r.nan_count, 6);
        assert!(r.has_critical_warning());
    }

    #[test]
    fn deterministic_given_seed() {
        let m = g_function("g", &[0.0, 1.0, 9.0]);
        let a = sobol_saltelli(&m, 500, 9, SamplingStrategy::LatinHypercube, OutputTreatment::Scalar).unwrap();
        let b = sobol_saltelli(&m, 500, 9, SamplingStrategy::LatinHypercube, OutputTreatment::Scalar).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            sobol_saltelli(&additive(), 1, 0, SamplingStrategy::MonteCarlo, OutputTreatment::Scalar),
            Err(ExecutionError::InsufficientSamples { required: 2, .. })
        ));
    }
}
