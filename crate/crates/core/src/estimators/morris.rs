use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::models::{BenchmarkModel, InputDist};
use super::sobol::evaluate_rows;
use super::{ExecWarning, ExecutionError, OutputTreatment, SAResult, Severity};
use crate::action_space::Estimator;

fn grid_to_input(dist: &InputDist, u: f64, levels: usize) -> f64 {
    match dist {
        InputDist::Uniform { .. } => dist.from_unit(u),
        // Grid end points would map to infinity; use bin centres instead.
        InputDist::Normal { .. } => dist.from_unit((u * (levels - 1) as f64 + 0.5) / levels as f64),
    }
}

/// Elementary effects on a `levels`-point grid with step levels/(2(levels-1)).
/// Each trajectory moves one input at a time in random order; the step sign is
/// forced by the grid bounds.
pub fn morris(
    m: &BenchmarkModel,
    trajectories: usize,
    levels: usize,
    seed: u64,
    treatment: OutputTreatment,
) -> Result<SAResult, ExecutionError> {
    if trajectories < 2 {
        return Err(ExecutionError::InsufficientSamples {
            estimator: Estimator::Morris,
            got: trajectories as u64,
            required: 2,
        });
    }
    if levels < 4 || !levels.is_multiple_of(2) {
        return Err(ExecutionError::InvalidHyperparameter {
            name: "levels".into(),
            value: levels as u64,
            reason: "must be even and at least 4".into(),
        });
    }
    let d = m.d_in;
    let delta = levels as f64 / (2.0 * (levels - 1) as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(trajectories * (d + 1) * d);
    let mut steps = Vec::with_capacity(trajectories * d);
    for _ in 0..trajectories {
        let mut u: Vec<f64> = (0..d).map(|_| rng.random_range(0..levels) as f64 / (levels - 1) as f64).collect();
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(&mut rng);
        points.extend(u.iter().enumerate().map(|(i, v)| grid_to_input(&m.input_dists[i], *v, levels)));
        for &k in &order {
            let step = if u[k] + delta <= 1.0 + 1e-12 { delta } else { -delta };
            u[k] += step;
            steps.push((k, step));
            points.extend(u.iter().enumerate().map(|(i, v)| grid_to_input(&m.input_dists[i], *v, levels)));
        }
    }
    let f = evaluate_rows(m, &points, treatment);
    let mut effects: Vec<Vec<f64>> = vec![Vec::with_capacity(trajectories); d];
    for t in 0..trajectories {
        for s in 0..d {
            let (k, step) = steps[t * d + s];
            let base = t * (d + 1) + s;
            effects[k].push((f[base + 1] - f[base]) / step);
        }
    }
    let mut r = SAResult::empty(Estimator::Morris);
    r.evaluations_used = (trajectories * (d + 1)) as u64;
    r.mu_star = Some(effects.iter().map(|e| e.iter().map(|v| v.abs()).sum::<f64>() / e.len() as f64).collect());
    r.sigma = Some(
        effects
            .iter()
            .map(|e| {
                let mu = e.iter().sum::<f64>() / e.len() as f64;
                (e.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (e.len() - 1) as f64).sqrt()
            })
            .collect(),
    );
    if d == 1 {
        r.warnings.push(ExecWarning::new("screening_low_dim", Severity::Warning, "screening a single input is pointless"));
    }
    r.refresh_nan_count();
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::models::{g_function, G15_A};

    #[test]
    fn zero_coefficient_has_zero_effect() {
        let m = BenchmarkModel::scalar_fn("lin", vec![InputDist::Uniform { low: 0.0, high: 1.0 }; 2], |x| 3.0 * x[0]);
        let r = morris(&m, 20, 4, 1, OutputTreatment::Scalar).unwrap();
        let mu = r.mu_star.unwrap();
        assert!((mu[0] - 3.0).abs() < 1e-9);
        assert_eq!(mu[1], 0.0);
        assert!(r.sigma.unwrap()[0] < 1e-9);
    }

    #[test]
    fn g15_cost_and_ranking() {
        let m = g_function("g15", &G15_A);
        let r = morris(&m, 200, 4, 7, OutputTreatment::Scalar).unwrap();
        assert_eq!(r.evaluations_used, 3200);
        let mu = r.mu_star.unwrap();
        for w in mu[..6].windows(2) {
            assert!(w[0] > w[1], "{mu:?}");
        }
    }

    #[test]
    fn single_input_warns() {
        let m = BenchmarkModel::scalar_fn("one", vec![InputDist::Uniform { low: 0.0, high: 1.0 }], |x| x[0]);
        let r = morris(&m, 4, 4, 1, OutputTreatment::Scalar).unwrap();
        assert_eq!(r.warnings[0].code, "screening_low_dim");
    }

    #[test]
    fn normal_inputs_stay_finite() {
        let m = BenchmarkModel::scalar_fn("n", vec![InputDist::Normal { mean: 0.0, sd: 1.0 }; 3], |x| x.iter().sum());
        let r = morris(&m, 10, 4, 1, OutputTreatment::Scalar).unwrap();
        assert!(r.mu_star.unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn odd_levels_rejected() {
        let m = g_function("g", &[0.0, 1.0]);
        assert!(morris(&m, 4, 5, 1, OutputTreatment::Scalar).is_err());
    }
}
