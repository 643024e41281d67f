use rand::Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use super::models::BenchmarkModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingStrategy {
    MonteCarlo,
    LatinHypercube,
}

impl SamplingStrategy {
    pub fn parse(s: &str) -> SamplingStrategy {
        if s.eq_ignore_ascii_case("latinhypercube") || s.eq_ignore_ascii_case("lhs") {
            SamplingStrategy::LatinHypercube
        } else {
            SamplingStrategy::MonteCarlo
        }
    }
}

/// Row-major n x d matrix of points in the open unit cube.
pub fn unit_matrix<R: Rng>(n: usize, d: usize, strategy: SamplingStrategy, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    match strategy {
        SamplingStrategy::MonteCarlo => {
            for v in out.iter_mut() {
                *v = rng.sample(Open01);
            }
        }
        SamplingStrategy::LatinHypercube => {
            let mut perm: Vec<usize> = (0..n).collect();
            for j in 0..d {
                for k in (1..n).rev() {
                    let s = rng.random_range(0..=k);
                    perm.swap(k, s);
                }
                for i in 0..n {
                    let u: f64 = rng.sample(Open01);
                    out[i * d + j] = (perm[i] as f64 + u) / n as f64;
                }
            }
        }
    }
    out
}

/// Maps a unit matrix through each input's inverse CDF.
pub fn input_matrix(model: &BenchmarkModel, unit: &[f64]) -> Vec<f64> {
    let d = model.d_in;
    unit.iter().enumerate().map(|(k, u)| model.input_dists[k % d].from_unit(*u)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lhs_stratifies_each_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 50;
        let m = unit_matrix(n, 3, SamplingStrategy::LatinHypercube, &mut rng);
        for j in 0..3 {
            let mut bins: Vec<usize> = (0..n).map(|i| (m[i * 3 + j] * n as f64) as usize).collect();
            bins.sort();
            assert_eq!(bins, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn monte_carlo_is_open_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = unit_matrix(1000, 2, SamplingStrategy::MonteCarlo, &mut rng);
        assert!(m.iter().all(|u| *u > 0.0 && *u < 1.0));
    }
}
