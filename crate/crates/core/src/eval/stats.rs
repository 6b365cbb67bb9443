use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Bootstrap standard error of the mean of `values`.
pub fn bootstrap_se(values: &[f64], resamples: usize, seed: u64) -> Result<f64> {
    if values.len() < 2 || resamples < 2 {
        return invalid("bootstrap needs at least two values and two resamples");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    let m = mean(&means);
    Ok((means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (resamples - 1) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bootstrap_matches_analytic_standard_error() {
        // Values 0..n-1: population sd / sqrt(n) is the large-sample target.
        let n = 400;
        let v: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let m = mean(&v);
        let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64).sqrt();
        let se = bootstrap_se(&v, 2000, 1).unwrap();
        let expect = sd / (n as f64).sqrt();
        assert!((se / expect - 1.0).abs() < 0.1, "{se} vs {expect}");
    }

    #[test]
    fn constant_values_have_zero_error() {
        assert_eq!(bootstrap_se(&[3.0; 10], 50, 0).unwrap(), 0.0);
        assert!(bootstrap_se(&[1.0], 50, 0).is_err());
    }
}
