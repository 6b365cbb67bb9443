//! Minimum-Euclidean-distance-over-n curves and the Gaussian sampler used to
//! turn a deterministic regressor into a sample source.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::Prediction;
use crate::scalar::{sq_dist, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinEdCurve {
    /// `values[n - 1]` is the mean over images of the closest of the first `n` samples.
    pub values: Vec<f64>,
    /// Per-image running minima, image-major.
    pub per_image: Vec<Vec<f64>>,
}

impl MinEdCurve {
    pub fn at(&self, n: usize) -> f64 {
        self.values[n - 1]
    }

    pub fn n_max(&self) -> usize {
        self.values.len()
    }
}

/// Decorrelates per-image seeds derived from one run seed.
pub fn image_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `sampler(image_index, n, seed)` must return `n` flattened spectral fields.
/// Each image draws `n_max` samples once; the value at `n` uses the first `n`.
pub fn min_ed_curve<S, F>(sampler: F, ground_truth: &[Vec<S>], n_max: usize, seed: u64) -> Result<MinEdCurve>
where
    S: Scalar,
    F: Fn(usize, usize, u64) -> Result<Vec<Vec<S>>> + Sync,
{
    if n_max == 0 {
        return invalid("min-ED curve needs n_max >= 1");
    }
    if ground_truth.is_empty() {
        return invalid("min-ED curve needs at least one test image");
    }
    let per_image: Vec<Vec<f64>> = ground_truth
        .par_iter()
        .enumerate()
        .map(|(i, gt)| {
            let samples = sampler(i, n_max, image_seed(seed, i))?;
            if samples.len() != n_max {
                return invalid(format!("sampler returned {} fields, expected {n_max}", samples.len()));
            }
            let mut best = f64::INFINITY;
            samples
                .iter()
                .map(|s| {
                    if s.len() != gt.len() {
                        return invalid("sample and ground truth differ in dimension");
                    }
                    best = best.min(sq_dist(s, gt).to_f64_lossy().sqrt());
                    Ok(best)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let values = (0..n_max)
        .map(|n| per_image.iter().map(|row| row[n]).sum::<f64>() / per_image.len() as f64)
        .collect();
    Ok(MinEdCurve { values, per_image })
}

/// `n` i.i.d. draws from `N(output, diag(h_dir^2, h_mag^2))`. Magnitudes are
/// not clipped: the density being sampled is the one the likelihood uses.
pub fn gaussian_sampler_around<S: Scalar>(
    output: &Prediction<S>,
    h_dir: f64,
    h_mag: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<Prediction<S>>> {
    if n == 0 {
        return invalid("need at least one sample");
    }
    if !(h_dir >= 0.0 && h_mag >= 0.0) {
        return invalid("bandwidths must be nonnegative");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |h: f64| {
        let e: f64 = StandardNormal.sample(&mut rng);
        S::lit(h * e)
    };
    Ok((0..n)
        .map(|_| Prediction {
            direction: output.direction.iter().map(|&d| d + draw(h_dir)).collect(),
            mag_x: output.mag_x + draw(h_mag),
            mag_y: output.mag_y + draw(h_mag),
        })
        .collect())
}
