//! Parzen-window log-likelihood of a ground-truth field under a cloud of
//! model samples, with separate Gaussian bandwidths for the normalized
//! direction coordinates and for the two magnitudes.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::Prediction;
use crate::scalar::{sq_dist, Scalar};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParzenConfig {
    pub n_samples: usize,
    pub h_dir: Vec<f64>,
    pub h_mag: Vec<f64>,
}

impl Default for ParzenConfig {
    fn default() -> Self {
        let grid = log_grid(0.01, 10.0, 13);
        Self {
            n_samples: 800,
            h_dir: grid.clone(),
            h_mag: grid,
        }
    }
}

impl ParzenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return invalid("Parzen estimate needs at least one sample");
        }
        validate_grid("h_dir", &self.h_dir)?;
        validate_grid("h_mag", &self.h_mag)
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

fn validate_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return invalid(format!("{name} grid is empty"));
    }
    if grid.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
        return invalid(format!("{name} grid must hold positive finite bandwidths"));
    }
    Ok(())
}

/// Squared distances from one ground truth to every sample, split by
/// subspace. Bandwidth search only needs these, so they are computed once
/// per image.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDistances {
    pub dir_sq: Vec<f64>,
    pub mag_sq: Vec<f64>,
    pub dir_dim: usize,
    pub mag_dim: usize,
}

impl SampleDistances {
    pub fn new<S: Scalar>(samples: &[Prediction<S>], gt_dir: &[S], gt_mag: [S; 2]) -> Result<Self> {
        if samples.is_empty() {
            return invalid("Parzen estimate needs at least one sample");
        }
        if let Some(s) = samples.iter().find(|s| s.direction.len() != gt_dir.len()) {
            return invalid(format!(
                "sample direction has {} coordinates, ground truth has {}",
                s.direction.len(),
                gt_dir.len()
            ));
        }
        Ok(Self {
            dir_sq: samples.iter().map(|s| sq_dist(&s.direction, gt_dir).to_f64_lossy()).collect(),
            mag_sq: samples
                .iter()
                .map(|s| sq_dist(&[s.mag_x, s.mag_y], &gt_mag).to_f64_lossy())
                .collect(),
            dir_dim: gt_dir.len(),
            mag_dim: 2,
        })
    }

    pub fn len(&self) -> usize {
        self.dir_sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dir_sq.is_empty()
    }

    /// `log (1/N) sum_j N(gt_dir; s_j, h_dir^2 I) N(gt_mag; m_j, h_mag^2 I)`
    pub fn log_likelihood(&self, h_dir: f64, h_mag: f64) -> Result<f64> {
        if !(h_dir > 0.0 && h_mag > 0.0) {
            return invalid("bandwidths must be positive");
        }
        if self.is_empty() {
            return invalid("Parzen estimate needs at least one sample");
        }
        let norm = -0.5 * self.dir_dim as f64 * (LN_2PI + 2.0 * h_dir.ln())
            - 0.5 * self.mag_dim as f64 * (LN_2PI + 2.0 * h_mag.ln());
        let (a, b) = (0.5 / (h_dir * h_dir), 0.5 / (h_mag * h_mag));
        let logs: Vec<f64> = self
            .dir_sq
            .iter()
            .zip(&self.mag_sq)
            .map(|(d, m)| -a * d - b * m)
            .collect();
        Ok(norm + log_mean_exp(&logs))
    }
}

/// Fixed-point scale for [`log_mean_exp`]; leaves room for 2^31 terms in an i128.
const MEAN_EXP_SCALE: f64 = 79_228_162_514_264_337_593_543_950_336.0; // 2^96

/// `ln(mean(exp(v)))` with the shifted exponentials summed in fixed point.
/// Integer addition is associative, so the result is bit-identical under any
/// reordering of `v`, and duplicating every entry doubles both the sum and the
/// count exactly, leaving the quotient unchanged. Terms below `2^-96` of the
/// largest are dropped, far under `f64` resolution of the total.
fn log_mean_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let total: i128 = v.iter().map(|&x| ((x - max).exp() * MEAN_EXP_SCALE) as i128).sum();
    max + (total as f64 / (v.len() as f64 * MEAN_EXP_SCALE)).ln()
}

pub fn parzen_log_likelihood<S: Scalar>(
    samples: &[Prediction<S>],
    gt_dir: &[S],
    gt_mag: [S; 2],
    h_dir: f64,
    h_mag: f64,
) -> Result<f64> {
    SampleDistances::new(samples, gt_dir, gt_mag)?.log_likelihood(h_dir, h_mag)
}

/// Single-Gaussian density centred on a deterministic prediction; the
/// one-sample Parzen estimate.
pub fn regressor_likelihood<S: Scalar>(
    output: &Prediction<S>,
    gt_dir: &[S],
    gt_mag: [S; 2],
    h_dir: f64,
    h_mag: f64,
) -> Result<f64> {
    parzen_log_likelihood(std::slice::from_ref(output), gt_dir, gt_mag, h_dir, h_mag)
}

/// Order-independent mean: sorting first makes the floating-point sum
/// invariant to how the inputs are ordered.
pub(crate) fn stable_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// The bandwidth pair maximizing the mean log-likelihood over `sets`. Grid
/// points are visited in ascending order and replaced only on strict
/// improvement, so ties go to the smaller bandwidths.
pub fn gridsearch_bandwidth(sets: &[SampleDistances], h_dir: &[f64], h_mag: &[f64]) -> Result<(f64, f64)> {
    if sets.is_empty() {
        return invalid("bandwidth search needs at least one validation image");
    }
    validate_grid("h_dir", h_dir)?;
    validate_grid("h_mag", h_mag)?;
    let sorted = |g: &[f64]| {
        let mut g = g.to_vec();
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    };
    let (gd, gm) = (sorted(h_dir), sorted(h_mag));
    let mut best: Option<(f64, f64, f64)> = None;
    for &hd in &gd {
        for &hm in &gm {
            let lls = sets
                .iter()
                .map(|s| s.log_likelihood(hd, hm))
                .collect::<Result<Vec<_>>>()?;
            let mean = stable_mean(&lls);
            if best.is_none_or(|(b, _, _)| mean > b) {
                best = Some((mean, hd, hm));
            }
        }
    }
    let (_, hd, hm) = best.expect("grids are non-empty");
    Ok((hd, hm))
}
