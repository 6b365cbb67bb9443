//! The test-time protocol shared by the command-line tools and the
//! acceptance suite: per-image ground truth in every representation the
//! metrics need, sample sources for each method, and the derived reports.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baseline::{constant_velocity_baseline, first_offsets};
use super::parzen::{gridsearch_bandwidth, SampleDistances};
use super::stats::{bootstrap_se, mean};
use crate::codec::{decode_field, encode_field, split_normalize, NormalizedSpectral, SpectralField};
use crate::error::{invalid, Error, Result};
use crate::model::{latent_interpolate, CvaeModel, Prediction};
use crate::nn::ParamStore;
use crate::scalar::sq_dist;
use crate::scene::{nearest_field, SceneSample, SceneSpec};

/// One scene prepared for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalImage {
    pub features: Vec<f64>,
    pub target: NormalizedSpectral<f64>,
    /// Ground truth in recombined spectral coordinates.
    pub spectral: Vec<f64>,
    /// Noise-free renders of every mode of the scene type, spectral.
    pub modes: Vec<Vec<f64>>,
    pub mode_id: usize,
}

impl EvalImage {
    pub fn gt_mags(&self) -> [f64; 2] {
        [self.target.mag_x, self.target.mag_y]
    }
}

pub fn eval_images(spec: &SceneSpec, k: usize, samples: &[SceneSample]) -> Result<Vec<EvalImage>> {
    samples
        .par_iter()
        .map(|s| {
            let spectral = encode_field(&s.trajectory, k)?;
            let modes = s
                .mode_renders(spec)?
                .iter()
                .map(|f| Ok(encode_field(f, k)?.into_vec()))
                .collect::<Result<Vec<_>>>()?;
            Ok(EvalImage {
                features: s.features.clone(),
                target: split_normalize(&spectral),
                spectral: spectral.into_vec(),
                modes,
                mode_id: s.mode_id,
            })
        })
        .collect()
}

/// Fraction of predictions nearest to each mode.
pub fn mode_fractions(preds: &[Prediction<f64>], modes: &[Vec<f64>]) -> Vec<f64> {
    let mut counts = vec![0usize; modes.len()];
    for p in preds {
        counts[nearest_field(&p.spectral(), modes)] += 1;
    }
    counts.iter().map(|&c| c as f64 / preds.len() as f64).collect()
}

/// `||prediction|| / ||generating mode||` in spectral coordinates.
pub fn collapse_ratio(pred: &Prediction<f64>, image: &EvalImage) -> f64 {
    let mode = &image.modes[image.mode_id];
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    norm(&pred.spectral()) / norm(mode)
}

/// Constant-velocity extrapolation of the first frame of a deterministic
/// prediction, returned in the model's output representation.
pub fn constant_velocity_prediction(
    source: &Prediction<f64>,
    height: usize,
    width: usize,
    k: usize,
    horizon: usize,
) -> Result<Prediction<f64>> {
    let field = decode_field(&SpectralField::from_vec(height, width, k, source.spectral())?, horizon)?;
    let cv = constant_velocity_baseline(&first_offsets(&field), height, width, horizon)?;
    let ns = split_normalize(&encode_field(&cv, k)?);
    Ok(Prediction {
        direction: ns.direction.into_vec(),
        mag_x: ns.mag_x,
        mag_y: ns.mag_y,
    })
}

/// Which data a method's Parzen bandwidths were fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthFit {
    Val,
    Test,
}

impl fmt::Display for BandwidthFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BandwidthFit::Val => "val",
            BandwidthFit::Test => "test",
        })
    }
}

impl FromStr for BandwidthFit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "val" => Ok(BandwidthFit::Val),
            "test" => Ok(BandwidthFit::Test),
            other => invalid(format!("bandwidth fit must be val or test, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodNll {
    pub method: String,
    pub h_dir: f64,
    pub h_mag: f64,
    pub fit: BandwidthFit,
    /// Negative log-likelihood per test image.
    pub per_image: Vec<f64>,
}

impl MethodNll {
    pub fn mean(&self) -> f64 {
        mean(&self.per_image)
    }
}

/// Grid-searches bandwidths on `fit_sets` and scores `test_sets`.
pub fn method_nll(
    method: &str,
    test_sets: &[SampleDistances],
    fit_sets: &[SampleDistances],
    fit: BandwidthFit,
    h_dir_grid: &[f64],
    h_mag_grid: &[f64],
) -> Result<MethodNll> {
    let (h_dir, h_mag) = gridsearch_bandwidth(fit_sets, h_dir_grid, h_mag_grid)?;
    let per_image = test_sets
        .iter()
        .map(|s| Ok(-s.log_likelihood(h_dir, h_mag)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(MethodNll {
        method: method.to_string(),
        h_dir,
        h_mag,
        fit,
        per_image,
    })
}

/// Paired per-image difference `other - reference` with its bootstrap SE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedGap {
    pub mean: f64,
    pub se: f64,
}

impl PairedGap {
    /// Whether `reference` is better by more than `sigmas` standard errors.
    pub fn significant(&self, sigmas: f64) -> bool {
        self.mean > sigmas * self.se
    }
}

pub fn paired_gap(reference: &MethodNll, other: &MethodNll, resamples: usize, seed: u64) -> Result<PairedGap> {
    if reference.per_image.len() != other.per_image.len() {
        return invalid("methods were scored on different image sets");
    }
    let diffs: Vec<f64> = other
        .per_image
        .iter()
        .zip(&reference.per_image)
        .map(|(o, r)| o - r)
        .collect();
    Ok(PairedGap {
        mean: mean(&diffs),
        se: bootstrap_se(&diffs, resamples, seed)?,
    })
}

/// Outcome of decoding along the line between the posterior means of a
/// scene's first two modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationProbe {
    /// Nearest mode at each step.
    pub path_modes: Vec<usize>,
    pub z_a: Vec<f64>,
    pub z_b: Vec<f64>,
}

impl InterpolationProbe {
    pub fn endpoints_correct(&self) -> bool {
        self.path_modes.first() == Some(&0) && self.path_modes.last() == Some(&1)
    }
}

pub fn interpolation_probe(
    model: &CvaeModel,
    params: &ParamStore<f64>,
    image: &EvalImage,
    steps: usize,
) -> Result<(InterpolationProbe, Vec<Prediction<f64>>)> {
    if image.modes.len() < 2 {
        return invalid("interpolation probe needs a scene with at least two modes");
    }
    let cfg = model.config();
    let code = model.image_tower(params, &image.features)?;
    let posterior_mean = |m: &Vec<f64>| -> Result<Vec<f64>> {
        let target = split_normalize(&SpectralField::from_vec(cfg.height, cfg.width, cfg.k, m.clone())?);
        Ok(model.encode(params, &code, &target)?.mu)
    };
    let z_a = posterior_mean(&image.modes[0])?;
    let z_b = posterior_mean(&image.modes[1])?;
    let path = latent_interpolate(model, params, &image.features, &z_a, &z_b, steps)?;
    let path_modes = path
        .iter()
        .map(|p| nearest_field(&p.spectral(), &image.modes))
        .collect();
    Ok((InterpolationProbe { path_modes, z_a, z_b }, path))
}

/// Distance from a prediction to the ground truth in spectral coordinates.
pub fn spectral_distance(pred: &Prediction<f64>, image: &EvalImage) -> f64 {
    sq_dist(&pred.spectral(), &image.spectral).sqrt()
}
