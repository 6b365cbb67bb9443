//! Evaluation passes over a set of scenes. The subcommands write these
//! reports to disk and the acceptance suite checks them directly.

use dtp_core::eval::{
    collapse_ratio, constant_velocity_prediction, gaussian_sampler_around, image_seed, method_nll, min_ed_curve,
    mode_fractions, paired_gap, BandwidthFit, EvalImage, MethodNll, MinEdCurve, PairedGap, ParzenConfig,
    SampleDistances,
};
use dtp_core::io::CodecDims;
use dtp_core::model::{CvaeModel, ModelKind, Prediction};
use dtp_core::nn::ParamStore;
use dtp_core::{Error, Result};
use rayon::prelude::*;

/// Per-image summary of one large batch of CVAE samples. The samples
/// themselves are dropped as soon as these are computed.
#[derive(Debug, Clone)]
pub struct SampleStats {
    pub distances: SampleDistances,
    pub mode_fractions: Vec<f64>,
}

pub fn cvae_sample_stats(
    model: &CvaeModel,
    params: &ParamStore<f64>,
    images: &[EvalImage],
    n: usize,
    seed: u64,
) -> Result<Vec<SampleStats>> {
    images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let preds = model.sample_predictions(params, &img.features, n, image_seed(seed, i))?;
            Ok(SampleStats {
                distances: SampleDistances::new(&preds, img.target.direction.as_slice(), img.gt_mags())?,
                mode_fractions: mode_fractions(&preds, &img.modes),
            })
        })
        .collect()
}

/// Images on which every mode receives at least `min_fraction` of the samples.
pub fn covered_images(stats: &[SampleStats], min_fraction: f64) -> usize {
    stats
        .iter()
        .filter(|s| s.mode_fractions.iter().all(|&f| f >= min_fraction))
        .count()
}

pub fn regressor_outputs(
    model: &CvaeModel,
    params: &ParamStore<f64>,
    images: &[EvalImage],
) -> Result<Vec<Prediction<f64>>> {
    if model.kind() != ModelKind::Regressor {
        return Err(Error::InvalidArgument("expected a regressor checkpoint".into()));
    }
    images
        .par_iter()
        .map(|img| model.regressor_forward(params, &img.features))
        .collect()
}

pub fn constant_velocity_outputs(
    sources: &[Prediction<f64>],
    dims: CodecDims,
) -> Result<Vec<Prediction<f64>>> {
    sources
        .par_iter()
        .map(|p| constant_velocity_prediction(p, dims.height, dims.width, dims.k, dims.horizon))
        .collect()
}

pub fn point_distances(outputs: &[Prediction<f64>], images: &[EvalImage]) -> Result<Vec<SampleDistances>> {
    outputs
        .iter()
        .zip(images)
        .map(|(p, img)| SampleDistances::new(std::slice::from_ref(p), img.target.direction.as_slice(), img.gt_mags()))
        .collect()
}

/// Mean collapse ratio of deterministic outputs against each image's own mode.
pub fn mean_collapse(outputs: &[Prediction<f64>], images: &[EvalImage]) -> f64 {
    let total: f64 = outputs.iter().zip(images).map(|(p, img)| collapse_ratio(p, img)).sum();
    total / outputs.len() as f64
}

/// Distances for one method on the test set and on the bandwidth-fitting set.
pub struct MethodDistances<'a> {
    pub name: &'a str,
    pub test: &'a [SampleDistances],
    pub val: &'a [SampleDistances],
    pub fit: BandwidthFit,
}

impl MethodDistances<'_> {
    pub fn score(&self, parzen: &ParzenConfig) -> Result<MethodNll> {
        let fit_sets = match self.fit {
            BandwidthFit::Val => self.val,
            BandwidthFit::Test => self.test,
        };
        method_nll(self.name, self.test, fit_sets, self.fit, &parzen.h_dir, &parzen.h_mag)
    }
}

/// Likelihood table: the reference method first, every other method with
/// its paired gap to the reference.
#[derive(Debug, Clone)]
pub struct NllReport {
    pub reference: MethodNll,
    pub others: Vec<(MethodNll, PairedGap)>,
}

pub fn nll_report(
    reference: &MethodDistances<'_>,
    others: &[MethodDistances<'_>],
    parzen: &ParzenConfig,
    resamples: usize,
    seed: u64,
) -> Result<NllReport> {
    parzen.validate()?;
    let reference = reference.score(parzen)?;
    let others = others
        .iter()
        .map(|m| {
            let nll = m.score(parzen)?;
            let gap = paired_gap(&reference, &nll, resamples, seed)?;
            Ok((nll, gap))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NllReport { reference, others })
}

impl NllReport {
    pub fn rows(&self) -> Vec<(&MethodNll, Option<PairedGap>)> {
        std::iter::once((&self.reference, None))
            .chain(self.others.iter().map(|(m, g)| (m, Some(*g))))
            .collect()
    }
}

pub fn cvae_min_ed(
    model: &CvaeModel,
    params: &ParamStore<f64>,
    images: &[EvalImage],
    n_max: usize,
    seed: u64,
) -> Result<MinEdCurve> {
    let gts: Vec<Vec<f64>> = images.iter().map(|i| i.spectral.clone()).collect();
    min_ed_curve(
        |i, n, s| {
            Ok(model
                .sample_predictions(params, &images[i].features, n, s)?
                .iter()
                .map(Prediction::spectral)
                .collect())
        },
        &gts,
        n_max,
        seed,
    )
}

/// Min-ED curve of a deterministic method: every draw is its single output.
pub fn constant_min_ed(outputs: &[Prediction<f64>], images: &[EvalImage], n_max: usize) -> Result<MinEdCurve> {
    let gts: Vec<Vec<f64>> = images.iter().map(|i| i.spectral.clone()).collect();
    min_ed_curve(|i, n, _| Ok(vec![outputs[i].spectral(); n]), &gts, n_max, 0)
}

/// Min-ED curve of Gaussian draws around deterministic outputs.
pub fn gaussian_min_ed(
    outputs: &[Prediction<f64>],
    images: &[EvalImage],
    h_dir: f64,
    h_mag: f64,
    n_max: usize,
    seed: u64,
) -> Result<MinEdCurve> {
    let gts: Vec<Vec<f64>> = images.iter().map(|i| i.spectral.clone()).collect();
    min_ed_curve(
        |i, n, s| {
            Ok(gaussian_sampler_around(&outputs[i], h_dir, h_mag, n, s)?
                .iter()
                .map(Prediction::spectral)
                .collect())
        },
        &gts,
        n_max,
        seed,
    )
}
