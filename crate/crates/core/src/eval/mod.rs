//! Evaluation: Parzen likelihoods, min-ED curves, sample clustering, the
//! constant-velocity baseline, and the end-to-end reports built from them.

mod baseline;
mod kmeans;
mod mined;
mod parzen;
mod protocol;
mod stats;

pub use baseline::{constant_velocity_baseline, first_offsets};
pub use kmeans::{kmeans_cluster, Cluster, ClusterReport};
pub use mined::{gaussian_sampler_around, image_seed, min_ed_curve, MinEdCurve};
pub use parzen::{
    gridsearch_bandwidth, log_grid, parzen_log_likelihood, regressor_likelihood, ParzenConfig, SampleDistances,
};
pub use protocol::{
    collapse_ratio, constant_velocity_prediction, eval_images, interpolation_probe, method_nll, mode_fractions,
    paired_gap, spectral_distance, BandwidthFit, EvalImage, InterpolationProbe, MethodNll, PairedGap,
};
pub use stats::{bootstrap_se, mean};

pub use crate::model::latent_interpolate;
