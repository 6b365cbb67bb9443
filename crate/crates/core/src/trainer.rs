//! Mini-batch Adam training for the CVAE and the regressor.
//!
//! Every source of randomness is keyed by the config seed: the epoch shuffle
//! uses one ChaCha stream per epoch and the reparameterization noise for
//! sample `i` in epoch `e` uses its own stream. Batch gradients are reduced
//! in fixed-size chunks summed in index order, so results do not depend on
//! the worker count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{encode_field_with, split_normalize, DctBasis, NormalizedSpectral};
use crate::error::{invalid, Error, Result};
use crate::model::{CvaeModel, LossInput, LossTerms};
use crate::nn::{adam_step, AdamConfig, Moments, ParamStore};
use crate::scalar::Scalar;
use crate::scene::SceneSample;

/// Samples per gradient-reduction chunk.
const REDUCTION_CHUNK: usize = 16;
const ETA_SALT: u64 = 0x6574_615f_6e6f_6973;
const SHUFFLE_STREAM: u64 = 1 << 62;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KlSchedule {
    Constant,
    /// Ramp the KL weight linearly from 0 to the model weight over `epochs`.
    LinearWarmup { epochs: usize },
}

impl KlSchedule {
    pub fn factor(&self, epoch: usize) -> f64 {
        match *self {
            KlSchedule::Constant => 1.0,
            KlSchedule::LinearWarmup { epochs } if epochs > 0 => ((epoch + 1) as f64 / epochs as f64).min(1.0),
            KlSchedule::LinearWarmup { .. } => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub kl_schedule: KlSchedule,
    pub seed: u64,
    /// Invoke the epoch callback with `checkpoint = true` every this many epochs (0: never).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 32,
            adam: AdamConfig::default(),
            kl_schedule: KlSchedule::Constant,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return invalid("epochs and batch_size must be at least 1");
        }
        if self.adam.lr.is_nan() || self.adam.lr < 0.0 {
            return invalid("learning rate must be nonnegative");
        }
        Ok(())
    }
}

/// Mean loss terms over a set of samples.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossMeans {
    pub total: f64,
    pub direction: f64,
    pub mag_x: f64,
    pub mag_y: f64,
    pub kl: f64,
}

impl LossMeans {
    fn from_terms<S: Scalar>(terms: &[LossTerms<S>]) -> Self {
        let n = terms.len().max(1) as f64;
        let mut m = LossMeans::default();
        for t in terms {
            m.total += t.total.to_f64_lossy();
            m.direction += t.direction.to_f64_lossy();
            m.mag_x += t.mag_x.to_f64_lossy();
            m.mag_y += t.mag_y.to_f64_lossy();
            m.kl += t.kl.to_f64_lossy();
        }
        m.total /= n;
        m.direction /= n;
        m.mag_x /= n;
        m.mag_y /= n;
        m.kl /= n;
        m
    }

    pub fn is_finite(&self) -> bool {
        [self.total, self.direction, self.mag_x, self.mag_y, self.kl]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<LossMeans>,
}

/// A scene converted into model inputs and split spectral targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample<S> {
    pub features: Vec<S>,
    pub target: NormalizedSpectral<S>,
}

pub fn prepare_samples<S: Scalar>(samples: &[SceneSample], k: usize) -> Result<Vec<PreparedSample<S>>> {
    let Some(first) = samples.first() else {
        return Ok(Vec::new());
    };
    let basis = DctBasis::<S>::new(first.trajectory.horizon(), k)?;
    samples
        .par_iter()
        .map(|s| {
            let traj = crate::codec::TrajectoryField::from_vec(
                s.trajectory.height(),
                s.trajectory.width(),
                s.trajectory.horizon(),
                s.trajectory.as_slice().iter().map(|&v| S::lit(v)).collect(),
            )?;
            Ok(PreparedSample {
                features: s.features.iter().map(|&v| S::lit(v)).collect(),
                target: split_normalize(&encode_field_with(&basis, &traj)?),
            })
        })
        .collect()
}

/// Reparameterization noise for sample `index` in `epoch`.
pub fn eta_for<S: Scalar>(seed: u64, epoch: usize, index: usize, dim: usize) -> Vec<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ETA_SALT);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    crate::scene::normal_vec(&mut rng, dim)
        .into_iter()
        .map(S::lit)
        .collect()
}

/// Progress callback: `(epoch, params, history so far, checkpoint due)`.
pub type EpochHook<'a, S> = dyn FnMut(usize, &ParamStore<S>, &TrainHistory, bool) + 'a;

/// Trains from the model's seeded initialization.
pub fn train<S: Scalar>(
    samples: &[PreparedSample<S>],
    model: &CvaeModel,
    config: &TrainConfig,
) -> Result<(ParamStore<S>, TrainHistory)> {
    let init = model.init_params(config.seed);
    train_from(samples, model, config, init, None)
}

pub fn train_from<S: Scalar>(
    samples: &[PreparedSample<S>],
    model: &CvaeModel,
    config: &TrainConfig,
    mut params: ParamStore<S>,
    mut hook: Option<&mut EpochHook<'_, S>>,
) -> Result<(ParamStore<S>, TrainHistory)> {
    config.validate()?;
    if samples.is_empty() {
        return invalid("training set is empty");
    }
    if params.layout() != model.layout() {
        return invalid("initial parameters do not match the model layout");
    }
    let latent = model.latent_dim();
    let mut moments = Moments::zeros(params.len());
    let mut history = TrainHistory::default();
    let mut grads = params.zeros_like();
    let chunks_per_batch = config.batch_size.div_ceil(REDUCTION_CHUNK);
    let mut chunk_grads: Vec<ParamStore<S>> = (0..chunks_per_batch).map(|_| params.zeros_like()).collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0u64;

    for epoch in 0..config.epochs {
        let mut epoch_model = model.clone();
        epoch_model.set_kl_weight(model.config().kl_weight * config.kl_schedule.factor(epoch));
        let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle.set_stream(SHUFFLE_STREAM | epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut shuffle);

        let mut epoch_terms = Vec::with_capacity(samples.len());
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let chunks: Vec<&[usize]> = batch.chunks(REDUCTION_CHUNK).collect();
            let used = &mut chunk_grads[..chunks.len()];
            let results: Vec<Result<Vec<LossTerms<S>>>> = used
                .par_iter_mut()
                .zip(chunks.par_iter())
                .map(|(g, idx)| {
                    g.fill_zero();
                    let etas: Vec<Vec<S>> = idx.iter().map(|&i| eta_for::<S>(config.seed, epoch, i, latent)).collect();
                    let items: Vec<LossInput<'_, S>> = idx
                        .iter()
                        .zip(&etas)
                        .map(|(&i, eta)| LossInput {
                            x: &samples[i].features,
                            y: &samples[i].target,
                            eta,
                        })
                        .collect();
                    epoch_model.loss_and_grad_batch(&params, &items, g)
                })
                .collect();
            let mut batch_terms = Vec::with_capacity(batch.len());
            for r in results {
                batch_terms.extend(r?);
            }
            if let Some(pos) = batch_terms.iter().position(|t| !t.total.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                    detail: format!("sample {} produced {:?}", batch[pos], batch_terms[pos]),
                });
            }
            grads.as_mut_slice().copy_from_slice(used[0].as_slice());
            for g in &used[1..] {
                grads.add_assign(g)?;
            }
            grads.scale(S::one() / S::lit(batch.len() as f64));
            step += 1;
            adam_step(&mut params, &grads, &mut moments, &config.adam, step)?;
            if !params.all_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                    detail: "parameters became non-finite after the update".into(),
                });
            }
            epoch_terms.extend(batch_terms);
        }
        history.epochs.push(LossMeans::from_terms(&epoch_terms));
        if let Some(h) = hook.as_deref_mut() {
            let due = config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0;
            h(epoch, &params, &history, due);
        }
    }
    Ok((params, history))
}

/// Mean loss terms with the noise stream of epoch 0.
pub fn evaluate_loss<S: Scalar>(
    samples: &[PreparedSample<S>],
    model: &CvaeModel,
    params: &ParamStore<S>,
    seed: u64,
) -> Result<LossMeans> {
    if samples.is_empty() {
        return invalid("evaluation set is empty");
    }
    let latent = model.latent_dim();
    let etas: Vec<Vec<S>> = (0..samples.len()).map(|i| eta_for::<S>(seed, 0, i, latent)).collect();
    let parts: Vec<Vec<LossTerms<S>>> = samples
        .par_chunks(REDUCTION_CHUNK)
        .zip(etas.par_chunks(REDUCTION_CHUNK))
        .map(|(chunk, eta)| {
            let items: Vec<LossInput<'_, S>> = chunk
                .iter()
                .zip(eta)
                .map(|(s, e)| LossInput {
                    x: &s.features,
                    y: &s.target,
                    eta: e,
                })
                .collect();
            model.loss_batch(params, &items)
        })
        .collect::<Result<_>>()?;
    let terms: Vec<LossTerms<S>> = parts.into_iter().flatten().collect();
    Ok(LossMeans::from_terms(&terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CvaeConfig, ModelKind};
    use crate::scene::{build_dataset, MotionModeSet, MotionPrimitive, SceneSpec};

    fn small_spec(noise: f64) -> SceneSpec {
        SceneSpec {
            height: 6,
            width: 6,
            horizon: 8,
            scene_types: vec![MotionModeSet::uniform(
                0,
                vec![MotionPrimitive::Linear { vx: 0.0, vy: 0.3 }],
            )],
            actor_radius: 1.0,
            noise_sigma: noise,
            coord_channels: false,
        }
    }

    fn small_model(spec: &SceneSpec, kind: ModelKind) -> CvaeModel {
        let cfg = CvaeConfig {
            height: spec.height,
            width: spec.width,
            k: 3,
            channels: spec.channels(),
            latent_dim: 2,
            image_hidden: vec![16],
            code_dim: 8,
            encoder_hidden: vec![16],
            decoder_hidden: vec![16],
            ..CvaeConfig::default()
        };
        CvaeModel::new(cfg, kind).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let spec = small_spec(0.05);
        let data = build_dataset(&spec, 1, 0, 3).unwrap();
        let samples = prepare_samples::<f64>(&data.train, 3).unwrap();
        let model = small_model(&spec, ModelKind::Cvae);
        let cfg = TrainConfig {
            epochs: 1,
            adam: AdamConfig { lr: 0.0, ..AdamConfig::default() },
            ..TrainConfig::default()
        };
        let (params, hist) = train(&samples, &model, &cfg).unwrap();
        assert_eq!(params, model.init_params::<f64>(cfg.seed));
        let initial = evaluate_loss(&samples, &model, &params, cfg.seed).unwrap();
        assert_eq!(hist.epochs.len(), 1);
        assert!((hist.epochs[0].total - initial.total).abs() < 1e-9);
    }

    #[test]
    fn history_matches_evaluation_with_frozen_params() {
        let spec = small_spec(0.05);
        let data = build_dataset(&spec, 37, 0, 4).unwrap();
        let samples = prepare_samples::<f64>(&data.train, 3).unwrap();
        let model = small_model(&spec, ModelKind::Cvae);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            adam: AdamConfig { lr: 0.0, ..AdamConfig::default() },
            ..TrainConfig::default()
        };
        let (params, hist) = train(&samples, &model, &cfg).unwrap();
        let eval = evaluate_loss(&samples, &model, &params, cfg.seed).unwrap();
        for (a, b) in [
            (hist.epochs[0].total, eval.total),
            (hist.epochs[0].direction, eval.direction),
            (hist.epochs[0].kl, eval.kl),
        ] {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn training_is_reproducible() {
        let spec = small_spec(0.05);
        let data = build_dataset(&spec, 40, 0, 5).unwrap();
        let samples = prepare_samples::<f64>(&data.train, 3).unwrap();
        let model = small_model(&spec, ModelKind::Cvae);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 20,
            ..TrainConfig::default()
        };
        let a = train(&samples, &model, &cfg).unwrap();
        let b = train(&samples, &model, &cfg).unwrap();
        assert_eq!(a.0.as_slice(), b.0.as_slice());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn empty_sets_rejected() {
        let spec = small_spec(0.0);
        let model = small_model(&spec, ModelKind::Regressor);
        let empty: Vec<PreparedSample<f64>> = Vec::new();
        assert!(train(&empty, &model, &TrainConfig::default()).is_err());
        let p = model.init_params::<f64>(0);
        assert!(evaluate_loss(&empty, &model, &p, 0).is_err());
    }

    #[test]
    fn non_finite_loss_aborts_with_batch_index() {
        let spec = small_spec(0.0);
        let data = build_dataset(&spec, 4, 0, 1).unwrap();
        let mut samples = prepare_samples::<f64>(&data.train, 3).unwrap();
        samples[2].target.mag_x = f64::NAN;
        let model = small_model(&spec, ModelKind::Regressor);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            ..TrainConfig::default()
        };
        match train(&samples, &model, &cfg) {
            Err(Error::NonFiniteLoss { epoch: 0, detail, .. }) => assert!(detail.contains("sample 2")),
            other => panic!("expected abort, got {other:?}"),
        }
    }

    /// On noiseless single-mode data the image explains the target, so the
    /// KL term falls from its first-epoch value.
    #[test]
    fn kl_decreases_on_deterministic_data() {
        let spec = small_spec(0.0);
        let data = build_dataset(&spec, 64, 0, 6).unwrap();
        let samples = prepare_samples::<f64>(&data.train, 3).unwrap();
        let base = small_model(&spec, ModelKind::Cvae);
        let model = CvaeModel::new(
            CvaeConfig {
                image_hidden: vec![32],
                code_dim: 16,
                encoder_hidden: vec![32],
                decoder_hidden: vec![32],
                ..base.config().clone()
            },
            ModelKind::Cvae,
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 300,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let (params, hist) = train(&samples, &model, &cfg).unwrap();
        let first = hist.epochs.first().unwrap();
        let last = hist.epochs.last().unwrap();
        assert!(last.kl < first.kl, "kl {} -> {}", first.kl, last.kl);
        assert!(last.total < 0.5 * first.total);
        let mean_sigma: f64 = samples
            .iter()
            .map(|s| {
                let code = model.image_tower(&params, &s.features).unwrap();
                let post = model.encode(&params, &code, &s.target).unwrap();
                post.sigma().iter().sum::<f64>() / post.dim() as f64
            })
            .sum::<f64>()
            / samples.len() as f64;
        assert!(mean_sigma < 0.5, "mean sigma {mean_sigma}");
    }

    #[test]
    fn zero_latent_cvae_loss_equals_regressor_loss() {
        let spec = small_spec(0.05);
        let data = build_dataset(&spec, 5, 0, 8).unwrap();
        let samples = prepare_samples::<f64>(&data.train, 3).unwrap();
        let base = small_model(&spec, ModelKind::Cvae);
        let cfg = CvaeConfig {
            latent_dim: 0,
            kl_weight: 0.0,
            ..base.config().clone()
        };
        let cvae = CvaeModel::new(cfg.clone(), ModelKind::Cvae).unwrap();
        let reg = CvaeModel::new(cfg, ModelKind::Regressor).unwrap();
        let p = reg.init_params::<f64>(2);
        assert_eq!(cvae.layout(), reg.layout());
        for s in &samples {
            let a = cvae.loss(&p, &s.features, &s.target, &[]).unwrap();
            let b = reg.loss(&p, &s.features, &s.target, &[]).unwrap();
            assert!((a.total - b.total).abs() <= 1e-12 * b.total.abs().max(1.0));
            assert!((a.direction - b.direction).abs() <= 1e-12 * b.direction.abs().max(1.0));
            assert!((a.mag_x - b.mag_x).abs() <= 1e-12);
            assert!((a.mag_y - b.mag_y).abs() <= 1e-12);
        }
    }

    #[test]
    fn warmup_schedule_ramps() {
        let s = KlSchedule::LinearWarmup { epochs: 4 };
        assert_eq!(s.factor(0), 0.25);
        assert_eq!(s.factor(3), 1.0);
        assert_eq!(s.factor(10), 1.0);
        assert_eq!(KlSchedule::Constant.factor(0), 1.0);
    }
}
