//! Conditional VAE over direction-normalized spectral trajectory fields, and
//! the z-free regressor that shares its image tower and decoder.
//!
//! Three towers share one parameter store:
//! - the image tower maps scene features to a code vector;
//! - the encoder (training only) maps `(code, Y_norm, M_x, M_y)` to a
//!   diagonal Gaussian posterior over `z`;
//! - the decoder gates the code with the tiled latent and predicts the
//!   normalized direction field and the two global magnitudes.
//!
//! The loss is the sum of squared errors on the direction field and on each
//! magnitude plus the KL divergence of the posterior from `N(0, I)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{decode_field, recombine_flat, NormalizedSpectral, SpectralField, TrajectoryField};
use crate::error::{invalid, Result};
use crate::nn::{Batch, InputGrad, LayerSpec, Network, ParamLayout, ParamStore, Tape};
use crate::scalar::{sq_dist, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cvae,
    Regressor,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Cvae => "cvae",
            ModelKind::Regressor => "regressor",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cvae" => Ok(ModelKind::Cvae),
            "regressor" => Ok(ModelKind::Regressor),
            other => invalid(format!("unknown model kind {other:?}")),
        }
    }
}

/// How the tiled latent enters the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// `code * (1 + tile(z))`
    Gate,
    /// `code + tile(z)`
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvaeConfig {
    pub height: usize,
    pub width: usize,
    /// Retained DCT coefficients per axis.
    pub k: usize,
    /// Feature channels per cell.
    pub channels: usize,
    pub latent_dim: usize,
    pub image_hidden: Vec<usize>,
    pub code_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub kl_weight: f64,
    pub fusion: Fusion,
    /// Give the magnitude head its own decoder trunk.
    pub split_trunks: bool,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 20,
            k: 5,
            channels: 4,
            latent_dim: 8,
            image_hidden: vec![128],
            code_dim: 64,
            encoder_hidden: vec![128],
            decoder_hidden: vec![128, 192],
            kl_weight: 1.0,
            fusion: Fusion::Gate,
            split_trunks: false,
        }
    }
}

impl CvaeConfig {
    pub fn image_dim(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// Length of the flattened normalized direction field (`H * W * 2K`).
    pub fn direction_dim(&self) -> usize {
        self.height * self.width * 2 * self.k
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.k == 0 || self.channels == 0 {
            return invalid("model grid, coefficient count and channels must be positive");
        }
        if self.code_dim == 0 {
            return invalid("image code dimension must be positive");
        }
        if self
            .image_hidden
            .iter()
            .chain(&self.encoder_hidden)
            .chain(&self.decoder_hidden)
            .any(|&w| w == 0)
        {
            return invalid("hidden widths must be positive");
        }
        if self.decoder_hidden.is_empty() {
            return invalid("decoder needs at least one hidden layer");
        }
        if !self.kl_weight.is_finite() || self.kl_weight < 0.0 {
            return invalid("kl_weight must be finite and nonnegative");
        }
        Ok(())
    }
}

/// Diagonal Gaussian `Q(z | X, Y)`, stored as mean and log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior<S> {
    pub mu: Vec<S>,
    pub log_sigma: Vec<S>,
}

impl<S: Scalar> GaussianPosterior<S> {
    pub fn new(mu: Vec<S>, sigma: &[S]) -> Result<Self> {
        if mu.len() != sigma.len() {
            return invalid("posterior mean and scale differ in length");
        }
        if sigma.iter().any(|s| s.is_nan() || *s <= S::zero()) {
            return invalid("posterior scale must be positive");
        }
        Ok(Self {
            mu,
            log_sigma: sigma.iter().map(|s| s.ln()).collect(),
        })
    }

    pub fn sigma(&self) -> Vec<S> {
        self.log_sigma.iter().map(|l| l.exp()).collect()
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode<S> {
    pub z: Vec<S>,
    pub eta: Option<Vec<S>>,
}

/// Decoder output: normalized direction field and nonnegative magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<S> {
    pub direction: Vec<S>,
    pub mag_x: S,
    pub mag_y: S,
}

impl<S: Scalar> Prediction<S> {
    /// Flattened spectral field with magnitudes applied.
    pub fn spectral(&self) -> Vec<S> {
        let mut out = vec![S::zero(); self.direction.len()];
        recombine_flat(&self.direction, self.mag_x, self.mag_y, &mut out);
        out
    }

    pub fn to_normalized(&self, height: usize, width: usize, k: usize) -> Result<NormalizedSpectral<S>> {
        Ok(NormalizedSpectral {
            direction: SpectralField::from_vec(height, width, k, self.direction.clone())?,
            mag_x: self.mag_x,
            mag_y: self.mag_y,
        })
    }

    pub fn to_trajectory(&self, height: usize, width: usize, k: usize, horizon: usize) -> Result<TrajectoryField<S>> {
        let spec = SpectralField::from_vec(height, width, k, self.spectral())?;
        decode_field(&spec, horizon)
    }
}

/// Per-sample loss decomposition. `kl` is unweighted; `total` applies the weight.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms<S> {
    pub direction: S,
    pub mag_x: S,
    pub mag_y: S,
    pub kl: S,
    pub total: S,
}

/// `0.5 * sum(mu^2 + sigma^2 - 1 - ln sigma^2)`
pub fn kl_std_normal<S: Scalar>(post: &GaussianPosterior<S>) -> S {
    let half = S::lit(0.5);
    post.mu
        .iter()
        .zip(&post.log_sigma)
        .map(|(&m, &ls)| half * (m * m + (ls + ls).exp() - S::one() - (ls + ls)))
        .sum()
}

/// `z = mu + eta * sigma`
pub fn reparameterize<S: Scalar>(post: &GaussianPosterior<S>, eta: &[S]) -> Result<LatentCode<S>> {
    if eta.len() != post.dim() {
        return invalid(format!(
            "noise has {} entries, latent dimension is {}",
            eta.len(),
            post.dim()
        ));
    }
    let z = post
        .mu
        .iter()
        .zip(&post.log_sigma)
        .zip(eta)
        .map(|((&m, &ls), &e)| m + e * ls.exp())
        .collect();
    Ok(LatentCode {
        z,
        eta: Some(eta.to_vec()),
    })
}

#[derive(Debug, Clone, PartialEq)]
struct EncoderTower {
    trunk: Network,
    mu_head: Network,
    log_sigma_head: Network,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvaeModel {
    config: CvaeConfig,
    kind: ModelKind,
    layout: ParamLayout,
    image: Network,
    dec_trunk: Network,
    mag_trunk: Option<Network>,
    dir_head: Network,
    mag_head: Network,
    encoder: Option<EncoderTower>,
}

struct DecoderTapes<S> {
    trunk: Tape<S>,
    mag_trunk: Option<Tape<S>>,
    dir: Tape<S>,
    mag: Tape<S>,
}

impl<S: Scalar> DecoderTapes<S> {
    fn predictions(&self) -> Vec<Prediction<S>> {
        self.dir
            .output()
            .iter_rows()
            .zip(self.mag.output().iter_rows())
            .map(|(d, m)| Prediction {
                direction: d.to_vec(),
                mag_x: m[0],
                mag_y: m[1],
            })
            .collect()
    }
}

/// One training example as seen by the loss: features, split target and the
/// reparameterization noise.
#[derive(Debug, Clone, Copy)]
pub struct LossInput<'a, S> {
    pub x: &'a [S],
    pub y: &'a NormalizedSpectral<S>,
    pub eta: &'a [S],
}

/// Rows per batched decoder pass when sampling; bounds the activation memory.
const DECODE_CHUNK: usize = 128;

fn stack(input: usize, hidden: &[usize], activation: LayerSpec, trailing: bool) -> Vec<LayerSpec> {
    let mut widths = vec![input];
    widths.extend_from_slice(hidden);
    let mut layers = crate::nn::mlp(&widths, activation);
    if trailing && !hidden.is_empty() {
        layers.push(activation);
    }
    layers
}

impl CvaeModel {
    pub fn new(config: CvaeConfig, kind: ModelKind) -> Result<Self> {
        config.validate()?;
        let mut layout = ParamLayout::new();
        let act = LayerSpec::Relu;

        let mut image_widths = vec![config.image_dim()];
        image_widths.extend_from_slice(&config.image_hidden);
        image_widths.push(config.code_dim);
        let image = Network::new("image", crate::nn::mlp(&image_widths, act), &mut layout)?;

        let dec_trunk = Network::new(
            "decoder",
            stack(config.code_dim, &config.decoder_hidden, act, true),
            &mut layout,
        )?;
        let mag_trunk = if config.split_trunks {
            Some(Network::new(
                "decoder_mag",
                stack(config.code_dim, &config.decoder_hidden, act, true),
                &mut layout,
            )?)
        } else {
            None
        };
        let last = *config.decoder_hidden.last().expect("validated non-empty");
        let dir_head = Network::new(
            "direction_head",
            vec![LayerSpec::affine(last, config.direction_dim())],
            &mut layout,
        )?;
        let mag_head = Network::new(
            "magnitude_head",
            vec![LayerSpec::affine(last, 2), LayerSpec::Softplus],
            &mut layout,
        )?;

        let encoder = if kind == ModelKind::Cvae && config.latent_dim > 0 {
            let enc_in = config.code_dim + config.direction_dim() + 2;
            let trunk = Network::new(
                "encoder",
                stack(enc_in, &config.encoder_hidden, act, true),
                &mut layout,
            )?;
            let width = config.encoder_hidden.last().copied().unwrap_or(enc_in);
            let mu_head = Network::new(
                "encoder_mu",
                vec![LayerSpec::affine(width, config.latent_dim)],
                &mut layout,
            )?;
            let log_sigma_head = Network::new(
                "encoder_log_sigma",
                vec![LayerSpec::affine(width, config.latent_dim)],
                &mut layout,
            )?;
            Some(EncoderTower {
                trunk,
                mu_head,
                log_sigma_head,
            })
        } else {
            None
        };
        Ok(Self {
            config,
            kind,
            layout,
            image,
            dec_trunk,
            mag_trunk,
            dir_head,
            mag_head,
            encoder,
        })
    }

    pub fn config(&self) -> &CvaeConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn set_kl_weight(&mut self, weight: f64) {
        self.config.kl_weight = weight;
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Latent dimension actually used by the decoder (0 for the regressor).
    pub fn latent_dim(&self) -> usize {
        if self.encoder.is_some() {
            self.config.latent_dim
        } else {
            0
        }
    }

    pub fn has_encoder(&self) -> bool {
        self.encoder.is_some()
    }

    /// Every layer stack in parameter-layout order, with its segment prefix.
    pub fn networks(&self) -> Vec<(&'static str, &[LayerSpec])> {
        let mut out = vec![("image", self.image.layers()), ("decoder", self.dec_trunk.layers())];
        if let Some(m) = &self.mag_trunk {
            out.push(("decoder_mag", m.layers()));
        }
        out.push(("direction_head", self.dir_head.layers()));
        out.push(("magnitude_head", self.mag_head.layers()));
        if let Some(e) = &self.encoder {
            out.push(("encoder", e.trunk.layers()));
            out.push(("encoder_mu", e.mu_head.layers()));
            out.push(("encoder_log_sigma", e.log_sigma_head.layers()));
        }
        out
    }

    /// Parameters of the image tower and decoder only.
    pub fn decoder_param_count(&self) -> usize {
        self.image.param_count()
            + self.dec_trunk.param_count()
            + self.mag_trunk.as_ref().map_or(0, Network::param_count)
            + self.dir_head.param_count()
            + self.mag_head.param_count()
    }

    /// Glorot weights with zero biases.
    pub fn init_params<S: Scalar>(&self, seed: u64) -> ParamStore<S> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ParamStore::init_glorot(self.layout.clone(), &mut rng)
    }

    pub fn zero_params<S: Scalar>(&self) -> ParamStore<S> {
        ParamStore::zeros(self.layout.clone())
    }

    fn check_params<S: Scalar>(&self, params: &ParamStore<S>) -> Result<()> {
        if params.layout() != &self.layout {
            return invalid("parameter layout does not belong to this model");
        }
        Ok(())
    }

    fn check_target<S: Scalar>(&self, y: &NormalizedSpectral<S>) -> Result<()> {
        let d = &y.direction;
        if d.height() != self.config.height || d.width() != self.config.width || d.k() != self.config.k {
            return invalid(format!(
                "target is {}x{} with K={}, model expects {}x{} with K={}",
                d.height(),
                d.width(),
                d.k(),
                self.config.height,
                self.config.width,
                self.config.k
            ));
        }
        Ok(())
    }

    pub fn image_tower<S: Scalar>(&self, params: &ParamStore<S>, x: &[S]) -> Result<Vec<S>> {
        self.check_params(params)?;
        Ok(self.image.forward(params.as_slice(), x)?.0)
    }

    fn encoder_input<S: Scalar>(&self, code: &[S], y: &NormalizedSpectral<S>) -> Vec<S> {
        let mut input = Vec::with_capacity(code.len() + y.direction.dim() + 2);
        input.extend_from_slice(code);
        input.extend_from_slice(y.direction.as_slice());
        input.push(y.mag_x);
        input.push(y.mag_y);
        input
    }

    /// Posterior over `z` given the image code and the (split) ground truth.
    pub fn encode<S: Scalar>(
        &self,
        params: &ParamStore<S>,
        image_code: &[S],
        y: &NormalizedSpectral<S>,
    ) -> Result<GaussianPosterior<S>> {
        self.check_params(params)?;
        self.check_target(y)?;
        let Some(enc) = &self.encoder else {
            return invalid("model has no encoder tower");
        };
        if image_code.len() != self.config.code_dim {
            return invalid("image code has the wrong dimension");
        }
        let p = params.as_slice();
        let (h, _) = enc.trunk.forward(p, &self.encoder_input(image_code, y))?;
        let (mu, _) = enc.mu_head.forward(p, &h)?;
        let (log_sigma, _) = enc.log_sigma_head.forward(p, &h)?;
        Ok(GaussianPosterior { mu, log_sigma })
    }

    fn fuse<S: Scalar>(&self, code: &[S], z: &[S]) -> Vec<S> {
        if z.is_empty() {
            return code.to_vec();
        }
        let l = z.len();
        code.iter()
            .enumerate()
            .map(|(i, &c)| match self.config.fusion {
                Fusion::Gate => c * (S::one() + z[i % l]),
                Fusion::Additive => c + z[i % l],
            })
            .collect()
    }

    /// Decoder pass over a batch of codes; `z` is `None` for the regressor.
    fn decode_tapes<S: Scalar>(&self, p: &[S], codes: &Batch<S>, z: Option<&Batch<S>>) -> Result<DecoderTapes<S>> {
        let fused = match z {
            Some(z) => {
                let rows: Vec<Vec<S>> = codes
                    .iter_rows()
                    .zip(z.iter_rows())
                    .map(|(c, zr)| self.fuse(c, zr))
                    .collect();
                Batch::from_rows(&rows)
            }
            None => codes.clone(),
        };
        let trunk = self.dec_trunk.forward_batch(p, fused.clone())?;
        let dir = self.dir_head.forward_batch(p, trunk.output().clone())?;
        let (mag_trunk, mag) = match &self.mag_trunk {
            Some(net) => {
                let t = net.forward_batch(p, fused.clone())?;
                let m = self.mag_head.forward_batch(p, t.output().clone())?;
                (Some(t), m)
            }
            None => (None, self.mag_head.forward_batch(p, trunk.output().clone())?),
        };
        Ok(DecoderTapes {
            trunk,
            mag_trunk,
            dir,
            mag,
        })
    }

    /// Decodes every row of `zs` against one image code.
    pub fn decode_many<S: Scalar>(&self, params: &ParamStore<S>, image_code: &[S], zs: &[Vec<S>]) -> Result<Vec<Prediction<S>>> {
        self.check_params(params)?;
        if image_code.len() != self.config.code_dim {
            return invalid("image code has the wrong dimension");
        }
        if let Some(bad) = zs.iter().find(|z| z.len() != self.latent_dim()) {
            return invalid(format!(
                "latent code has {} entries, model uses {}",
                bad.len(),
                self.latent_dim()
            ));
        }
        let mut out = Vec::with_capacity(zs.len());
        for chunk in zs.chunks(DECODE_CHUNK) {
            let codes = Batch::from_rows(&vec![image_code; chunk.len()]);
            let z = (self.latent_dim() > 0).then(|| Batch::from_rows(chunk));
            out.extend(self.decode_tapes(params.as_slice(), &codes, z.as_ref())?.predictions());
        }
        Ok(out)
    }

    /// Decodes `z` against an image code. An empty `z` skips the fusion.
    pub fn decode<S: Scalar>(&self, params: &ParamStore<S>, image_code: &[S], z: &LatentCode<S>) -> Result<Prediction<S>> {
        Ok(self
            .decode_many(params, image_code, std::slice::from_ref(&z.z))?
            .pop()
            .expect("one prediction per code"))
    }

    /// Regressor output: image tower and decoder with the fusion bypassed.
    pub fn regressor_forward<S: Scalar>(&self, params: &ParamStore<S>, x: &[S]) -> Result<Prediction<S>> {
        let code = self.image_tower(params, x)?;
        let codes = Batch::from_row(&code);
        Ok(self
            .decode_tapes(params.as_slice(), &codes, None)?
            .predictions()
            .pop()
            .expect("one row"))
    }

    /// `n` predictions from `z ~ N(0, I)`. Reads only the image tower and
    /// decoder; for a regressor every draw is the regressor output.
    pub fn sample_predictions<S: Scalar>(
        &self,
        params: &ParamStore<S>,
        x: &[S],
        n: usize,
        rng_seed: u64,
    ) -> Result<Vec<Prediction<S>>> {
        if n == 0 {
            return invalid("need at least one sample");
        }
        let code = self.image_tower(params, x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let l = self.latent_dim();
        let zs: Vec<Vec<S>> = (0..n)
            .map(|_| crate::scene::normal_vec(&mut rng, l).into_iter().map(S::lit).collect())
            .collect();
        self.decode_many(params, &code, &zs)
    }

    /// Forward pass of the training loss for one sample with fixed noise `eta`.
    pub fn loss<S: Scalar>(
        &self,
        params: &ParamStore<S>,
        x: &[S],
        y: &NormalizedSpectral<S>,
        eta: &[S],
    ) -> Result<LossTerms<S>> {
        Ok(self.loss_impl(params, &[LossInput { x, y, eta }], None)?[0])
    }

    /// Loss plus its gradient, accumulated into `grads`.
    pub fn loss_and_grad<S: Scalar>(
        &self,
        params: &ParamStore<S>,
        x: &[S],
        y: &NormalizedSpectral<S>,
        eta: &[S],
        grads: &mut ParamStore<S>,
    ) -> Result<LossTerms<S>> {
        Ok(self.loss_and_grad_batch(params, &[LossInput { x, y, eta }], grads)?[0])
    }

    /// Per-sample losses for a batch.
    pub fn loss_batch<S: Scalar>(&self, params: &ParamStore<S>, items: &[LossInput<'_, S>]) -> Result<Vec<LossTerms<S>>> {
        self.loss_impl(params, items, None)
    }

    /// Per-sample losses for a batch, with the summed gradient accumulated
    /// into `grads`. Bitwise equal to calling [`Self::loss_and_grad`] on each
    /// item in order.
    pub fn loss_and_grad_batch<S: Scalar>(
        &self,
        params: &ParamStore<S>,
        items: &[LossInput<'_, S>],
        grads: &mut ParamStore<S>,
    ) -> Result<Vec<LossTerms<S>>> {
        if !params.is_congruent(grads) {
            return invalid("gradient store is not congruent with parameters");
        }
        self.loss_impl(params, items, Some(grads))
    }

    fn loss_impl<S: Scalar>(
        &self,
        params: &ParamStore<S>,
        items: &[LossInput<'_, S>],
        grads: Option<&mut ParamStore<S>>,
    ) -> Result<Vec<LossTerms<S>>> {
        self.check_params(params)?;
        let l = self.latent_dim();
        for it in items {
            self.check_target(it.y)?;
            if it.eta.len() != l {
                return invalid(format!("noise has {} entries, latent dimension is {l}", it.eta.len()));
            }
            if it.x.len() != self.config.image_dim() {
                return invalid(format!(
                    "features have {} entries, model expects {}",
                    it.x.len(),
                    self.config.image_dim()
                ));
            }
        }
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let n = items.len();
        let p = params.as_slice();
        let xs: Vec<&[S]> = items.iter().map(|it| it.x).collect();
        let img = self.image.forward_batch(p, Batch::from_rows(&xs))?;
        let codes = img.output();

        // Encoder: trunk tape, then mean and log-sigma head tapes.
        let enc = match &self.encoder {
            Some(e) => {
                let inputs: Vec<Vec<S>> = items
                    .iter()
                    .zip(codes.iter_rows())
                    .map(|(it, c)| self.encoder_input(c, it.y))
                    .collect();
                let trunk = e.trunk.forward_batch(p, Batch::from_rows(&inputs))?;
                let mu = e.mu_head.forward_batch(p, trunk.output().clone())?;
                let ls = e.log_sigma_head.forward_batch(p, trunk.output().clone())?;
                Some((trunk, mu, ls))
            }
            None => None,
        };
        let z = enc.as_ref().map(|(_, mu, ls)| {
            let mut z = Batch::zeros(n, l);
            for (r, it) in items.iter().enumerate() {
                let (m, s) = (mu.output().row(r), ls.output().row(r));
                for (d, zd) in z.row_mut(r).iter_mut().enumerate() {
                    *zd = m[d] + it.eta[d] * s[d].exp();
                }
            }
            z
        });
        let dec = self.decode_tapes(p, codes, z.as_ref())?;
        let dir_hat = dec.dir.output();
        let mag_hat = dec.mag.output();

        let w = S::lit(self.config.kl_weight);
        let terms: Vec<LossTerms<S>> = items
            .iter()
            .enumerate()
            .map(|(r, it)| {
                let direction = sq_dist(dir_hat.row(r), it.y.direction.as_slice());
                let dmx = mag_hat.row(r)[0] - it.y.mag_x;
                let dmy = mag_hat.row(r)[1] - it.y.mag_y;
                let kl = match &enc {
                    Some((_, mu, ls)) => kl_std_normal(&GaussianPosterior {
                        mu: mu.output().row(r).to_vec(),
                        log_sigma: ls.output().row(r).to_vec(),
                    }),
                    None => S::zero(),
                };
                LossTerms {
                    direction,
                    mag_x: dmx * dmx,
                    mag_y: dmy * dmy,
                    kl,
                    total: direction + dmx * dmx + dmy * dmy + w * kl,
                }
            })
            .collect();

        let Some(grads) = grads else {
            return Ok(terms);
        };
        let g = grads.as_mut_slice();
        let two = S::lit(2.0);
        let mut g_dir = Batch::zeros(n, self.config.direction_dim());
        let mut g_mag = Batch::zeros(n, 2);
        for (r, it) in items.iter().enumerate() {
            g_dir
                .row_mut(r)
                .iter_mut()
                .zip(dir_hat.row(r).iter().zip(it.y.direction.as_slice()))
                .for_each(|(gd, (&a, &b))| *gd = two * (a - b));
            let m = mag_hat.row(r);
            g_mag.row_mut(r).copy_from_slice(&[two * (m[0] - it.y.mag_x), two * (m[1] - it.y.mag_y)]);
        }

        let full = InputGrad::Full;
        let mut d_hidden = self.dir_head.backward_batch(p, &dec.dir, g_dir, g, full)?.expect("requested");
        let d_mag_in = self.mag_head.backward_batch(p, &dec.mag, g_mag, g, full)?.expect("requested");
        let mut d_fused = match (&self.mag_trunk, &dec.mag_trunk) {
            (Some(net), Some(tape)) => net.backward_batch(p, tape, d_mag_in, g, full)?.expect("requested"),
            _ => {
                d_hidden.add_assign(&d_mag_in);
                Batch::zeros(n, self.config.code_dim)
            }
        };
        let d_trunk = self.dec_trunk.backward_batch(p, &dec.trunk, d_hidden, g, full)?.expect("requested");
        d_fused.add_assign(&d_trunk);

        let mut d_code = Batch::zeros(n, self.config.code_dim);
        let mut d_z = Batch::<S>::zeros(n, l);
        match &z {
            None => d_code = d_fused,
            Some(z) => {
                for r in 0..n {
                    let (df, c, zr) = (d_fused.row(r), codes.row(r), z.row(r));
                    let mut dc = vec![S::zero(); c.len()];
                    let dz = d_z.row_mut(r);
                    for i in 0..c.len() {
                        match self.config.fusion {
                            Fusion::Gate => {
                                dc[i] = df[i] * (S::one() + zr[i % l]);
                                dz[i % l] += df[i] * c[i];
                            }
                            Fusion::Additive => {
                                dc[i] = df[i];
                                dz[i % l] += df[i];
                            }
                        }
                    }
                    d_code.row_mut(r).copy_from_slice(&dc);
                }
            }
        }

        if let (Some(e), Some((trunk, mu, ls))) = (&self.encoder, &enc) {
            let mut d_mu = Batch::zeros(n, l);
            let mut d_ls = Batch::zeros(n, l);
            for (r, it) in items.iter().enumerate() {
                let (m, lsr, dz) = (mu.output().row(r), ls.output().row(r), d_z.row(r));
                for d in 0..l {
                    let s = lsr[d].exp();
                    d_mu.row_mut(r)[d] = dz[d] + w * m[d];
                    d_ls.row_mut(r)[d] = dz[d] * it.eta[d] * s + w * (s * s - S::one());
                }
            }
            let mut d_h = e.mu_head.backward_batch(p, mu, d_mu, g, full)?.expect("requested");
            let d_h2 = e.log_sigma_head.backward_batch(p, ls, d_ls, g, full)?.expect("requested");
            d_h.add_assign(&d_h2);
            let code_dim = self.config.code_dim;
            let d_in = e
                .trunk
                .backward_batch(p, trunk, d_h, g, InputGrad::Prefix(code_dim))?
                .expect("requested");
            for r in 0..n {
                d_code.row_mut(r).iter_mut().zip(&d_in.row(r)[..code_dim]).for_each(|(a, &b)| *a += b);
            }
        }
        self.image.backward_batch(p, &img, d_code, g, InputGrad::Skip)?;
        Ok(terms)
    }
}

/// Decodes along `z(t) = (1 - t) z_a + t z_b` for `steps` evenly spaced `t` in `[0, 1]`.
pub fn latent_interpolate<S: Scalar>(
    model: &CvaeModel,
    params: &ParamStore<S>,
    x: &[S],
    z_a: &[S],
    z_b: &[S],
    steps: usize,
) -> Result<Vec<Prediction<S>>> {
    if steps < 2 {
        return invalid("interpolation needs at least two steps");
    }
    if z_a.len() != z_b.len() {
        return invalid("interpolation endpoints differ in dimension");
    }
    let code = model.image_tower(params, x)?;
    let zs: Vec<Vec<S>> = (0..steps)
        .map(|i| {
            let t = S::lit(i as f64 / (steps - 1) as f64);
            z_a.iter().zip(z_b).map(|(&a, &b)| (S::one() - t) * a + t * b).collect()
        })
        .collect();
    model.decode_many(params, &code, &zs)
}
