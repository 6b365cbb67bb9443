use std::fs;
use std::path::{Path, PathBuf};

use dtp_core::codec::{decode_field, SpectralField};
use dtp_core::eval::{
    eval_images, gridsearch_bandwidth, interpolation_probe, kmeans_cluster, spectral_distance, EvalImage,
    MinEdCurve,
};
use dtp_core::io::{emit_csv, write_trajectory_svg, CheckpointFile, CodecDims, CsvValue, DatasetFile};
use dtp_core::model::{CvaeModel, ModelKind, Prediction};
use dtp_core::nn::ParamStore;
use dtp_core::scene::{build_dataset, nearest_field, SceneSample};
use dtp_core::trainer::{prepare_samples, train_from, TrainHistory};

use crate::report::{self, MethodDistances};
use crate::{CliError, Command, EvalArgs, RunConfig, SceneArgs, Split};

/// Keeps the validation sample stream apart from the test one.
const VAL_SEED_SALT: u64 = 0x7661_6c69_6461_7465;

pub(crate) struct Context {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub config: RunConfig,
}

impl Context {
    fn out(&self) -> Result<&Path, CliError> {
        self.out.as_deref().ok_or_else(|| CliError::usage("--out is required"))
    }

    /// `--out` as a directory, created if needed.
    fn out_dir(&self) -> Result<&Path, CliError> {
        let dir = self.out()?;
        fs::create_dir_all(dir).map_err(|e| CliError::data(dir, e))?;
        Ok(dir)
    }
}

pub(crate) fn execute(ctx: &Context, command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData { n_train, n_test } => gen_data(ctx, n_train, n_test),
        Command::Train {
            data,
            kind,
            epochs,
            history,
        } => train(ctx, &data, kind, epochs, history),
        Command::Sample { scene, model, n } => sample(ctx, &scene, &model, n),
        Command::EvalNll {
            eval,
            bandwidth_fit,
            baseline_fit,
            per_image,
        } => eval_nll(ctx, &eval, bandwidth_fit, baseline_fit, per_image.as_deref()),
        Command::EvalMined { eval, n_max } => eval_mined(ctx, &eval, n_max),
        Command::Cluster { scene, model, n, k } => cluster(ctx, &scene, &model, n, k),
        Command::Interpolate { scene, model, steps } => interpolate(ctx, &scene, &model, steps),
        Command::Render { scene, mode } => render(ctx, &scene, mode),
    }
}

fn load_dataset(path: &Path) -> Result<DatasetFile, CliError> {
    DatasetFile::load(path).map_err(|e| CliError::data(path, e))
}

fn codec_dims(data: &DatasetFile) -> CodecDims {
    let h = &data.header;
    CodecDims {
        height: h.height,
        width: h.width,
        horizon: h.horizon,
        k: h.k,
    }
}

struct Loaded {
    model: CvaeModel,
    params: ParamStore<f64>,
}

fn load_checkpoint(path: &Path, data: &DatasetFile, kind: Option<ModelKind>) -> Result<Loaded, CliError> {
    let ckpt = CheckpointFile::load(path).map_err(|e| CliError::data(path, e))?;
    if ckpt.header.codec != codec_dims(data) {
        return Err(CliError::data(
            path,
            format!(
                "checkpoint codec {:?} does not match the dataset {:?}",
                ckpt.header.codec,
                codec_dims(data)
            ),
        ));
    }
    if ckpt.header.model.channels != data.header.channels {
        return Err(CliError::data(path, "checkpoint expects a different number of feature channels"));
    }
    if let Some(kind) = kind {
        if ckpt.header.kind != kind {
            return Err(CliError::data(path, format!("expected a {kind} checkpoint, found {}", ckpt.header.kind)));
        }
    }
    let model = ckpt.model().map_err(|e| CliError::data(path, e))?;
    Ok(Loaded {
        model,
        params: ckpt.params,
    })
}

fn pick_scene<'a>(data: &'a DatasetFile, args: &SceneArgs) -> Result<&'a SceneSample, CliError> {
    let (pool, name) = match args.split {
        Split::Train => (&data.dataset.train, "train"),
        Split::Test => (&data.dataset.test, "test"),
    };
    pool.get(args.index).ok_or_else(|| {
        CliError::usage(format!(
            "--index {} is out of range: the {name} split has {} scenes",
            args.index,
            pool.len()
        ))
    })
}

fn scene_image(data: &DatasetFile, scene: &SceneSample) -> Result<EvalImage, CliError> {
    let mut images = eval_images(&data.header.spec, data.header.k, std::slice::from_ref(scene))?;
    Ok(images.remove(0))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<CsvValue>]) -> Result<(), CliError> {
    emit_csv(path, header, rows).map_err(|e| CliError::data(path, e))
}

fn write_prediction_svg(pred: &Prediction<f64>, dims: CodecDims, path: &Path) -> Result<(), CliError> {
    let field = pred.to_trajectory(dims.height, dims.width, dims.k, dims.horizon)?;
    write_trajectory_svg(&field, path).map_err(|e| CliError::data(path, e))
}

fn gen_data(ctx: &Context, n_train: Option<usize>, n_test: Option<usize>) -> Result<(), CliError> {
    let out = ctx.out()?;
    let cfg = &ctx.config;
    let n_train = n_train.unwrap_or(cfg.data.n_train);
    let n_test = n_test.unwrap_or(cfg.data.n_test);
    let dataset = build_dataset(&cfg.scene, n_train, n_test, ctx.seed)?;
    let file = DatasetFile::new(cfg.scene.clone(), cfg.data.k, ctx.seed, dataset);
    file.save(out).map_err(|e| CliError::data(out, e))?;
    eprintln!("wrote {n_train} train / {n_test} test scenes to {}", out.display());
    Ok(())
}

fn history_rows(history: &TrainHistory) -> Vec<Vec<CsvValue>> {
    history
        .epochs
        .iter()
        .enumerate()
        .map(|(e, m)| {
            vec![
                CsvValue::from(e),
                m.total.into(),
                m.direction.into(),
                m.mag_x.into(),
                m.mag_y.into(),
                m.kl.into(),
            ]
        })
        .collect()
}

fn train(
    ctx: &Context,
    data_path: &Path,
    kind: ModelKind,
    epochs: Option<usize>,
    history_path: Option<PathBuf>,
) -> Result<(), CliError> {
    let out = ctx.out()?;
    let data = load_dataset(data_path)?;
    let h = &data.header;
    let mut model_cfg = ctx.config.model.clone();
    model_cfg.height = h.height;
    model_cfg.width = h.width;
    model_cfg.k = h.k;
    model_cfg.channels = h.channels;
    let model = CvaeModel::new(model_cfg, kind)?;
    let mut train_cfg = ctx.config.train.clone();
    train_cfg.seed = ctx.seed;
    if let Some(e) = epochs {
        train_cfg.epochs = e;
    }
    let samples = prepare_samples::<f64>(&data.dataset.train, h.k).map_err(|e| CliError::data(data_path, e))?;
    let mut progress = |epoch: usize, _: &ParamStore<f64>, hist: &TrainHistory, _: bool| {
        if let Some(m) = hist.epochs.last() {
            eprintln!(
                "{kind} epoch {epoch}: total {:.4} dir {:.4} mag {:.4}/{:.4} kl {:.4}",
                m.total, m.direction, m.mag_x, m.mag_y, m.kl
            );
        }
    };
    let init = model.init_params(train_cfg.seed);
    let (params, history) = train_from(&samples, &model, &train_cfg, init, Some(&mut progress))?;
    CheckpointFile::new(&model, params, h.horizon, Some(train_cfg))?
        .save(out)
        .map_err(|e| CliError::data(out, e))?;
    let history_path = history_path.unwrap_or_else(|| {
        let mut name = out.as_os_str().to_owned();
        name.push(".history.csv");
        PathBuf::from(name)
    });
    write_csv(
        &history_path,
        &["epoch", "total", "dir", "mag_x", "mag_y", "kl"],
        &history_rows(&history),
    )
}

fn sample(ctx: &Context, args: &SceneArgs, model_path: &Path, n: usize) -> Result<(), CliError> {
    let dir = ctx.out_dir()?;
    let data = load_dataset(&args.data)?;
    let scene = pick_scene(&data, args)?;
    let m = load_checkpoint(model_path, &data, None)?;
    let image = scene_image(&data, scene)?;
    let preds = m
        .model
        .sample_predictions(&m.params, &scene.features, n, ctx.seed)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let dims = codec_dims(&data);
    let mut rows = Vec::with_capacity(n);
    for (j, p) in preds.iter().enumerate() {
        write_prediction_svg(p, dims, &dir.join(format!("sample_{j:03}.svg")))?;
        rows.push(vec![
            CsvValue::from(j),
            nearest_field(&p.spectral(), &image.modes).into(),
            spectral_distance(p, &image).into(),
            p.mag_x.into(),
            p.mag_y.into(),
        ]);
    }
    write_csv(
        &dir.join("samples.csv"),
        &["sample", "nearest_mode", "distance_to_truth", "mag_x", "mag_y"],
        &rows,
    )
}

/// Test images (optionally truncated) and the validation images drawn from
/// the head of the training split.
fn eval_sets(ctx: &Context, data: &DatasetFile, limit: Option<usize>) -> Result<(Vec<EvalImage>, Vec<EvalImage>), CliError> {
    let test = &data.dataset.test;
    let test = &test[..limit.unwrap_or(test.len()).min(test.len())];
    if test.is_empty() {
        return Err(CliError::usage("no test scenes to evaluate"));
    }
    let train = &data.dataset.train;
    let val = &train[..ctx.config.eval.n_val.min(train.len())];
    let spec = &data.header.spec;
    Ok((eval_images(spec, data.header.k, test)?, eval_images(spec, data.header.k, val)?))
}

fn eval_nll(
    ctx: &Context,
    args: &EvalArgs,
    fit: dtp_core::eval::BandwidthFit,
    baseline_fit: dtp_core::eval::BandwidthFit,
    per_image: Option<&Path>,
) -> Result<(), CliError> {
    use dtp_core::eval::BandwidthFit;
    let out = ctx.out()?;
    let data = load_dataset(&args.data)?;
    let cvae = load_checkpoint(&args.model, &data, Some(ModelKind::Cvae))?;
    let regressor = match &args.regressor {
        Some(p) => Some(load_checkpoint(p, &data, Some(ModelKind::Regressor))?),
        None => None,
    };
    let (test, val) = eval_sets(ctx, &data, args.limit)?;
    if val.is_empty() && (fit == BandwidthFit::Val || (regressor.is_some() && baseline_fit == BandwidthFit::Val)) {
        return Err(CliError::usage("validation bandwidths need a nonempty training split"));
    }
    let parzen = &ctx.config.parzen;
    let n = parzen.n_samples;
    let dists = |stats: Vec<report::SampleStats>| stats.into_iter().map(|s| s.distances).collect::<Vec<_>>();
    let cvae_test = dists(report::cvae_sample_stats(&cvae.model, &cvae.params, &test, n, ctx.seed)?);
    let cvae_val = if fit == BandwidthFit::Val {
        dists(report::cvae_sample_stats(&cvae.model, &cvae.params, &val, n, ctx.seed ^ VAL_SEED_SALT)?)
    } else {
        Vec::new()
    };
    let mut baselines = Vec::new();
    if let Some(r) = &regressor {
        let dims = codec_dims(&data);
        let reg_test = report::regressor_outputs(&r.model, &r.params, &test)?;
        let reg_val = report::regressor_outputs(&r.model, &r.params, &val)?;
        let cv_test = report::constant_velocity_outputs(&reg_test, dims)?;
        let cv_val = report::constant_velocity_outputs(&reg_val, dims)?;
        baselines.push(("regressor", report::point_distances(&reg_test, &test)?, report::point_distances(&reg_val, &val)?));
        baselines.push(("constant_velocity", report::point_distances(&cv_test, &test)?, report::point_distances(&cv_val, &val)?));
    }
    let others: Vec<MethodDistances<'_>> = baselines
        .iter()
        .map(|(name, t, v)| MethodDistances {
            name,
            test: t,
            val: v,
            fit: baseline_fit,
        })
        .collect();
    let reference = MethodDistances {
        name: "cvae",
        test: &cvae_test,
        val: &cvae_val,
        fit,
    };
    let table = report::nll_report(&reference, &others, parzen, ctx.config.eval.bootstrap_resamples, ctx.seed)?;
    let rows: Vec<Vec<CsvValue>> = table
        .rows()
        .into_iter()
        .map(|(m, gap)| {
            let (g, se) = gap.map_or((CsvValue::from(""), CsvValue::from("")), |g| (g.mean.into(), g.se.into()));
            vec![
                CsvValue::from(m.method.as_str()),
                m.fit.to_string().into(),
                m.h_dir.into(),
                m.h_mag.into(),
                m.mean().into(),
                g,
                se,
            ]
        })
        .collect();
    write_csv(
        out,
        &["method", "bandwidth_fit", "h_dir", "h_mag", "mean_nll", "gap_vs_cvae", "gap_se"],
        &rows,
    )?;
    if let Some(path) = per_image {
        let methods = table.rows();
        let mut header = vec!["image"];
        header.extend(methods.iter().map(|(m, _)| m.method.as_str()));
        let rows: Vec<Vec<CsvValue>> = (0..test.len())
            .map(|i| {
                std::iter::once(CsvValue::from(i))
                    .chain(methods.iter().map(|(m, _)| m.per_image[i].into()))
                    .collect()
            })
            .collect();
        write_csv(path, &header, &rows)?;
    }
    Ok(())
}

fn eval_mined(ctx: &Context, args: &EvalArgs, n_max: Option<usize>) -> Result<(), CliError> {
    let out = ctx.out()?;
    let data = load_dataset(&args.data)?;
    let cvae = load_checkpoint(&args.model, &data, Some(ModelKind::Cvae))?;
    let n_max = n_max.unwrap_or(ctx.config.eval.min_ed_n_max);
    if n_max == 0 {
        return Err(CliError::usage("--n-max must be at least 1"));
    }
    let (test, val) = eval_sets(ctx, &data, args.limit)?;
    let mut curves: Vec<(&str, MinEdCurve)> = vec![(
        "cvae",
        report::cvae_min_ed(&cvae.model, &cvae.params, &test, n_max, ctx.seed)?,
    )];
    if let Some(path) = &args.regressor {
        let r = load_checkpoint(path, &data, Some(ModelKind::Regressor))?;
        let reg_test = report::regressor_outputs(&r.model, &r.params, &test)?;
        let fit_images = if val.is_empty() { &test } else { &val };
        let reg_fit = report::regressor_outputs(&r.model, &r.params, fit_images)?;
        let parzen = &ctx.config.parzen;
        let (h_dir, h_mag) = gridsearch_bandwidth(
            &report::point_distances(&reg_fit, fit_images)?,
            &parzen.h_dir,
            &parzen.h_mag,
        )?;
        let cv_test = report::constant_velocity_outputs(&reg_test, codec_dims(&data))?;
        curves.push(("regressor", report::constant_min_ed(&reg_test, &test, n_max)?));
        curves.push((
            "regressor_gaussian",
            report::gaussian_min_ed(&reg_test, &test, h_dir, h_mag, n_max, ctx.seed)?,
        ));
        curves.push(("constant_velocity", report::constant_min_ed(&cv_test, &test, n_max)?));
    }
    let mut header = vec!["n"];
    header.extend(curves.iter().map(|(name, _)| *name));
    let rows: Vec<Vec<CsvValue>> = (1..=n_max)
        .map(|n| {
            std::iter::once(CsvValue::from(n))
                .chain(curves.iter().map(|(_, c)| c.at(n).into()))
                .collect()
        })
        .collect();
    write_csv(out, &header, &rows)
}

fn cluster(ctx: &Context, args: &SceneArgs, model_path: &Path, n: Option<usize>, k: Option<usize>) -> Result<(), CliError> {
    let dir = ctx.out_dir()?;
    let data = load_dataset(&args.data)?;
    let scene = pick_scene(&data, args)?;
    let m = load_checkpoint(model_path, &data, Some(ModelKind::Cvae))?;
    let image = scene_image(&data, scene)?;
    let n = n.unwrap_or(ctx.config.parzen.n_samples);
    let k = k.unwrap_or(ctx.config.eval.clusters);
    let samples: Vec<Vec<f64>> = m
        .model
        .sample_predictions(&m.params, &scene.features, n, ctx.seed)
        .map_err(|e| CliError::usage(e.to_string()))?
        .iter()
        .map(Prediction::spectral)
        .collect();
    let report = kmeans_cluster(&samples, k, ctx.seed).map_err(|e| CliError::usage(e.to_string()))?;
    let dims = codec_dims(&data);
    let rows: Vec<Vec<CsvValue>> = report
        .clusters
        .iter()
        .enumerate()
        .map(|(rank, c)| {
            vec![
                CsvValue::from(rank),
                c.count.into(),
                c.mean_magnitude.into(),
                nearest_field(&c.centroid, &image.modes).into(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("clusters.csv"),
        &["rank", "count", "mean_magnitude", "nearest_mode"],
        &rows,
    )?;
    for (rank, c) in report.top(ctx.config.eval.top_clusters).iter().enumerate() {
        let spectral = SpectralField::from_vec(dims.height, dims.width, dims.k, c.centroid.clone())?;
        let field = decode_field(&spectral, dims.horizon)?;
        let path = dir.join(format!("cluster_{rank:02}.svg"));
        write_trajectory_svg(&field, &path).map_err(|e| CliError::data(&path, e))?;
    }
    Ok(())
}

fn interpolate(ctx: &Context, args: &SceneArgs, model_path: &Path, steps: Option<usize>) -> Result<(), CliError> {
    let dir = ctx.out_dir()?;
    let data = load_dataset(&args.data)?;
    let scene = pick_scene(&data, args)?;
    let m = load_checkpoint(model_path, &data, Some(ModelKind::Cvae))?;
    let image = scene_image(&data, scene)?;
    let steps = steps.unwrap_or(ctx.config.eval.interpolation_steps);
    let (probe, path) =
        interpolation_probe(&m.model, &m.params, &image, steps).map_err(|e| CliError::usage(e.to_string()))?;
    let dims = codec_dims(&data);
    let mut rows = Vec::with_capacity(steps);
    for (i, (p, mode)) in path.iter().zip(&probe.path_modes).enumerate() {
        write_prediction_svg(p, dims, &dir.join(format!("step_{i:02}.svg")))?;
        let t = i as f64 / (steps - 1) as f64;
        rows.push(vec![CsvValue::from(i), t.into(), (*mode).into()]);
    }
    write_csv(&dir.join("interpolation.csv"), &["step", "t", "nearest_mode"], &rows)
}

fn render(ctx: &Context, args: &SceneArgs, mode: Option<usize>) -> Result<(), CliError> {
    let out = ctx.out()?;
    let data = load_dataset(&args.data)?;
    let scene = pick_scene(&data, args)?;
    let field = match mode {
        None => scene.trajectory.clone(),
        Some(m) => {
            let spec = &data.header.spec;
            let available = spec.scene_types[scene.type_index].modes.len();
            if m >= available {
                return Err(CliError::usage(format!("--mode {m} is out of range: the scene has {available} modes")));
            }
            spec.render_mode(scene.type_index, scene.center, m)?
        }
    };
    write_trajectory_svg(&field, out).map_err(|e| CliError::data(out, e))
}
