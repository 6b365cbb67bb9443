//! Procedural multimodal scenes: a disk-shaped actor on a grid whose future
//! motion is drawn from one of several parametric modes.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codec::{Axis, TrajectoryField};
use crate::error::{invalid, Result};
use crate::scalar::sq_dist;

/// ChaCha stream offsets for the training and test splits of [`build_dataset`].
pub const TRAIN_STREAM: u64 = 1 << 32;
pub const TEST_STREAM: u64 = 2 << 32;

/// A parametric motion: offset of an actor cell at frame `t` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionPrimitive {
    /// Constant velocity, cells per frame.
    Linear { vx: f64, vy: f64 },
    /// `amplitude * sin(2 pi t / period)` along one axis.
    Oscillation { axis: Axis, amplitude: f64, period: f64 },
    /// Motion along a circle of `radius`, starting at angle `orientation`
    /// (radians) and advancing `angular_rate` radians per frame.
    Arc {
        radius: f64,
        angular_rate: f64,
        orientation: f64,
    },
}

impl MotionPrimitive {
    pub fn offset(&self, t: f64) -> (f64, f64) {
        match *self {
            MotionPrimitive::Linear { vx, vy } => (vx * t, vy * t),
            MotionPrimitive::Oscillation {
                axis,
                amplitude,
                period,
            } => {
                let v = amplitude * (2.0 * PI * t / period).sin();
                match axis {
                    Axis::X => (v, 0.0),
                    Axis::Y => (0.0, v),
                }
            }
            MotionPrimitive::Arc {
                radius,
                angular_rate,
                orientation,
            } => {
                let a = orientation + angular_rate * t;
                (
                    radius * (a.cos() - orientation.cos()),
                    radius * (a.sin() - orientation.sin()),
                )
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            MotionPrimitive::Linear { vx, vy } => vx.is_finite() && vy.is_finite(),
            MotionPrimitive::Oscillation {
                amplitude, period, ..
            } => amplitude.is_finite() && period.is_finite() && period != 0.0,
            MotionPrimitive::Arc {
                radius,
                angular_rate,
                orientation,
            } => radius.is_finite() && angular_rate.is_finite() && orientation.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("degenerate motion primitive {self:?}"))
        }
    }
}

/// The alternative futures available to one kind of scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionModeSet {
    pub type_id: u32,
    pub modes: Vec<MotionPrimitive>,
    pub mode_weights: Vec<f64>,
}

impl MotionModeSet {
    /// Equally weighted modes.
    pub fn uniform(type_id: u32, modes: Vec<MotionPrimitive>) -> Self {
        let w = 1.0 / modes.len().max(1) as f64;
        Self {
            type_id,
            mode_weights: vec![w; modes.len()],
            modes,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return invalid(format!("scene type {} has no modes", self.type_id));
        }
        if self.modes.len() != self.mode_weights.len() {
            return invalid(format!(
                "scene type {} has {} modes but {} weights",
                self.type_id,
                self.modes.len(),
                self.mode_weights.len()
            ));
        }
        if self.mode_weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return invalid("mode weights must be nonnegative");
        }
        let total: f64 = self.mode_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("mode weights sum to {total}, expected 1"));
        }
        self.modes.iter().try_for_each(MotionPrimitive::validate)
    }

    fn pick_mode(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, w) in self.mode_weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        // Rounding can leave `u` just above the cumulative sum.
        self.mode_weights
            .iter()
            .rposition(|w| *w > 0.0)
            .unwrap_or(self.modes.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub horizon: usize,
    pub scene_types: Vec<MotionModeSet>,
    pub actor_radius: f64,
    pub noise_sigma: f64,
    /// Append normalized row/column coordinate channels to the features.
    pub coord_channels: bool,
}

impl Default for SceneSpec {
    /// 16x20 grid, 30 frames, three two-mode scene types (up/down,
    /// left/right, and a vertical bounce with opposite phase).
    fn default() -> Self {
        use MotionPrimitive::*;
        let speed = 0.2;
        Self {
            height: 16,
            width: 20,
            horizon: 30,
            scene_types: vec![
                MotionModeSet::uniform(
                    0,
                    vec![Linear { vx: 0.0, vy: -speed }, Linear { vx: 0.0, vy: speed }],
                ),
                MotionModeSet::uniform(
                    1,
                    vec![Linear { vx: -speed, vy: 0.0 }, Linear { vx: speed, vy: 0.0 }],
                ),
                MotionModeSet::uniform(
                    2,
                    vec![
                        Oscillation {
                            axis: Axis::Y,
                            amplitude: 2.0,
                            period: 30.0,
                        },
                        Oscillation {
                            axis: Axis::Y,
                            amplitude: -2.0,
                            period: 30.0,
                        },
                    ],
                ),
            ],
            actor_radius: 6.0,
            noise_sigma: 0.02,
            coord_channels: false,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.horizon == 0 {
            return invalid("grid and horizon must be non-empty");
        }
        if self.scene_types.is_empty() {
            return invalid("at least one scene type is required");
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return invalid("noise_sigma must be finite and nonnegative");
        }
        if !self.actor_radius.is_finite() || self.actor_radius < 0.0 {
            return invalid("actor_radius must be finite and nonnegative");
        }
        let margin = self.actor_radius.ceil() as usize;
        if 2 * margin + 1 > self.height || 2 * margin + 1 > self.width {
            return invalid(format!(
                "actor radius {} does not fit a {}x{} grid",
                self.actor_radius, self.height, self.width
            ));
        }
        self.scene_types.iter().try_for_each(MotionModeSet::validate)
    }

    /// Feature channels per cell: actor mask, scene-type one-hot, optional coordinates.
    pub fn channels(&self) -> usize {
        1 + self.scene_types.len() + if self.coord_channels { 2 } else { 0 }
    }

    pub fn feature_len(&self) -> usize {
        self.height * self.width * self.channels()
    }

    fn margin(&self) -> usize {
        self.actor_radius.ceil() as usize
    }

    /// Whether `cell` lies inside the actor disk centered at `center`.
    pub fn in_actor(&self, center: (usize, usize), cell: usize) -> bool {
        let (r, c) = (cell / self.width, cell % self.width);
        let dr = r as f64 - center.0 as f64;
        let dc = c as f64 - center.1 as f64;
        dr * dr + dc * dc <= self.actor_radius * self.actor_radius
    }

    /// Noise-free trajectories for the given scene layout and mode.
    pub fn render_mode(
        &self,
        type_index: usize,
        center: (usize, usize),
        mode: usize,
    ) -> Result<TrajectoryField<f64>> {
        let primitive = self
            .scene_types
            .get(type_index)
            .and_then(|s| s.modes.get(mode))
            .ok_or_else(|| {
                crate::Error::InvalidArgument(format!("no mode {mode} for scene type {type_index}"))
            })?;
        let mut traj = TrajectoryField::zeros(self.height, self.width, self.horizon)?;
        for cell in 0..self.height * self.width {
            if !self.in_actor(center, cell) {
                continue;
            }
            for t in 0..self.horizon {
                let (dx, dy) = primitive.offset((t + 1) as f64);
                traj.set_offset(cell, t, dx, dy);
            }
        }
        Ok(traj)
    }

    fn render_features(&self, type_index: usize, center: (usize, usize)) -> Vec<f64> {
        let f = self.channels();
        let n_types = self.scene_types.len();
        let mut x = vec![0.0; self.feature_len()];
        for cell in 0..self.height * self.width {
            let base = cell * f;
            if self.in_actor(center, cell) {
                x[base] = 1.0;
            }
            x[base + 1 + type_index] = 1.0;
            if self.coord_channels {
                let (r, c) = (cell / self.width, cell % self.width);
                x[base + 1 + n_types] = r as f64 / (self.height.max(2) - 1) as f64;
                x[base + 2 + n_types] = c as f64 / (self.width.max(2) - 1) as f64;
            }
        }
        x
    }
}

/// Where a sample's randomness came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedProvenance {
    pub seed: u64,
    pub stream: u64,
}

/// One forecasting problem: conditioning features and the observed future.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    /// `height x width x channels`, channel-last.
    pub features: Vec<f64>,
    pub trajectory: TrajectoryField<f64>,
    /// Index into [`SceneSpec::scene_types`].
    pub type_index: usize,
    pub mode_id: usize,
    /// Actor center as (row, col).
    pub center: (usize, usize),
    pub provenance: SeedProvenance,
}

impl SceneSample {
    /// Rebuilds a sample from stored features/trajectories, recovering the
    /// scene type from the one-hot channels and the actor center from the mask.
    pub fn from_parts(
        spec: &SceneSpec,
        features: Vec<f64>,
        trajectory: TrajectoryField<f64>,
        mode_id: usize,
        provenance: SeedProvenance,
    ) -> Result<Self> {
        if features.len() != spec.feature_len() {
            return invalid(format!(
                "feature tensor has {} values, expected {}",
                features.len(),
                spec.feature_len()
            ));
        }
        let f = spec.channels();
        let n_types = spec.scene_types.len();
        let type_index = (0..n_types)
            .find(|&i| features[1 + i] > 0.5)
            .ok_or_else(|| crate::Error::InvalidArgument("scene-type one-hot is empty".into()))?;
        let (mut sr, mut sc, mut n) = (0.0, 0.0, 0.0);
        for cell in 0..spec.height * spec.width {
            if features[cell * f] > 0.5 {
                sr += (cell / spec.width) as f64;
                sc += (cell % spec.width) as f64;
                n += 1.0;
            }
        }
        if n == 0.0 {
            return invalid("actor mask is empty");
        }
        let center = ((sr / n).round() as usize, (sc / n).round() as usize);
        Ok(Self {
            features,
            trajectory,
            type_index,
            mode_id,
            center,
            provenance,
        })
    }

    /// Noise-free renders of every mode available to this sample's scene.
    pub fn mode_renders(&self, spec: &SceneSpec) -> Result<Vec<TrajectoryField<f64>>> {
        let n = spec.scene_types[self.type_index].modes.len();
        (0..n)
            .map(|m| spec.render_mode(self.type_index, self.center, m))
            .collect()
    }
}

/// Index of the field in `candidates` closest (Euclidean) to `field`.
pub fn nearest_field(field: &[f64], candidates: &[Vec<f64>]) -> usize {
    candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (i, sq_dist(field, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        .0
}

pub fn generate_scene(spec: &SceneSpec, rng_seed: u64) -> Result<SceneSample> {
    generate_from_stream(
        spec,
        SeedProvenance {
            seed: rng_seed,
            stream: 0,
        },
    )
}

fn generate_from_stream(spec: &SceneSpec, provenance: SeedProvenance) -> Result<SceneSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(provenance.seed);
    rng.set_stream(provenance.stream);

    let margin = spec.margin();
    let row = rng.random_range(margin..spec.height - margin);
    let col = rng.random_range(margin..spec.width - margin);
    let type_index = rng.random_range(0..spec.scene_types.len());
    let mode_id = spec.scene_types[type_index].pick_mode(&mut rng);

    let mut trajectory = spec.render_mode(type_index, (row, col), mode_id)?;
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
        for cell in 0..spec.height * spec.width {
            if !spec.in_actor((row, col), cell) {
                continue;
            }
            for t in 0..spec.horizon {
                let (dx, dy) = trajectory.offset(cell, t);
                let (nx, ny): (f64, f64) = (noise.sample(&mut rng), noise.sample(&mut rng));
                trajectory.set_offset(cell, t, dx + nx, dy + ny);
            }
        }
    }
    Ok(SceneSample {
        features: spec.render_features(type_index, (row, col)),
        trajectory,
        type_index,
        mode_id,
        center: (row, col),
        provenance,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: Vec<SceneSample>,
    pub test: Vec<SceneSample>,
}

/// Deterministic train/test split; the two splits use disjoint ChaCha streams
/// of the same seed.
pub fn build_dataset(spec: &SceneSpec, n_train: usize, n_test: usize, rng_seed: u64) -> Result<Dataset> {
    use rayon::prelude::*;
    spec.validate()?;
    let make = |stream_base: u64, n: usize| -> Result<Vec<SceneSample>> {
        (0..n)
            .into_par_iter()
            .map(|i| {
                generate_from_stream(
                    spec,
                    SeedProvenance {
                        seed: rng_seed,
                        stream: stream_base + i as u64,
                    },
                )
            })
            .collect()
    };
    Ok(Dataset {
        train: make(TRAIN_STREAM, n_train)?,
        test: make(TEST_STREAM, n_test)?,
    })
}

/// Standard normal draws from a seeded stream; shared helper for samplers.
pub(crate) fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_mode(p: MotionPrimitive) -> SceneSpec {
        SceneSpec {
            scene_types: vec![MotionModeSet::uniform(0, vec![p])],
            noise_sigma: 0.0,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn linear_unit_motion() {
        let spec = single_mode(MotionPrimitive::Linear { vx: 1.0, vy: 0.0 });
        let s = generate_scene(&spec, 3).unwrap();
        let mut inside = 0;
        for cell in 0..spec.height * spec.width {
            let actor = spec.in_actor(s.center, cell);
            inside += actor as usize;
            for t in 0..spec.horizon {
                let (dx, dy) = s.trajectory.offset(cell, t);
                if actor {
                    assert_eq!((dx, dy), ((t + 1) as f64, 0.0));
                } else {
                    assert_eq!((dx, dy), (0.0, 0.0));
                }
            }
        }
        assert!(inside > 0);
    }

    #[test]
    fn oscillation_follows_sine() {
        let a = 1.5;
        let spec = single_mode(MotionPrimitive::Oscillation {
            axis: Axis::Y,
            amplitude: a,
            period: 30.0,
        });
        let s = generate_scene(&spec, 11).unwrap();
        let cell = s.center.0 * spec.width + s.center.1;
        for t in 0..30 {
            let (dx, dy) = s.trajectory.offset(cell, t);
            assert_eq!(dx, 0.0);
            let expect = a * (2.0 * PI * (t + 1) as f64 / 30.0).sin();
            assert!((dy - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn mode_frequencies_follow_weights() {
        let spec = SceneSpec {
            scene_types: vec![MotionModeSet::uniform(
                0,
                vec![
                    MotionPrimitive::Linear { vx: 1.0, vy: 0.0 },
                    MotionPrimitive::Linear { vx: -1.0, vy: 0.0 },
                ],
            )],
            height: 4,
            width: 4,
            horizon: 2,
            actor_radius: 1.0,
            noise_sigma: 0.0,
            coord_channels: false,
        };
        let n = 10_000;
        let ones = (0..n)
            .filter(|&i| generate_scene(&spec, i as u64).unwrap().mode_id == 1)
            .count();
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.02, "frequency {freq}");
    }

    #[test]
    fn exterior_is_static_with_noise() {
        let spec = SceneSpec::default();
        let data = build_dataset(&spec, 20, 5, 9).unwrap();
        for s in data.train.iter().chain(&data.test) {
            for cell in 0..spec.height * spec.width {
                if !spec.in_actor(s.center, cell) {
                    assert!(s.trajectory.cell_is_static(cell));
                }
            }
        }
    }

    #[test]
    fn noiseless_mode_is_recoverable() {
        let spec = SceneSpec {
            noise_sigma: 0.0,
            ..SceneSpec::default()
        };
        let data = build_dataset(&spec, 60, 0, 5).unwrap();
        for s in &data.train {
            let renders: Vec<Vec<f64>> = s
                .mode_renders(&spec)
                .unwrap()
                .into_iter()
                .map(|f| f.into_vec())
                .collect();
            assert_eq!(nearest_field(s.trajectory.as_slice(), &renders), s.mode_id);
            assert_eq!(renders[s.mode_id], s.trajectory.as_slice());
        }
    }

    #[test]
    fn dataset_determinism_and_seed_sensitivity() {
        let spec = SceneSpec::default();
        let a = build_dataset(&spec, 8, 4, 42).unwrap();
        let b = build_dataset(&spec, 8, 4, 42).unwrap();
        let c = build_dataset(&spec, 8, 4, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let empty = build_dataset(&spec, 0, 0, 42).unwrap();
        assert!(empty.train.is_empty() && empty.test.is_empty());
    }

    #[test]
    fn train_and_test_streams_differ() {
        let spec = SceneSpec::default();
        let d = build_dataset(&spec, 4, 4, 1).unwrap();
        for (a, b) in d.train.iter().zip(&d.test) {
            assert_ne!(a.provenance, b.provenance);
        }
    }

    #[test]
    fn oversized_actor_rejected() {
        let spec = SceneSpec {
            actor_radius: 8.0,
            ..SceneSpec::default()
        };
        assert!(generate_scene(&spec, 0).is_err());
    }

    #[test]
    fn from_parts_recovers_layout() {
        let spec = SceneSpec {
            coord_channels: true,
            ..SceneSpec::default()
        };
        let s = generate_scene(&spec, 77).unwrap();
        let r = SceneSample::from_parts(
            &spec,
            s.features.clone(),
            s.trajectory.clone(),
            s.mode_id,
            s.provenance,
        )
        .unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn bad_weights_rejected() {
        let mut spec = SceneSpec::default();
        spec.scene_types[0].mode_weights = vec![0.7, 0.7];
        assert!(spec.validate().is_err());
    }
}
