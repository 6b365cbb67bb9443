use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{format_err, read_exact_payload, read_preamble, write_preamble};
use crate::codec::TrajectoryField;
use crate::error::Result;
use crate::scene::{Dataset, SceneSample, SceneSpec, SeedProvenance, TEST_STREAM, TRAIN_STREAM};

const MAGIC: &[u8] = b"DTPD1\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub height: usize,
    pub width: usize,
    pub horizon: usize,
    /// Spectral coefficients per axis that consumers should use.
    pub k: usize,
    /// Feature channels per cell.
    pub channels: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub spec: SceneSpec,
    pub seed: u64,
}

impl DatasetHeader {
    fn sample_floats(&self) -> usize {
        self.height * self.width * (self.channels + self.horizon * 2) + 1
    }
}

/// A generated dataset with the spec that produced it. Values are stored as
/// 32-bit floats, so a reload matches the original to `f32` precision.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub dataset: Dataset,
}

impl DatasetFile {
    pub fn new(spec: SceneSpec, k: usize, seed: u64, dataset: Dataset) -> Self {
        Self {
            header: DatasetHeader {
                height: spec.height,
                width: spec.width,
                horizon: spec.horizon,
                k,
                channels: spec.channels(),
                n_train: dataset.train.len(),
                n_test: dataset.test.len(),
                spec,
                seed,
            },
            dataset,
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        write_preamble(&mut w, MAGIC, &self.header)?;
        let mut buf = Vec::with_capacity(self.header.sample_floats() * 4);
        for s in self.dataset.train.iter().chain(&self.dataset.test) {
            buf.clear();
            let values = s
                .features
                .iter()
                .chain(s.trajectory.as_slice())
                .copied()
                .chain(std::iter::once(s.mode_id as f64));
            for v in values {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let header: DatasetHeader = read_preamble(&mut r, MAGIC, "dataset")?;
        let spec = &header.spec;
        if (spec.height, spec.width, spec.horizon, spec.channels())
            != (header.height, header.width, header.horizon, header.channels)
        {
            return Err(format_err("dataset", "header dimensions disagree with the embedded spec"));
        }
        spec.validate()?;
        let per = header.sample_floats();
        let total = (header.n_train + header.n_test)
            .checked_mul(per * 4)
            .ok_or_else(|| format_err("dataset", "payload size overflows"))?;
        let bytes = read_exact_payload(&mut r, total, "dataset")?;
        let floats: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let n_feat = header.height * header.width * header.channels;
        let mut samples = floats.chunks_exact(per).enumerate().map(|(i, chunk)| {
            let stream = if i < header.n_train {
                TRAIN_STREAM + i as u64
            } else {
                TEST_STREAM + (i - header.n_train) as u64
            };
            let mode = chunk[per - 1];
            if !(mode >= 0.0 && mode.fract() == 0.0) {
                return Err(format_err("dataset", format!("sample {i} has mode id {mode}")));
            }
            let trajectory = TrajectoryField::from_vec(
                header.height,
                header.width,
                header.horizon,
                chunk[n_feat..per - 1].to_vec(),
            )?;
            SceneSample::from_parts(
                spec,
                chunk[..n_feat].to_vec(),
                trajectory,
                mode as usize,
                SeedProvenance {
                    seed: header.seed,
                    stream,
                },
            )
        });
        let train = samples.by_ref().take(header.n_train).collect::<Result<Vec<_>>>()?;
        let test = samples.collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dataset: Dataset { train, test },
            header,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }
}
