use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{format_err, read_exact_payload, read_preamble, write_preamble};
use crate::error::Result;
use crate::model::{CvaeConfig, CvaeModel, ModelKind};
use crate::nn::{LayerSpec, ParamStore};
use crate::trainer::TrainConfig;

const MAGIC: &[u8] = b"DTPC1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecDims {
    pub height: usize,
    pub width: usize,
    pub horizon: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    pub model: CvaeConfig,
    pub layers: Vec<(String, Vec<LayerSpec>)>,
    pub codec: CodecDims,
    pub train: Option<TrainConfig>,
    pub param_count: usize,
}

/// Model parameters at full 64-bit precision; a reload is bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub header: CheckpointHeader,
    pub params: ParamStore<f64>,
}

impl CheckpointFile {
    pub fn new(model: &CvaeModel, params: ParamStore<f64>, horizon: usize, train: Option<TrainConfig>) -> Result<Self> {
        if params.layout() != model.layout() {
            return Err(format_err("checkpoint", "parameters do not belong to the model"));
        }
        let cfg = model.config().clone();
        Ok(Self {
            header: CheckpointHeader {
                kind: model.kind(),
                layers: model
                    .networks()
                    .into_iter()
                    .map(|(n, l)| (n.to_string(), l.to_vec()))
                    .collect(),
                codec: CodecDims {
                    height: cfg.height,
                    width: cfg.width,
                    horizon,
                    k: cfg.k,
                },
                model: cfg,
                train,
                param_count: params.len(),
            },
            params,
        })
    }

    /// Rebuilds the model the header describes.
    pub fn model(&self) -> Result<CvaeModel> {
        CvaeModel::new(self.header.model.clone(), self.header.kind)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        write_preamble(&mut w, MAGIC, &self.header)?;
        let mut buf = Vec::with_capacity(self.params.len() * 8);
        for v in self.params.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let header: CheckpointHeader = read_preamble(&mut r, MAGIC, "checkpoint")?;
        let model = CvaeModel::new(header.model.clone(), header.kind)?;
        let layers: Vec<(String, Vec<LayerSpec>)> = model
            .networks()
            .into_iter()
            .map(|(n, l)| (n.to_string(), l.to_vec()))
            .collect();
        if layers != header.layers {
            return Err(format_err("checkpoint", "layer specs disagree with the model config"));
        }
        if header.param_count != model.layout().total() {
            return Err(format_err(
                "checkpoint",
                format!(
                    "header declares {} parameters, model has {}",
                    header.param_count,
                    model.layout().total()
                ),
            ));
        }
        let bytes = read_exact_payload(&mut r, header.param_count * 8, "checkpoint")?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let params = ParamStore::from_values(model.layout().clone(), values)?;
        Ok(Self { header, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }
}
