use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::network::{ConvBlock, ModelState};
use super::spec::ModelSpec;
use crate::error::{OpgError, Result};

pub const CHECKPOINT_FORMAT: &str = "opg-checkpoint/1";

/// A tensor stored as little-endian f32 bits in hex, so non-finite values
/// survive a round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: String,
}

impl TensorRecord {
    pub fn encode(shape: Vec<usize>, values: &[f32]) -> Self {
        let mut data = String::with_capacity(values.len() * 8);
        for v in values {
            for b in v.to_le_bytes() {
                data.push_str(&format!("{b:02x}"));
            }
        }
        TensorRecord { shape, data }
    }

    pub fn decode(&self) -> Result<Vec<f32>> {
        let bytes = self.data.as_bytes();
        let expected: usize = self.shape.iter().product();
        if bytes.len() != expected * 8 {
            return Err(OpgError::Serde(format!(
                "tensor of shape {:?} has {} hex digits",
                self.shape,
                bytes.len()
            )));
        }
        let hex = |c: u8| -> Result<u8> {
            (c as char)
                .to_digit(16)
                .map(|d| d as u8)
                .ok_or_else(|| OpgError::Serde(format!("bad hex digit {:?}", c as char)))
        };
        bytes
            .chunks_exact(8)
            .map(|chunk| {
                let mut le = [0u8; 4];
                for (i, pair) in chunk.chunks_exact(2).enumerate() {
                    le[i] = hex(pair[0])? << 4 | hex(pair[1])?;
                }
                Ok(f32::from_le_bytes(le))
            })
            .collect()
    }
}

/// Serialized model weights plus whatever state the trainer needs to resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub spec: ModelSpec,
    pub step_counter: u64,
    pub tensors: BTreeMap<String, TensorRecord>,
    /// Optimizer momentum buffers in parameter order.
    #[serde(default)]
    pub momentum: Vec<TensorRecord>,
    #[serde(default)]
    pub trainer: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn from_model(model: &ModelState) -> Self {
        let mut tensors = BTreeMap::new();
        for (i, b) in model.blocks.iter().enumerate() {
            let w = &b.weight;
            tensors.insert(
                format!("conv{i}.weight"),
                TensorRecord::encode(vec![w.nrows(), w.ncols()], w.as_slice().expect("contiguous")),
            );
            for (name, v) in [
                ("gamma", &b.gamma),
                ("beta", &b.beta),
                ("running_mean", &b.running_mean),
                ("running_var", &b.running_var),
            ] {
                tensors.insert(
                    format!("bn{i}.{name}"),
                    TensorRecord::encode(vec![v.len()], v.as_slice().expect("contiguous")),
                );
            }
        }
        let hw = &model.head_weight;
        tensors.insert(
            "head.weight".into(),
            TensorRecord::encode(vec![hw.nrows(), hw.ncols()], hw.as_slice().expect("contiguous")),
        );
        tensors.insert(
            "head.bias".into(),
            TensorRecord::encode(
                vec![model.head_bias.len()],
                model.head_bias.as_slice().expect("contiguous"),
            ),
        );
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            spec: model.spec.clone(),
            step_counter: model.step_counter,
            tensors,
            momentum: Vec::new(),
            trainer: None,
        }
    }

    fn tensor(&self, name: &str, shape: &[usize]) -> Result<Vec<f32>> {
        let rec = self
            .tensors
            .get(name)
            .ok_or_else(|| OpgError::Serde(format!("checkpoint is missing tensor `{name}`")))?;
        if rec.shape != shape {
            return Err(OpgError::Shape {
                expected: format!("{name} {shape:?}"),
                got: format!("{:?}", rec.shape),
            });
        }
        rec.decode()
    }

    fn vector(&self, name: &str, len: usize) -> Result<Array1<f32>> {
        Ok(Array1::from(self.tensor(name, &[len])?))
    }

    fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Array2<f32>> {
        let v = self.tensor(name, &[rows, cols])?;
        Ok(Array2::from_shape_vec((rows, cols), v).expect("length checked"))
    }

    pub fn to_model(&self) -> Result<ModelState> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(OpgError::Serde(format!(
                "unsupported checkpoint format `{}`",
                self.format
            )));
        }
        self.spec.validate()?;
        let mut c_in = self.spec.input_shape.2;
        let mut blocks = Vec::new();
        for (i, layer) in self.spec.conv_layers.iter().enumerate() {
            let c = layer.out_channels;
            blocks.push(ConvBlock {
                weight: self.matrix(&format!("conv{i}.weight"), 9 * c_in, c)?,
                gamma: self.vector(&format!("bn{i}.gamma"), c)?,
                beta: self.vector(&format!("bn{i}.beta"), c)?,
                running_mean: self.vector(&format!("bn{i}.running_mean"), c)?,
                running_var: self.vector(&format!("bn{i}.running_var"), c)?,
                stride: layer.stride,
            });
            c_in = c;
        }
        let f = self.spec.feature_width();
        let k = self.spec.head_width();
        Ok(ModelState {
            spec: self.spec.clone(),
            blocks,
            head_weight: self.matrix("head.weight", f, k)?,
            head_bias: self.vector("head.bias", k)?,
            step_counter: self.step_counter,
        })
    }

    pub fn momentum_buffers(&self) -> Result<Vec<Vec<f32>>> {
        self.momentum.iter().map(TensorRecord::decode).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| OpgError::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(self)?).map_err(|e| OpgError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| OpgError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| OpgError::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

impl ModelState {
    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::from_model(self).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::load(path)?.to_model()
    }
}
