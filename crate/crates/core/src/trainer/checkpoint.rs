//! Text checkpoints: a header line, then one `{"name","shape","data"}` line per
//! tensor in registration order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::encoders::ModelParams;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u64,
    pub config: TrainConfig,
    pub params: ModelParams,
    pub step: u64,
    pub final_loss: f64,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, params: ModelParams, step: u64, final_loss: f64) -> Self {
        Self {
            version: CHECKPOINT_FORMAT_VERSION,
            config,
            params,
            step,
            final_loss,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u64,
    step: u64,
    final_loss: f64,
    n_tensors: usize,
    config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorLine {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize)]
struct TensorLineRef<'a> {
    name: &'a str,
    shape: &'a [usize],
    data: &'a [f64],
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut out: W) -> std::io::Result<()> {
    let header = Header {
        version: ckpt.version,
        step: ckpt.step,
        final_loss: ckpt.final_loss,
        n_tensors: ModelParams::NAMES.len(),
        config: ckpt.config.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for (name, t) in ckpt.params.named() {
        let line = TensorLineRef {
            name,
            shape: t.shape(),
            data: t.data(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(ckpt, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text)
}

fn integrity(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Integrity(format!("line {line}: {msg}"))
}

/// Parses checkpoint text. Anything wrong after the header is an integrity error.
pub fn parse_checkpoint(text: &str) -> Result<Checkpoint> {
    let mut lines = text.lines();
    let first = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header line".into(),
    })?;
    // Peek at the version before the full header so old files fail clearly.
    let raw: serde_json::Value = serde_json::from_str(first).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    match raw.get("version").and_then(serde_json::Value::as_u64) {
        Some(CHECKPOINT_FORMAT_VERSION) => {}
        Some(found) => {
            return Err(Error::Version {
                found,
                expected: CHECKPOINT_FORMAT_VERSION,
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "header lacks an integer version".into(),
            })
        }
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    header.config.validate().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.n_tensors != ModelParams::NAMES.len() {
        return Err(integrity(
            1,
            format!("expected {} tensors, header lists {}", ModelParams::NAMES.len(), header.n_tensors),
        ));
    }

    let enc = &header.config.encoder;
    let expected = ModelParams::expected_shapes(enc);
    let mut tensors = Vec::with_capacity(expected.len());
    for ((i, raw), (name, shape)) in lines.enumerate().map(|(i, l)| (i + 2, l)).zip(&expected) {
        let t: TensorLine = serde_json::from_str(raw).map_err(|e| integrity(i, e))?;
        if t.name != *name {
            return Err(integrity(i, format!("expected tensor {name:?}, found {:?}", t.name)));
        }
        if t.shape != *shape {
            return Err(integrity(i, format!("{name} has shape {:?}, expected {shape:?}", t.shape)));
        }
        let mut tensor = Tensor::new(t.shape, t.data).map_err(|e| integrity(i, e))?;
        tensor.set_requires_grad(*name != "temperature" || enc.learnable_temperature);
        tensors.push(tensor);
    }
    if tensors.len() != expected.len() {
        return Err(Error::Integrity(format!(
            "file ends after {} of {} tensors",
            tensors.len(),
            expected.len()
        )));
    }
    let params = ModelParams::from_tensors(tensors)?;
    if text.lines().count() != expected.len() + 1 {
        return Err(Error::Integrity("trailing content after the last tensor".into()));
    }
    Ok(Checkpoint {
        version: header.version,
        config: header.config,
        params,
        step: header.step,
        final_loss: header.final_loss,
    })
}
