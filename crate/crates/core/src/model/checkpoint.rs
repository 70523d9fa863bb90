//! Checkpoint file: one JSON header line, then every parameter tensor in
//! [`ParamId::ALL`] order as little-endian `f64`s.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelParams, ParamId};
use crate::autodiff::Tensor;

const FORMAT: &str = "uaware-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    seed: u64,
    epoch: usize,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint_to<W: Write>(ckpt: &Checkpoint, mut out: W) -> Result<(), ModelError> {
    let params = &ckpt.params;
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        config: *params.config(),
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        tensors: ParamId::ALL
            .iter()
            .map(|&id| TensorEntry {
                name: id.name().into(),
                shape: params.get(id).shape().to_vec(),
            })
            .collect(),
    };
    serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for t in params.tensors() {
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), ModelError> {
    write_checkpoint_to(ckpt, BufWriter::new(File::create(path)?))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    read_checkpoint_from(File::open(path)?)
}

pub fn read_checkpoint_from<R: Read>(input: R) -> Result<Checkpoint, ModelError> {
    let mut reader = BufReader::new(input);
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    if line.pop() != Some(b'\n') {
        return Err(ModelError::Checkpoint("missing header line".into()));
    }
    let header: Header =
        serde_json::from_slice(&line).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported format {:?} version {}",
            header.format, header.version
        )));
    }
    header.config.validate()?;
    if header.tensors.len() != ParamId::ALL.len() {
        return Err(ModelError::Checkpoint(format!(
            "{} tensors listed, expected {}",
            header.tensors.len(),
            ParamId::ALL.len()
        )));
    }

    let mut tensors = Vec::with_capacity(ParamId::ALL.len());
    for (id, entry) in ParamId::ALL.iter().zip(&header.tensors) {
        let expected = id.shape(&header.config);
        if entry.name != id.name() || entry.shape != expected {
            return Err(ModelError::Checkpoint(format!(
                "tensor {:?} {:?} where {} {:?} was expected",
                entry.name,
                entry.shape,
                id.name(),
                expected
            )));
        }
        let mut bytes = vec![0u8; expected.iter().product::<usize>() * 8];
        reader.read_exact(&mut bytes).map_err(|_| {
            ModelError::Checkpoint(format!("payload truncated in tensor {}", id.name()))
        })?;
        let data = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        tensors.push(Tensor::new(expected.to_vec(), data)?);
    }
    if reader.read(&mut [0u8; 1])? != 0 {
        return Err(ModelError::Checkpoint("trailing bytes after payload".into()));
    }
    Ok(Checkpoint {
        params: ModelParams::from_tensors(header.config, tensors)?,
        seed: header.seed,
        epoch: header.epoch,
    })
}
