//! `CALW` checkpoints: named 64-bit tensors followed by a JSON config record.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::binary::CountingReader;
use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelParams};
use crate::tensor::Tensor;
use crate::train::{TrainConfig, TrainVariant};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CALW";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Everything needed to interpret and reproduce a set of weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub dims: ModelDims,
    pub variant: TrainVariant,
    pub seed: u64,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    /// Set when the weights were fine-tuned from another checkpoint.
    #[serde(default)]
    pub reranker: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: CheckpointConfig,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<checkpoint>", e);
        let tensors = self.params.tensors();
        w.write_all(&CHECKPOINT_MAGIC).map_err(io)?;
        w.write_u16::<LittleEndian>(CHECKPOINT_VERSION)
            .map_err(io)?;
        w.write_u32::<LittleEndian>(tensors.len() as u32)
            .map_err(io)?;
        for (name, t) in tensors {
            w.write_u16::<LittleEndian>(name.len() as u16).map_err(io)?;
            w.write_all(name.as_bytes()).map_err(io)?;
            w.write_u8(t.dims().len() as u8).map_err(io)?;
            for &d in t.dims() {
                w.write_u64::<LittleEndian>(d as u64).map_err(io)?;
            }
            for &x in t.data() {
                w.write_f64::<LittleEndian>(x).map_err(io)?;
            }
        }
        let config = serde_json::to_vec(&self.config)
            .map_err(|e| Error::Config(format!("checkpoint config: {e}")))?;
        w.write_u32::<LittleEndian>(config.len() as u32)
            .map_err(io)?;
        w.write_all(&config).map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut CountingReader::new(BufReader::new(file), path))
    }

    fn read_from<R: Read>(r: &mut CountingReader<R>) -> Result<Self> {
        r.expect_magic(CHECKPOINT_MAGIC)?;
        r.expect_version(CHECKPOINT_VERSION)?;
        let count = r.u32()? as usize;
        let mut named: Vec<(String, Tensor)> = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.bytes(len)?)
                .map_err(|_| r.format_error("tensor name is not UTF-8"))?;
            let rank = r.u8()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u64()? as usize);
            }
            let n: usize = dims.iter().product();
            let mut data = Vec::with_capacity(n.min(1 << 26));
            for i in 0..n {
                let cols = dims.get(1).copied().unwrap_or(1).max(1);
                data.push(r.f64_finite(i / cols, i % cols)?);
            }
            let t = Tensor::from_vec(&dims, data).expect("length is the product of dims");
            named.push((name, t));
        }
        let len = r.u32()? as usize;
        let config: CheckpointConfig = serde_json::from_slice(&r.bytes(len)?)
            .map_err(|e| r.format_error(&format!("config record: {e}")))?;
        r.expect_eof()?;

        let mut params = ModelParams::zeros(config.dims);
        for (name, slot) in params.tensors_mut() {
            let pos = named
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| r.format_error(&format!("missing tensor {name}")))?;
            let (_, t) = named.swap_remove(pos);
            if !t.same_shape(slot) {
                return Err(r.format_error(&format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.dims(),
                    slot.dims()
                )));
            }
            *slot = t;
        }
        if let Some((name, _)) = named.first() {
            return Err(r.format_error(&format!("unexpected tensor {name}")));
        }
        params.validate()?;
        Ok(Self { params, config })
    }
}
