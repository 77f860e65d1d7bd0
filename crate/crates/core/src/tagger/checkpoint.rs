//! Tagger checkpoints: `EMBT`, a u32 version, a u64 header length, a JSON
//! header naming the shape, inventories and tensor shapes, then every tensor
//! as little-endian f32 in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::network::{Shape, TaggerParams, Tensor, TENSOR_NAMES};
use super::{Inventories, TaggerModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EMBT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    shape: Shape,
    inventories: Inventories,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<W: Write>(mut writer: W, model: &TaggerModel<f32>) -> Result<()> {
    let header = Header {
        shape: *model.shape(),
        inventories: model.inventories().clone(),
        tensors: TENSOR_NAMES
            .iter()
            .zip(model.params.tensors())
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    writer.write_all(CHECKPOINT_MAGIC)?;
    writer.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    writer.write_u64::<LittleEndian>(json.len() as u64)?;
    writer.write_all(&json)?;
    for t in model.params.tensors() {
        for &x in &t.data {
            writer.write_f32::<LittleEndian>(x)?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated tagger checkpoint".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_checkpoint<R: Read>(mut reader: R) -> Result<TaggerModel<f32>> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a tagger checkpoint".into()));
    }
    let version = reader.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = reader.read_u64::<LittleEndian>().map_err(truncated)?;
    let mut json = vec![0u8; usize::try_from(len).map_err(|_| Error::Format("header too large".into()))?];
    reader.read_exact(&mut json).map_err(truncated)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;

    if header.tensors.len() != TENSOR_NAMES.len()
        || header.tensors.iter().zip(TENSOR_NAMES).any(|(t, name)| t.name != name)
    {
        return Err(Error::Format("unexpected tensor list in checkpoint".into()));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut data = vec![0f32; n];
        reader.read_f32_into::<LittleEndian>(&mut data).map_err(truncated)?;
        tensors.push(Tensor {
            shape: entry.shape.clone(),
            data,
        });
    }
    TaggerModel::new(header.inventories, header.shape, TaggerParams::from_tensors(tensors))
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &TaggerModel<f32>) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), model)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TaggerModel<f32>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
