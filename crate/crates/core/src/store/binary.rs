//! Binary format, little-endian throughout:
//!
//! ```text
//! magic "EMBW" | version u32 | dim u32 | words u32 | buckets u32 | min_n u8 | max_n u8
//! words × (len u16 | UTF-8 bytes | dim × f32)
//! buckets × dim × f32
//! ```
//!
//! Plain stores have zero buckets and `min_n = max_n = 0`.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::EmbeddingStore;
use crate::error::{Error, Result};
use crate::vocab::SubwordIndexer;

pub const BINARY_MAGIC: &[u8; 4] = b"EMBW";
pub const BINARY_VERSION: u32 = 1;

fn as_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::InvalidArgument(format!("{what} {value} does not fit in u32")))
}

pub fn write_binary<W: Write>(mut writer: W, store: &EmbeddingStore) -> Result<()> {
    let (buckets, min_n, max_n) = match store.subwords() {
        Some(sw) => (
            sw.indexer().buckets(),
            sw.indexer().min_n() as u8,
            sw.indexer().max_n() as u8,
        ),
        None => (0, 0, 0),
    };

    writer.write_all(BINARY_MAGIC)?;
    writer.write_u32::<LittleEndian>(BINARY_VERSION)?;
    writer.write_u32::<LittleEndian>(as_u32(store.dim(), "dimension")?)?;
    writer.write_u32::<LittleEndian>(as_u32(store.len(), "word count")?)?;
    writer.write_u32::<LittleEndian>(as_u32(buckets, "bucket count")?)?;
    writer.write_u8(min_n)?;
    writer.write_u8(max_n)?;

    for (id, word) in store.words().iter().enumerate() {
        let len = u16::try_from(word.len())
            .map_err(|_| Error::InvalidArgument(format!("word `{word}` is longer than 65535 bytes")))?;
        writer.write_u16::<LittleEndian>(len)?;
        writer.write_all(word.as_bytes())?;
        for &v in store.row(id) {
            writer.write_f32::<LittleEndian>(v)?;
        }
    }
    if let Some(sw) = store.subwords() {
        for &v in sw.rows() {
            writer.write_f32::<LittleEndian>(v)?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn truncated(e: io::Error) -> Error {
    match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Format("file is truncated".into()),
        _ => Error::Io(e),
    }
}

fn read_floats<R: Read>(reader: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut values = vec![0f32; n];
    reader
        .read_f32_into::<LittleEndian>(&mut values)
        .map_err(truncated)?;
    Ok(values)
}

pub fn read_binary<R: Read>(mut reader: R) -> Result<EmbeddingStore> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic).map_err(truncated)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = reader.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != BINARY_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = reader.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let n_words = reader.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let buckets = reader.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let min_n = reader.read_u8().map_err(truncated)? as usize;
    let max_n = reader.read_u8().map_err(truncated)? as usize;
    if dim == 0 {
        return Err(Error::Format("dimension must be positive".into()));
    }

    let mut words = Vec::new();
    let mut table = Vec::new();
    for _ in 0..n_words {
        let len = reader.read_u16::<LittleEndian>().map_err(truncated)? as usize;
        let mut bytes = vec![0u8; len];
        reader.read_exact(&mut bytes).map_err(truncated)?;
        let word = String::from_utf8(bytes).map_err(|_| Error::Format("word is not valid UTF-8".into()))?;
        words.push(word);
        table.extend(read_floats(&mut reader, dim)?);
    }

    let store = if buckets == 0 {
        EmbeddingStore::new(words, dim, table)
    } else {
        let indexer = SubwordIndexer::new(min_n, max_n, buckets)
            .map_err(|e| Error::Format(format!("invalid subword header: {e}")))?;
        let rows = read_floats(&mut reader, buckets * dim)?;
        EmbeddingStore::with_subwords(words, dim, table, indexer, rows)
    };
    store.map_err(|e| Error::Format(e.to_string()))
}
