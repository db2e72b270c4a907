//! Binary checkpoint: magic, version byte, JSON metadata (config and
//! lexicon), then flat `(name, shape, row-major f64)` records, all little
//! endian.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::MagcnConfig;
use crate::autodiff::{ParamSet, Tensor};
use crate::embeddings::Lexicon;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MAGCNCKP";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: MagcnConfig,
    pub lexicon: Lexicon,
    pub params: ParamSet,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    config: MagcnConfig,
    positive_words: Vec<String>,
    negative_words: Vec<String>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Metadata {
            config: self.config.clone(),
            positive_words: self.lexicon.positive_words().map(str::to_string).collect(),
            negative_words: self.lexicon.negative_words().map(str::to_string).collect(),
        };
        let meta = serde_json::to_vec(&meta).map_err(|e| Error::Validation(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for dim in t.shape() {
                out.extend_from_slice(&(*dim as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Validation("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u8(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = read_u64(&mut r)? as usize;
        let mut meta = vec![0u8; meta_len];
        read_exact(&mut r, &mut meta)?;
        let meta: Metadata =
            serde_json::from_slice(&meta).map_err(|e| Error::Validation(format!("checkpoint metadata: {e}")))?;

        let count = read_u64(&mut r)?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Validation(e.to_string()))?;
            let rank = read_u8(&mut r)? as usize;
            let shape = (0..rank)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let data = (0..numel)
                .map(|_| read_u64(&mut r).map(f64::from_bits))
                .collect::<Result<Vec<_>>>()?;
            params.insert(name, Tensor::new(shape, data)?);
        }
        if (r.position() as usize) != bytes.len() {
            return Err(Error::Validation("trailing bytes after checkpoint records".into()));
        }
        Ok(Self {
            config: meta.config,
            lexicon: Lexicon::from_words(meta.positive_words, meta.negative_words),
            params,
        })
    }
}

fn read_exact(r: &mut Cursor<&[u8]>, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Validation("checkpoint is truncated".into()))
}

fn read_u8(r: &mut Cursor<&[u8]>) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

fn read_u32(r: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut Cursor<&[u8]>) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
