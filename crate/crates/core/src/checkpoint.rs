//! Versioned binary container shared by checkpoints and Fisher files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic          8 bytes  "EWCGANCT"
//! version        u32
//! section count  u32
//! per section:   tag [u8; 4] | payload length u64 | payload
//! ```
//!
//! Parameter payloads are raw little-endian `f64`, so a save/load round trip
//! is bit-exact. Metadata lives in a `META` section as JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::models::{MlpSpec, ParamVector};

pub const MAGIC: &[u8; 8] = b"EWCGANCT";
pub const FORMAT_VERSION: u32 = 1;

pub type Tag = [u8; 4];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub sections: Vec<(Tag, Vec<u8>)>,
}

impl Container {
    pub fn push(&mut self, tag: &Tag, payload: Vec<u8>) {
        self.sections.push((*tag, payload));
    }

    pub fn section(&self, tag: &Tag) -> Result<&[u8]> {
        self.sections
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, p)| p.as_slice())
            .ok_or_else(|| Error::Format(format!("missing section {}", String::from_utf8_lossy(tag))))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (tag, payload) in &self.sections {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let count = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        let mut sections = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let tag: Tag = cur.take(4)?.try_into().unwrap();
            let len = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
            let len = usize::try_from(len).map_err(|_| Error::Format("section too large".into()))?;
            sections.push((tag, cur.take(len)?.to_vec()));
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after last section".into()));
        }
        Ok(Self { sections })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn f64s_to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn bytes_to_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Format("float payload is not a multiple of 8 bytes".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Generator and discriminator parameters plus provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub generator: MlpSpec,
    pub discriminator: MlpSpec,
    pub g: ParamVector,
    pub d: ParamVector,
    /// Digest of the configuration that produced this checkpoint.
    pub config_digest: String,
    pub seed: u64,
    pub iteration: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    generator: MlpSpec,
    discriminator: MlpSpec,
    config_digest: String,
    seed: u64,
    iteration: u64,
}

impl Checkpoint {
    pub fn latent_dim(&self) -> usize {
        self.generator.input_width()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = CheckpointMeta {
            kind: "checkpoint".into(),
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            config_digest: self.config_digest.clone(),
            seed: self.seed,
            iteration: self.iteration,
        };
        let mut c = Container::default();
        c.push(b"META", serde_json::to_vec(&meta).expect("meta serializes"));
        c.push(b"GPAR", f64s_to_bytes(self.g.values()));
        c.push(b"DPAR", f64s_to_bytes(self.d.values()));
        c.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::from_bytes(bytes)?;
        let meta: CheckpointMeta = serde_json::from_slice(c.section(b"META")?)
            .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        if meta.kind != "checkpoint" {
            return Err(Error::Format(format!("expected a checkpoint, found {}", meta.kind)));
        }
        meta.generator.validate()?;
        meta.discriminator.validate()?;
        let g = ParamVector::from_values(&meta.generator, bytes_to_f64s(c.section(b"GPAR")?)?)?;
        let d = ParamVector::from_values(&meta.discriminator, bytes_to_f64s(c.section(b"DPAR")?)?)?;
        Ok(Self {
            generator: meta.generator,
            discriminator: meta.discriminator,
            g,
            d,
            config_digest: meta.config_digest,
            seed: meta.seed,
            iteration: meta.iteration,
        })
    }

    pub fn digest(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
