//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian `u32`, payloads little-endian `f64`):
//!
//! ```text
//! magic[4] version meta_len meta[meta_len] section_count
//! section*: name_len name[name_len] rank dims[rank] payload[prod(dims)]
//! ```
//!
//! Denoiser files use magic `FLWM` and metadata
//! `[layers, heads, node_dim, edge_dim, cond_hidden, time_dim, cond_dim]`.
//! Encoder files use magic `FLWE` and metadata `[hidden1, hidden2, out]`,
//! with the binning grid in a rank-1 section named `binning`.

use std::fs;
use std::path::Path;

use specflow_core::denoiser::{DenoiserConfig, DenoiserError, DenoiserParams};
use specflow_core::params::{ParamSet, Tensor};
use specflow_core::spectrum::{EncoderConfig, EncoderParams, SpectrumError};

pub const DENOISER_MAGIC: [u8; 4] = *b"FLWM";
pub const ENCODER_MAGIC: [u8; 4] = *b"FLWE";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("checkpoint version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file ends early at byte {offset}")]
    TruncatedFile { offset: usize },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Encoder(#[from] SpectrumError),
}

/// A named, shaped `f64` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f64>,
}

/// Decoded container, independent of the model it describes.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub magic: [u8; 4],
    pub meta: Vec<u32>,
    pub sections: Vec<Section>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.magic);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.meta.len() as u32);
        self.meta.iter().for_each(|&m| put_u32(&mut out, m));
        put_u32(&mut out, self.sections.len() as u32);
        for s in &self.sections {
            put_u32(&mut out, s.name.len() as u32);
            out.extend_from_slice(s.name.as_bytes());
            put_u32(&mut out, s.dims.len() as u32);
            s.dims.iter().for_each(|&d| put_u32(&mut out, d));
            for x in &s.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], expected_magic: [u8; 4]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("four bytes");
        if magic != expected_magic {
            return Err(CheckpointError::BadMagic {
                found: magic,
                expected: expected_magic,
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let meta_len = r.u32()? as usize;
        let meta = (0..meta_len).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let count = r.u32()? as usize;
        let mut sections = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| CheckpointError::Malformed("section name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .ok_or_else(|| CheckpointError::Malformed(format!("section `{name}` is too large")))?;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| CheckpointError::Malformed("overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                .collect();
            sections.push(Section { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Container { magic, meta, sections })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::TruncatedFile { offset: self.bytes.len() }),
        }
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
}

fn matrix_sections(params: &ParamSet) -> Vec<Section> {
    params
        .iter()
        .map(|(name, t)| Section {
            name: name.to_string(),
            dims: vec![t.rows as u32, t.cols as u32],
            data: t.data.clone(),
        })
        .collect()
}

fn param_set(sections: Vec<Section>) -> Result<ParamSet, CheckpointError> {
    let mut set = ParamSet::new();
    for s in sections {
        if s.dims.len() != 2 {
            return Err(CheckpointError::Malformed(format!("section `{}` has rank {}", s.name, s.dims.len())));
        }
        set.push(
            s.name,
            Tensor {
                rows: s.dims[0] as usize,
                cols: s.dims[1] as usize,
                data: s.data,
            },
        );
    }
    Ok(set)
}

pub fn denoiser_to_bytes(p: &DenoiserParams) -> Vec<u8> {
    let c = p.config();
    Container {
        magic: DENOISER_MAGIC,
        meta: [c.layers, c.heads, c.node_dim, c.edge_dim, c.cond_hidden, c.time_dim, c.cond_dim]
            .iter()
            .map(|&v| v as u32)
            .collect(),
        sections: matrix_sections(p.params()),
    }
    .to_bytes()
}

pub fn denoiser_from_bytes(bytes: &[u8]) -> Result<DenoiserParams, CheckpointError> {
    let c = Container::from_bytes(bytes, DENOISER_MAGIC)?;
    let m: Vec<usize> = c.meta.iter().map(|&v| v as usize).collect();
    let [layers, heads, node_dim, edge_dim, cond_hidden, time_dim, cond_dim] = m[..] else {
        return Err(CheckpointError::Malformed(format!("expected 7 metadata words, got {}", m.len())));
    };
    let config = DenoiserConfig {
        layers,
        heads,
        node_dim,
        edge_dim,
        cond_hidden,
        time_dim,
        cond_dim,
    };
    Ok(DenoiserParams::from_parts(config, param_set(c.sections)?)?)
}

pub fn encoder_to_bytes(p: &EncoderParams) -> Vec<u8> {
    let c = p.config();
    let mut sections = vec![Section {
        name: "binning".into(),
        dims: vec![2],
        data: vec![c.bin_width, c.mz_max],
    }];
    sections.extend(matrix_sections(p.params()));
    Container {
        magic: ENCODER_MAGIC,
        meta: vec![c.hidden1 as u32, c.hidden2 as u32, c.out as u32],
        sections,
    }
    .to_bytes()
}

pub fn encoder_from_bytes(bytes: &[u8]) -> Result<EncoderParams, CheckpointError> {
    let mut c = Container::from_bytes(bytes, ENCODER_MAGIC)?;
    let [hidden1, hidden2, out] = c.meta[..] else {
        return Err(CheckpointError::Malformed(format!("expected 3 metadata words, got {}", c.meta.len())));
    };
    if c.sections.first().map(|s| (s.name.as_str(), s.dims.as_slice())) != Some(("binning", &[2][..])) {
        return Err(CheckpointError::Malformed("missing binning section".into()));
    }
    let binning = c.sections.remove(0);
    let config = EncoderConfig {
        bin_width: binning.data[0],
        mz_max: binning.data[1],
        hidden1: hidden1 as usize,
        hidden2: hidden2 as usize,
        out: out as usize,
    };
    Ok(EncoderParams::from_parts(config, param_set(c.sections)?)?)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read(path: &Path) -> Result<Vec<u8>, CheckpointError> {
    fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn save_denoiser(p: &DenoiserParams, path: &Path) -> Result<(), CheckpointError> {
    write(path, &denoiser_to_bytes(p))
}

pub fn load_denoiser(path: &Path) -> Result<DenoiserParams, CheckpointError> {
    denoiser_from_bytes(&read(path)?)
}

pub fn save_encoder(p: &EncoderParams, path: &Path) -> Result<(), CheckpointError> {
    write(path, &encoder_to_bytes(p))
}

pub fn load_encoder(path: &Path) -> Result<EncoderParams, CheckpointError> {
    encoder_from_bytes(&read(path)?)
}
