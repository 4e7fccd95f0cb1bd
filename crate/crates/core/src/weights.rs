//! DDRW weights container.
//!
//! All integers are little-endian `u32`, payloads little-endian `f32`:
//!
//! ```text
//! magic        4 bytes  "DDRW"
//! version      u32      1
//! arch         6 x u32  img_resolution, img_channels, channel_base,
//!                       channel_max, mbstd_group, latent_dim
//! tensor_count u32
//! record*      name_len u32, name (UTF-8), ndim u32, dims u32 x ndim,
//!              payload f32 x prod(dims), row-major
//! ```
//!
//! Records are written in graph order. Loading validates the whole file
//! against the architecture it declares before a graph is built.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arch::{ArchConfig, ArchError};
use crate::discriminator::{build_discriminator, parameter_specs, DiscriminatorGraph};
use crate::rng::SeededStream;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"DDRW";
pub const VERSION: u32 = 1;
/// Magic, version, six architecture fields and the record count.
pub const HEADER_LEN: usize = 4 + 4 + 6 * 4 + 4;
const MAX_NDIM: usize = 8;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("truncated file: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("bad magic {found:02x?} at offset 0, expected \"DDRW\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {0} (this build reads version {VERSION})")]
    UnsupportedVersion(u32),
    #[error("architecture header: {0}")]
    Arch(#[from] ArchError),
    #[error("record count {found} does not match the {expected} tensors the architecture defines")]
    RecordCount { expected: usize, found: usize },
    #[error("record name at offset {offset} is not valid UTF-8")]
    InvalidName { offset: usize },
    #[error("record `{name}` at offset {offset}: rank {ndim} exceeds {MAX_NDIM}")]
    BadRank {
        name: String,
        offset: usize,
        ndim: usize,
    },
    #[error("record `{name}`: shape {got:?} does not match expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("record `{0}` is not a parameter of this architecture")]
    ExtraRecord(String),
    #[error("record `{0}` appears more than once")]
    DuplicateRecord(String),
    #[error("parameter `{0}` has no record")]
    MissingRecord(String),
    #[error("record `{name}` holds a non-finite value")]
    NonFinite { name: String },
    #[error("{count} unexpected trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("architecture field `{field}` = {value} does not fit in u32")]
    FieldOverflow { field: &'static str, value: usize },
}

pub type Result<T> = std::result::Result<T, WeightsError>;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(WeightsError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
}

fn put_u32(out: &mut Vec<u8>, field: &'static str, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| WeightsError::FieldOverflow { field, value: v })?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn arch_fields(a: &ArchConfig) -> [(&'static str, usize); 6] {
    [
        ("img_resolution", a.img_resolution),
        ("img_channels", a.img_channels),
        ("channel_base", a.channel_base),
        ("channel_max", a.channel_max),
        ("mbstd_group", a.mbstd_group),
        ("latent_dim", a.latent_dim),
    ]
}

/// Serialises every parameter of `g`.
pub fn encode_weights(g: &DiscriminatorGraph) -> Result<Vec<u8>> {
    let params = g.parameters();
    let payload: usize = params
        .iter()
        .map(|(n, t)| 8 + n.len() + 4 * t.rank() + 4 * t.len())
        .sum();
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, "version", VERSION as usize)?;
    for (field, v) in arch_fields(g.arch()) {
        put_u32(&mut out, field, v)?;
    }
    put_u32(&mut out, "tensor_count", params.len())?;
    for (name, t) in params {
        put_u32(&mut out, "name_len", name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, "ndim", t.rank())?;
        for &d in t.shape() {
            put_u32(&mut out, "dim", d)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses and validates a DDRW image; nothing is built unless every check
/// passes.
pub fn decode_weights(bytes: &[u8]) -> Result<(ArchConfig, DiscriminatorGraph)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(WeightsError::BadMagic { found: magic });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(WeightsError::UnsupportedVersion(version));
    }
    let arch = ArchConfig {
        img_resolution: r.usize()?,
        img_channels: r.usize()?,
        channel_base: r.usize()?,
        channel_max: r.usize()?,
        mbstd_group: r.usize()?,
        latent_dim: r.usize()?,
    };
    arch.validate()?;
    let specs = parameter_specs(&arch);
    let count = r.usize()?;
    if count != specs.len() {
        return Err(WeightsError::RecordCount {
            expected: specs.len(),
            found: count,
        });
    }
    let expected: HashMap<&str, &[usize]> = specs
        .iter()
        .map(|s| (s.name.as_str(), s.shape.as_slice()))
        .collect();

    let mut records: HashMap<String, Tensor> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = r.usize()?;
        let name_at = r.pos;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| WeightsError::InvalidName { offset: name_at })?
            .to_string();
        let want = *expected
            .get(name.as_str())
            .ok_or_else(|| WeightsError::ExtraRecord(name.clone()))?;
        if records.contains_key(&name) {
            return Err(WeightsError::DuplicateRecord(name));
        }
        let ndim_at = r.pos;
        let ndim = r.usize()?;
        if ndim > MAX_NDIM {
            return Err(WeightsError::BadRank {
                name,
                offset: ndim_at,
                ndim,
            });
        }
        let dims = (0..ndim).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        if dims != want {
            return Err(WeightsError::ShapeMismatch {
                name,
                expected: want.to_vec(),
                got: dims,
            });
        }
        let n: usize = dims.iter().product();
        let raw = r.take(n * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(WeightsError::NonFinite { name });
        }
        let t = Tensor::from_vec(dims, data).expect("dims match payload");
        records.insert(name, t);
    }
    if r.pos != bytes.len() {
        return Err(WeightsError::TrailingBytes {
            offset: r.pos,
            count: bytes.len() - r.pos,
        });
    }
    if let Some(missing) = specs.iter().find(|s| !records.contains_key(&s.name)) {
        return Err(WeightsError::MissingRecord(missing.name.clone()));
    }

    let mut g = build_discriminator(&arch)?;
    for (name, t) in records {
        g.set_parameter(&name, t)
            .expect("names and shapes validated against the builder");
    }
    Ok((arch, g))
}

pub fn write_weights(g: &DiscriminatorGraph, path: &Path) -> Result<()> {
    let bytes = encode_weights(g)?;
    fs::write(path, bytes).map_err(|source| WeightsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| WeightsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_weights(path: &Path) -> Result<(ArchConfig, DiscriminatorGraph)> {
    decode_weights(&read_file(path)?)
}

/// Lower-case hex SHA-256 of a weights file's bytes.
pub fn weights_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Every parameter drawn i.i.d. from `N(0, 1/fan_in)` (standard deviation
/// `1/sqrt(fan_in)`), in graph order from one seeded stream.
pub fn random_weights(
    cfg: &ArchConfig,
    seed: u64,
) -> std::result::Result<DiscriminatorGraph, ArchError> {
    let mut g = build_discriminator(cfg)?;
    let mut rng = SeededStream::new(seed);
    for spec in parameter_specs(cfg) {
        let std = 1.0 / (spec.fan_in as f64).sqrt();
        let t = g
            .parameter_mut(&spec.name)
            .expect("builder allocates every spec");
        for v in t.data_mut() {
            *v = (rng.standard_normal() * std) as f32;
        }
    }
    Ok(g)
}
