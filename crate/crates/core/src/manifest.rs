//! Run manifest written next to every output. It records everything needed
//! to replay a run bit-exactly: weights digest, start source, and the full
//! dream and video settings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::ArchConfig;
use crate::dream::DreamConfig;
use crate::rng::PRNG_ALGORITHM;
use crate::video::VideoSettings;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightsRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StartSource {
    Noise { seed: u64 },
    Image { path: String, sha256: String },
}

/// Where a run's inputs came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub weights: WeightsRef,
    pub start: StartSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Dream,
    Video,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub run: RunKind,
    pub prng: String,
    pub weights: WeightsRef,
    pub arch: ArchConfig,
    pub start: StartSource,
    pub dream: DreamConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video: Option<VideoSettings>,
}

impl Manifest {
    pub fn new(
        provenance: &Provenance,
        arch: ArchConfig,
        dream: DreamConfig,
        video: Option<VideoSettings>,
    ) -> Self {
        Self {
            tool: concat!("discdream ", env!("CARGO_PKG_VERSION")).to_string(),
            run: if video.is_some() {
                RunKind::Video
            } else {
                RunKind::Dream
            },
            prng: PRNG_ALGORITHM.to_string(),
            weights: provenance.weights.clone(),
            arch,
            start: provenance.start.clone(),
            dream,
            video,
        }
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            weights: self.weights.clone(),
            start: self.start.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest is plain data");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), ManifestError> {
        fs::write(path, self.to_json()).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ManifestError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}
