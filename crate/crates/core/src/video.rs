//! Iterative video: transform the current frame, dream on it, write it out,
//! and feed the result into the next frame.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discriminator::DiscriminatorGraph;
use crate::dream::{dream, DreamConfig, DreamError, ImageBuffer};
use crate::image_io::{save_png, ImageIoError};
use crate::manifest::{Manifest, ManifestError, Provenance, MANIFEST_FILE};
use crate::transform::{FrameTransform, TransformError};

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("invalid video configuration: {0}")]
    Config(String),
    #[error("output directory {path}: {source}")]
    OutputDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("frame {frame}: {source}")]
    Dream {
        frame: usize,
        #[source]
        source: DreamError,
    },
    #[error(transparent)]
    Image(#[from] ImageIoError),
}

pub type Result<T> = std::result::Result<T, VideoError>;

/// Per-run video parameters (everything except the dream settings).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSettings {
    pub fps: u32,
    pub duration_sec: f64,
    pub iterations_per_frame: usize,
    pub transform: FrameTransform,
    /// Emit frames in reverse temporal order.
    pub reverse: bool,
}

impl VideoSettings {
    pub fn frame_count(&self) -> usize {
        (f64::from(self.fps) * self.duration_sec).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.fps == 0 {
            return Err(VideoError::Config("fps must be at least 1".into()));
        }
        if !(self.duration_sec.is_finite() && self.duration_sec > 0.0) {
            return Err(VideoError::Config(format!(
                "duration must be positive, got {}",
                self.duration_sec
            )));
        }
        if self.frame_count() == 0 {
            return Err(VideoError::Config(format!(
                "{} fps for {} s rounds to zero frames",
                self.fps, self.duration_sec
            )));
        }
        if !self.transform.rotate_deg.is_finite() {
            return Err(VideoError::Config("rotation must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoConfig {
    pub settings: VideoSettings,
    /// Pyramid settings used on every frame; its iteration count is
    /// replaced by `settings.iterations_per_frame`.
    pub dream: DreamConfig,
    pub out_dir: PathBuf,
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(frame_file_name(index))
}

/// Renders `round(fps * duration)` frames into `vcfg.out_dir` and writes
/// the run manifest there. Returns the number of frames written.
pub fn render_video(
    g: &DiscriminatorGraph,
    start: &ImageBuffer,
    vcfg: &VideoConfig,
    provenance: &Provenance,
) -> Result<usize> {
    let s = &vcfg.settings;
    s.validate()?;
    s.transform.validate(start.height(), start.width())?;
    let mut frame_cfg = vcfg.dream.clone();
    frame_cfg.iterations = s.iterations_per_frame;
    frame_cfg
        .validate()
        .map_err(|source| VideoError::Dream { frame: 0, source })?;

    fs::create_dir_all(&vcfg.out_dir).map_err(|source| VideoError::OutputDir {
        path: vcfg.out_dir.clone(),
        source,
    })?;
    let manifest = Manifest::new(provenance, *g.arch(), vcfg.dream.clone(), Some(s.clone()));
    manifest.write(&vcfg.out_dir.join(MANIFEST_FILE))?;

    let total = s.frame_count();
    let mut current = start.clone();
    for t in 0..total {
        let moved = s.transform.apply(&current)?;
        current = dream(g, &moved, &frame_cfg)
            .map_err(|source| VideoError::Dream { frame: t, source })?;
        let index = if s.reverse { total - 1 - t } else { t };
        save_png(&current, &frame_path(&vcfg.out_dir, index))?;
        info!("frame {}/{} -> {}", t + 1, total, frame_file_name(index));
    }
    Ok(total)
}
