//! 8-bit RGB PNG <-> `[-1, 1]` image buffers.

use std::path::{Path, PathBuf};

use image::{ColorType, ImageFormat, RgbImage};
use thiserror::Error;

use crate::dream::ImageBuffer;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: images with an alpha channel are not supported; flatten to RGB first")]
    Alpha { path: PathBuf },
    #[error("only 3-channel images can be written as RGB PNG, got {0} channels")]
    Channels(usize),
}

pub type Result<T> = std::result::Result<T, ImageIoError>;

/// `round((v + 1) * 127.5)`, clamped to `0..=255`.
pub fn to_u8(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// `v / 127.5 - 1`.
pub fn from_u8(v: u8) -> f32 {
    f32::from(v) / 127.5 - 1.0
}

pub fn to_rgb_image(img: &ImageBuffer) -> Result<RgbImage> {
    if img.channels() != 3 {
        return Err(ImageIoError::Channels(img.channels()));
    }
    let (h, w) = (img.height(), img.width());
    let plane = h * w;
    let d = img.data();
    let mut raw = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        raw.extend([to_u8(d[i]), to_u8(d[plane + i]), to_u8(d[2 * plane + i])]);
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized for the image"))
}

pub fn from_rgb_image(rgb: &RgbImage) -> ImageBuffer {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let plane = h * w;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = from_u8(px.0[c]);
        }
    }
    ImageBuffer::new(Tensor::from_vec(vec![1, 3, h, w], data).expect("positive dims"))
        .expect("mapped values lie in [-1, 1]")
}

pub fn save_png(img: &ImageBuffer, path: &Path) -> Result<()> {
    to_rgb_image(img)?
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| ImageIoError::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Loads any alpha-free image as RGB.
pub fn load_rgb(path: &Path) -> Result<ImageBuffer> {
    let img = image::open(path).map_err(|source| ImageIoError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    if matches!(
        img.color(),
        ColorType::La8
            | ColorType::La16
            | ColorType::Rgba8
            | ColorType::Rgba16
            | ColorType::Rgba32F
    ) {
        return Err(ImageIoError::Alpha {
            path: path.to_path_buf(),
        });
    }
    Ok(from_rgb_image(&img.to_rgb8()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_round_trip() {
        for v in 0..=255u8 {
            assert_eq!(to_u8(from_u8(v)), v);
        }
        assert_eq!(to_u8(-1.0), 0);
        assert_eq!(to_u8(1.0), 255);
        assert_eq!(to_u8(3.0), 255);
    }

    #[test]
    fn rejects_alpha() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        image::RgbaImage::new(2, 2).save(&p).unwrap();
        assert!(matches!(load_rgb(&p), Err(ImageIoError::Alpha { .. })));
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let img = crate::dream::random_start(4, 3, 5, 6);
        save_png(&img, &p).unwrap();
        let back = load_rgb(&p).unwrap();
        assert_eq!((back.height(), back.width()), (5, 6));
        let diff = back.tensor().max_abs_diff(img.tensor()).unwrap();
        assert!(diff <= 1.0 / 127.5, "{diff}");
    }
}
