//! Per-frame geometric transforms. All of them keep the image size.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dream::ImageBuffer;
use crate::ops::bilinear_resize;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("zoom of {px}px needs |px| < min(H, W) / 2 for a {height}x{width} image")]
    ZoomTooLarge {
        px: i32,
        height: usize,
        width: usize,
    },
    #[error("translation ({dx}, {dy}) must be smaller than the {width}x{height} image")]
    ShiftTooLarge {
        dx: i32,
        dy: i32,
        height: usize,
        width: usize,
    },
    #[error("fill has {got} components, image has {expected} channels")]
    FillChannels { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, TransformError>;

/// Default background for pixels uncovered by a transform.
pub const BLACK: [f32; 3] = [-1.0, -1.0, -1.0];

/// Applied once per video frame: zoom, then rotate, then translate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTransform {
    /// Positive crops (zoom in), negative pads (zoom out).
    pub zoom_px: i32,
    /// Counter-clockwise, in degrees.
    pub rotate_deg: f64,
    /// Right and down for positive values.
    pub translate_px: (i32, i32),
    pub fill: [f32; 3],
}

impl Default for FrameTransform {
    fn default() -> Self {
        Self {
            zoom_px: 0,
            rotate_deg: 0.0,
            translate_px: (0, 0),
            fill: BLACK,
        }
    }
}

impl FrameTransform {
    pub fn is_identity(&self) -> bool {
        self.zoom_px == 0 && self.rotate_deg == 0.0 && self.translate_px == (0, 0)
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        check_zoom(self.zoom_px, height, width)?;
        check_shift(self.translate_px.0, self.translate_px.1, height, width)
    }

    pub fn apply(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        let fill = &self.fill[..];
        let z = zoom(img, self.zoom_px, fill)?;
        let r = rotate(&z, self.rotate_deg, fill)?;
        translate(&r, self.translate_px.0, self.translate_px.1, fill)
    }
}

fn check_fill(img: &ImageBuffer, fill: &[f32]) -> Result<()> {
    if fill.len() != img.channels() {
        return Err(TransformError::FillChannels {
            expected: img.channels(),
            got: fill.len(),
        });
    }
    Ok(())
}

fn check_zoom(px: i32, height: usize, width: usize) -> Result<()> {
    if 2 * px.unsigned_abs() as usize >= height.min(width) {
        return Err(TransformError::ZoomTooLarge { px, height, width });
    }
    Ok(())
}

fn check_shift(dx: i32, dy: i32, height: usize, width: usize) -> Result<()> {
    if dx.unsigned_abs() as usize >= width || dy.unsigned_abs() as usize >= height {
        return Err(TransformError::ShiftTooLarge {
            dx,
            dy,
            height,
            width,
        });
    }
    Ok(())
}

fn buffer(t: Tensor) -> ImageBuffer {
    ImageBuffer::clamped(t).expect("transforms keep NCHW batch-1 shape")
}

fn fill_value(fill: &[f32], c: usize) -> f32 {
    fill[c].clamp(-1.0, 1.0)
}

/// Crops (`px > 0`) or pads with `fill` (`px < 0`) `|px|` pixels on every
/// border, then resizes bilinearly back to the original size.
pub fn zoom(img: &ImageBuffer, px: i32, fill: &[f32]) -> Result<ImageBuffer> {
    check_fill(img, fill)?;
    let (c, h, w) = (img.channels(), img.height(), img.width());
    check_zoom(px, h, w)?;
    if px == 0 {
        return Ok(img.clone());
    }
    let src = img.data();
    let canvas = if px > 0 {
        let p = px as usize;
        let (ch, cw) = (h - 2 * p, w - 2 * p);
        let mut data = Vec::with_capacity(c * ch * cw);
        for plane in src.chunks_exact(h * w) {
            for y in p..h - p {
                data.extend_from_slice(&plane[y * w + p..y * w + w - p]);
            }
        }
        Tensor::from_vec(vec![1, c, ch, cw], data)
    } else {
        let p = px.unsigned_abs() as usize;
        let (ch, cw) = (h + 2 * p, w + 2 * p);
        let mut data = Vec::with_capacity(c * ch * cw);
        for (ci, plane) in src.chunks_exact(h * w).enumerate() {
            let f = fill_value(fill, ci);
            data.extend(std::iter::repeat_n(f, p * cw));
            for row in plane.chunks_exact(w) {
                data.extend(std::iter::repeat_n(f, p));
                data.extend_from_slice(row);
                data.extend(std::iter::repeat_n(f, p));
            }
            data.extend(std::iter::repeat_n(f, p * cw));
        }
        Tensor::from_vec(vec![1, c, ch, cw], data)
    }
    .expect("canvas dimensions are positive");
    let out = bilinear_resize(&canvas, h, w).expect("target size is positive");
    Ok(buffer(out))
}

/// Rotates counter-clockwise by `deg` about the image centre with bilinear
/// inverse mapping; samples falling outside the source take `fill`.
pub fn rotate(img: &ImageBuffer, deg: f64, fill: &[f32]) -> Result<ImageBuffer> {
    check_fill(img, fill)?;
    if deg == 0.0 {
        return Ok(img.clone());
    }
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let (sin, cos) = deg.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let src = img.data();
    let mut out = vec![0.0f32; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // Rows grow downwards, so a visually counter-clockwise turn maps
            // an output offset back through (dx cos - dy sin, dx sin + dy cos).
            let sx = cx + dx * cos - dy * sin;
            let sy = cy + dx * sin + dy * cos;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = (sx - x0) as f32;
            let fy = (sy - y0) as f32;
            let (x0, y0) = (x0 as i64, y0 as i64);
            for ci in 0..c {
                let plane = &src[ci * h * w..(ci + 1) * h * w];
                let f = fill_value(fill, ci);
                let at = |yy: i64, xx: i64| -> f32 {
                    if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                        f
                    } else {
                        plane[yy as usize * w + xx as usize]
                    }
                };
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
                let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
                out[ci * h * w + y * w + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Ok(buffer(
        Tensor::from_vec(vec![1, c, h, w], out).expect("same shape as input"),
    ))
}

/// Integer shift: right by `dx`, down by `dy`. Vacated pixels take `fill`.
pub fn translate(img: &ImageBuffer, dx: i32, dy: i32, fill: &[f32]) -> Result<ImageBuffer> {
    check_fill(img, fill)?;
    let (c, h, w) = (img.channels(), img.height(), img.width());
    check_shift(dx, dy, h, w)?;
    if dx == 0 && dy == 0 {
        return Ok(img.clone());
    }
    let src = img.data();
    let mut out = Vec::with_capacity(c * h * w);
    for (ci, plane) in src.chunks_exact(h * w).enumerate() {
        let f = fill_value(fill, ci);
        for y in 0..h as i64 {
            let sy = y - i64::from(dy);
            for x in 0..w as i64 {
                let sx = x - i64::from(dx);
                let inside = (0..h as i64).contains(&sy) && (0..w as i64).contains(&sx);
                out.push(if inside {
                    plane[sy as usize * w + sx as usize]
                } else {
                    f
                });
            }
        }
    }
    Ok(buffer(
        Tensor::from_vec(vec![1, c, h, w], out).expect("same shape as input"),
    ))
}
