//! The dreaming loop: seeded starts, normalised gradient-ascent steps and the
//! octave pyramid.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::TapSet;
use crate::discriminator::{DiscriminatorGraph, GraphError};
use crate::ops::{bilinear_resize, bilinear_resize_grad};
use crate::rng::SeededStream;
use crate::tensor::{Tensor, TensorError};

/// Added to the gradient's standard deviation before dividing by it.
pub const GRAD_STD_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DreamError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid dream configuration: {0}")]
    Config(String),
    #[error("image {height}x{width} is smaller than the {required}x{required} the taps need")]
    ImageTooSmall {
        height: usize,
        width: usize,
        required: usize,
    },
    #[error("every octave is smaller than the {required}px minimum of the taps; enable octave resizing or tap shallower layers")]
    AllOctavesSkipped { required: usize },
    #[error("image buffer: {0}")]
    Buffer(String),
}

pub type Result<T> = std::result::Result<T, DreamError>;

/// Per-tap loss normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    #[default]
    None,
    /// Divide by the number of activation elements.
    Count,
    /// Divide by the square root of the number of elements.
    Sqrt,
}

impl NormMode {
    pub fn factor(self, elements: usize) -> f32 {
        match self {
            NormMode::None => 1.0,
            NormMode::Count => (1.0 / elements as f64) as f32,
            NormMode::Sqrt => (1.0 / (elements as f64).sqrt()) as f32,
        }
    }
}

impl std::str::FromStr for NormMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(NormMode::None),
            "count" => Ok(NormMode::Count),
            "sqrt" => Ok(NormMode::Sqrt),
            _ => Err(format!(
                "unknown normalization `{s}` (expected none, count or sqrt)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DreamConfig {
    pub taps: TapSet,
    pub norm: NormMode,
    pub octaves: usize,
    pub octave_scale: f64,
    pub learning_rate: f32,
    pub iterations: usize,
    pub resize_octaves: bool,
    pub seed: u64,
}

impl DreamConfig {
    /// Ten octaves at scale 1.4, learning rate 0.01, 20 iterations per octave,
    /// octaves resized to the native resolution.
    pub fn new(taps: TapSet) -> Self {
        Self {
            taps,
            norm: NormMode::None,
            octaves: 10,
            octave_scale: 1.4,
            learning_rate: 0.01,
            iterations: 20,
            resize_octaves: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DreamError::Config(m));
        if self.octaves == 0 {
            return bad("octaves must be at least 1".into());
        }
        if !(self.octave_scale.is_finite() && self.octave_scale > 1.0) {
            return bad(format!(
                "octave scale must exceed 1, got {}",
                self.octave_scale
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            ));
        }
        Ok(())
    }

    /// Nominal `(height, width)` of octave `k` for a `height x width` start.
    pub fn octave_size(&self, k: usize, height: usize, width: usize) -> (usize, usize) {
        let f = self.octave_scale.powi(k as i32);
        let round = |v: usize| ((v as f64 / f).round() as usize).max(1);
        (round(height), round(width))
    }
}

/// Single image `[1, C, H, W]` with every value in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer(Tensor);

impl ImageBuffer {
    pub fn new(t: Tensor) -> Result<Self> {
        let (n, _, _, _) = t.dims4("ImageBuffer")?;
        if n != 1 {
            return Err(DreamError::Buffer(format!("batch must be 1, got {n}")));
        }
        if let Some(v) = t.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(DreamError::Buffer(format!("value {v} outside [-1, 1]")));
        }
        Ok(Self(t))
    }

    /// Clamps into range (NaN becomes 0).
    pub fn clamped(mut t: Tensor) -> Result<Self> {
        for v in t.data_mut() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        }
        Self::new(t)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self(Tensor::full(
            &[1, channels, height, width],
            value.clamp(-1.0, 1.0),
        ))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[3]
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }
}

/// I.i.d. uniform noise in `[-1, 1)` from the seeded SplitMix64 stream, in
/// NCHW order.
pub fn random_start(seed: u64, channels: usize, height: usize, width: usize) -> ImageBuffer {
    let mut rng = SeededStream::new(seed);
    let data = (0..channels * height * width)
        .map(|_| rng.uniform_symmetric())
        .collect();
    let t = Tensor::from_vec(vec![1, channels, height, width], data)
        .expect("dimensions must be positive");
    ImageBuffer(t)
}

/// Loss and gradient at `img`, evaluating at the native resolution when
/// octave resizing is on.
fn loss_and_grad(
    g: &DiscriminatorGraph,
    img: &ImageBuffer,
    cfg: &DreamConfig,
) -> Result<(f64, Tensor)> {
    let native = g.arch().img_resolution;
    let (h, w) = (img.height(), img.width());
    if cfg.resize_octaves && (h, w) != (native, native) {
        let up = bilinear_resize(img.tensor(), native, native)?;
        let (loss, grad) = g.input_gradient(&up, &cfg.taps, cfg.norm)?;
        return Ok((loss, bilinear_resize_grad(&grad, h, w)?));
    }
    let required = cfg.taps.min_input_size(g.arch());
    if h < required || w < required {
        return Err(DreamError::ImageTooSmall {
            height: h,
            width: w,
            required,
        });
    }
    Ok(g.input_gradient(img.tensor(), &cfg.taps, cfg.norm)?)
}

/// Dreaming loss at `img` under `cfg`.
pub fn objective(g: &DiscriminatorGraph, img: &ImageBuffer, cfg: &DreamConfig) -> Result<f64> {
    Ok(loss_and_grad(g, img, cfg)?.0)
}

/// One ascent step: `img + lr * grad / (std(grad) + eps)`, clamped to
/// `[-1, 1]`. Returns the new image and the loss before the step.
pub fn dream_step(
    g: &DiscriminatorGraph,
    img: &ImageBuffer,
    cfg: &DreamConfig,
) -> Result<(ImageBuffer, f64)> {
    let (loss, grad) = loss_and_grad(g, img, cfg)?;
    let n = grad.len() as f64;
    let mean = grad.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = grad
        .data()
        .iter()
        .map(|&v| (f64::from(v) - mean).powi(2))
        .sum::<f64>()
        / n;
    let step = (f64::from(cfg.learning_rate) / (var.sqrt() + GRAD_STD_EPS)) as f32;
    let mut out = img.tensor().clone();
    for (x, &d) in out.data_mut().iter_mut().zip(grad.data()) {
        *x = (*x + step * d).clamp(-1.0, 1.0);
    }
    Ok((ImageBuffer(out), loss))
}

/// Octave working sizes, smallest first. Octaves below the taps' minimum
/// are dropped unless resizing is on; without resizing the kept sizes are
/// snapped to the nearest multiple of the taps' size granule.
pub fn octave_plan(
    g: &DiscriminatorGraph,
    cfg: &DreamConfig,
    height: usize,
    width: usize,
) -> Vec<(usize, usize)> {
    let min = cfg.taps.min_input_size(g.arch());
    let granule = cfg.taps.size_granule(g.arch());
    let snap = |v: usize| ((v + granule / 2) / granule * granule).max(granule);
    let mut plan = Vec::with_capacity(cfg.octaves);
    for k in (0..cfg.octaves).rev() {
        let (h, w) = cfg.octave_size(k, height, width);
        if cfg.resize_octaves {
            plan.push((h, w));
        } else if h < min || w < min {
            warn!(
                "skipping octave {k} ({h}x{w}): taps need at least {min}px without octave resizing"
            );
        } else if cfg.taps.needs_head() {
            plan.push((h, w));
        } else {
            plan.push((snap(h), snap(w)));
        }
    }
    plan
}

/// Multi-octave dreaming from `start`. The output has the start's size.
pub fn dream(
    g: &DiscriminatorGraph,
    start: &ImageBuffer,
    cfg: &DreamConfig,
) -> Result<ImageBuffer> {
    cfg.validate()?;
    cfg.taps.validate_for(g.arch()).map_err(GraphError::from)?;
    let (height, width) = (start.height(), start.width());
    let smallest = cfg.octave_scale.powi(cfg.octaves as i32 - 1);
    if (height.min(width) as f64) / smallest < 1.0 {
        return Err(DreamError::Config(format!(
            "{} octaves at scale {} shrink a {height}x{width} image below one pixel",
            cfg.octaves, cfg.octave_scale
        )));
    }
    if cfg.iterations == 0 {
        return Ok(start.clone());
    }
    let plan = octave_plan(g, cfg, height, width);
    if plan.is_empty() {
        return Err(DreamError::AllOctavesSkipped {
            required: cfg.taps.min_input_size(g.arch()),
        });
    }

    let mut detail: Option<Tensor> = None;
    let mut img = start.clone();
    for (h, w) in plan {
        let base = bilinear_resize(start.tensor(), h, w)?;
        img = match &detail {
            None => ImageBuffer(base.clone()),
            Some(d) => {
                let mut t = bilinear_resize(d, h, w)?;
                t.add_assign(&base)?;
                ImageBuffer::clamped(t)?
            }
        };
        for _ in 0..cfg.iterations {
            img = dream_step(g, &img, cfg)?.0;
        }
        detail = Some(img.tensor().sub(&base)?);
    }
    if (img.height(), img.width()) != (height, width) {
        img = ImageBuffer::clamped(bilinear_resize(img.tensor(), height, width)?)?;
    }
    Ok(img)
}
