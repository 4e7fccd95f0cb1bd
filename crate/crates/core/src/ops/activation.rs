use serde::{Deserialize, Serialize};

use crate::tensor::{Result, Tensor, TensorError};

/// Negative-side slope of the discriminator's leaky ReLU.
pub const LRELU_SLOPE: f32 = 0.2;
/// Gain applied after every leaky ReLU in the discriminator.
pub const LRELU_GAIN: f32 = std::f32::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Lrelu,
}

impl Activation {
    /// Default post-activation gain for this activation.
    pub fn default_gain(self) -> f32 {
        match self {
            Activation::Linear => 1.0,
            Activation::Lrelu => LRELU_GAIN,
        }
    }

    pub fn forward(self, x: &Tensor, gain: f32) -> Tensor {
        match self {
            Activation::Linear if gain == 1.0 => x.clone(),
            Activation::Linear => x.scale(gain),
            Activation::Lrelu => lrelu(x, LRELU_SLOPE, gain),
        }
    }

    /// `dy` back through the activation; `pre` is the saved pre-activation.
    pub fn backward(self, dy: &Tensor, pre: &Tensor, gain: f32) -> Result<Tensor> {
        match self {
            Activation::Linear if gain == 1.0 => Ok(dy.clone()),
            Activation::Linear => Ok(dy.scale(gain)),
            Activation::Lrelu => lrelu_grad(dy, pre, LRELU_SLOPE, gain),
        }
    }
}

/// `gain * (x if x >= 0 else slope * x)`.
pub fn lrelu(x: &Tensor, slope: f32, gain: f32) -> Tensor {
    debug_assert!(slope > 0.0 && slope < 1.0);
    x.map(|v| if v >= 0.0 { v * gain } else { v * slope * gain })
}

pub fn lrelu_grad(dy: &Tensor, x_saved: &Tensor, slope: f32, gain: f32) -> Result<Tensor> {
    if dy.shape() != x_saved.shape() {
        return Err(TensorError::Argument {
            op: "lrelu_grad",
            msg: format!("dy {:?} vs saved input {:?}", dy.shape(), x_saved.shape()),
        });
    }
    let neg = slope * gain;
    let data = dy
        .data()
        .iter()
        .zip(x_saved.data())
        .map(|(&g, &x)| if x >= 0.0 { g * gain } else { g * neg })
        .collect();
    Tensor::from_vec(dy.shape().to_vec(), data)
}
