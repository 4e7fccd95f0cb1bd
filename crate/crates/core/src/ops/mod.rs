//! Forward and input-gradient (vector-Jacobian) rules for every layer
//! primitive the discriminator uses. All functions are pure.

mod activation;
mod conv;
mod linear;
mod mbstd;
mod resample;

pub use activation::{lrelu, lrelu_grad, Activation, LRELU_GAIN, LRELU_SLOPE};
pub use conv::{conv2d_forward, conv2d_input_grad, ConvSpec};
pub use linear::{linear_forward, linear_input_grad, linear_preact};
pub use mbstd::{minibatch_stddev, minibatch_stddev_grad, MBSTD_EPS};
pub use resample::{
    bilinear_resize, bilinear_resize_grad, fir_downsample2x, fir_downsample2x_grad, FIR_TAPS,
};
