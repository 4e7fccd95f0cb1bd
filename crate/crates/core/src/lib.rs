//! Discriminator dreaming: gradient ascent on an image to amplify the
//! activations of chosen layers of a residual StyleGAN2-style
//! discriminator.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`ops`]: NCHW `f32` tensors and the forward / input
//!   gradient rule of every layer primitive.
//! * [`arch`] and [`discriminator`]: architecture description, layer names,
//!   taps, and the graph with its reverse pass.
//! * [`weights`]: the DDRW weights container and seeded random weights.
//! * [`dream`]: ascent steps and the octave pyramid.
//! * [`transform`] and [`video`]: per-frame zoom / rotation / translation and
//!   the frame loop.
//! * [`image_io`] and [`manifest`]: PNG conversion and run manifests.

pub mod arch;
pub mod discriminator;
pub mod dream;
pub mod image_io;
pub mod manifest;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod transform;
pub mod video;
pub mod weights;

pub use arch::{truncated_forward_min_size, ArchConfig, LayerName, Tap, TapSet};
pub use discriminator::{build_discriminator, DiscriminatorGraph};
pub use dream::{dream, dream_step, random_start, DreamConfig, ImageBuffer, NormMode};
pub use tensor::Tensor;
pub use transform::{rotate, translate, zoom, FrameTransform};
pub use video::{render_video, VideoConfig, VideoSettings};
pub use weights::{load_weights, random_weights, write_weights};
