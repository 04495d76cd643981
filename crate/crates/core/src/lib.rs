//! Image synthesis from two families of generative models.
//!
//! Pixel-compositing models live in [`composite`]: classical convolution
//! filters, two-layer blending, a pencil-sketch pipeline, elementary cellular
//! automata and formula-driven patterns.
//!
//! Feature-space synthesis is split across [`network`] (a VGG-style
//! convolutional network with activation capture and input gradients),
//! [`weights`] (the `VGGW` weight-file codec) and [`style`] (Gram and content
//! losses plus the descent loop that turns white noise into an image).
//!
//! Everything sits on the small dense [`tensor`] module, which carries the
//! forward and hand-written backward passes for convolution, rectification
//! and 2×2 max pooling.

pub mod composite;
pub mod error;
pub mod image_io;
pub mod network;
pub mod style;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use image_io::{ChannelOrder, PreprocessSpec, RgbImage};
pub use network::{ActivationTrace, LayerKind, LayerSpec, NetworkSpec, WeightStore};
pub use style::{LossConfig, OptimizerParams, SynthesisState};
pub use tensor::{ConvGeometry, Tensor};
