//! Dynamic per-frame network quantization for efficient video recognition.
//!
//! A lightweight recurrent policy network looks at each frame of a video and
//! picks a numerical precision for it — full 32-bit, a low bit-width, or
//! skipping the frame outright. A single any-precision recognition network
//! executes the chosen precision by truncating stored weight codes, so
//! switching precision costs nothing. Policy and recognizer are trained in
//! two stages with Gumbel-Softmax sampling and a combined accuracy/efficiency
//! objective.
//!
//! The crate is organized around the pipeline:
//!
//! - [`tensor`] / [`graph`]: dense tensors and reverse-mode autodiff.
//! - [`quant`]: weight quantization with bit-truncation switching (modified
//!   DoReFa) and learnable-clip activation quantization (PACT).
//! - [`cost`]: analytic FLOPs and memory accounting.
//! - [`policy`]: the recurrent policy network and Gumbel-Softmax sampling.
//! - [`recognizer`]: the any-precision per-frame classifier.
//! - [`losses`]: the training objectives.
//! - [`data`]: procedural synthetic video datasets and their on-disk format.
//! - [`train`]: two-stage training and checkpointing.
//! - [`eval`]: metrics, policy analytics and baselines.
//! - [`cli`]: the `videoiq` command-line entry point.
//!
//! See the crate's `examples/` directory for a runnable tour: start with
//! `autodiff_basics`, then `quantization`, `cost_report`, `gumbel_sampling`,
//! `synth_dataset`, and `train_toy` for the full pipeline.

pub mod cli;
pub mod cost;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod losses;
pub mod policy;
pub mod quant;
pub mod recognizer;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
