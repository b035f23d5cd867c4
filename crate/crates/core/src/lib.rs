//! Causal target-speech extraction with static and dynamic speaker
//! embeddings.
//!
//! The network encodes a mixture with a strided convolution, masks it with a
//! temporal convolutional separator adapted to the target speaker, and
//! decodes the masked frames by overlap-add. In dynamic mode the speaker
//! embedding is refreshed every frame from the engine's own delayed output.
//!
//! * [`numerics`]: tensor kernels and reverse-mode differentiation.
//! * [`model`]: offline forward pass; [`streaming`]: frame-by-frame inference.
//! * [`training`]: losses, Adam, and the baseline, AR and PARIS schedules.
//! * [`metrics`]: SDR, SI-SDR and STOI.
//! * [`audio`], [`codec`], [`manifest`], [`mixing`]: file formats and data.

pub mod audio;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod error;
pub mod exec;
pub mod manifest;
pub mod metrics;
pub mod mixing;
pub mod model;
pub mod numerics;
pub mod streaming;
pub mod tensor;
pub mod training;

pub use checkpoint::{Checkpoint, Scope};
pub use config::ModelConfig;
pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{forward, EmbeddingSequence, Mode};
pub use streaming::{StreamMode, StreamState};
pub use tensor::Tensor;
