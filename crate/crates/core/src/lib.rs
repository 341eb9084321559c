//! Rolling-bearing fault diagnosis with a residual-attention single-head
//! vision transformer.
//!
//! The crate is organised bottom-up:
//!
//! - [`sigproc`] turns raw vibration windows into `(2, 64, 32)` spectral images,
//!   with z-score normalization and SNR-calibrated Gaussian noise.
//! - [`diffcore`] is a small tape-based reverse-mode engine with the kernels the
//!   network needs, the AdamW rule, and a finite-difference gradient checker.
//! - [`model`] builds the network (patch stem, three stages of blocks with
//!   depthwise conv, single-head attention, residual FFN and hybrid attention),
//!   parameter/MAC accounting, and the binary checkpoint format.
//! - [`datasets`] handles the neutral `.f32` + `manifest.json` archive,
//!   stratified splits and a synthetic bearing-signal generator.
//! - [`train_eval`] runs deterministic training, evaluation, SNR sweeps,
//!   ablations and feature export.
//! - [`verify`] registers every gradient check behind `rashvit gradcheck`.

pub mod datasets;
pub mod diffcore;
mod error;
pub mod io;
pub mod model;
pub mod rng;
pub mod sigproc;
pub mod train_eval;
pub mod verify;

pub use diffcore::{Real, Tape, Tensor, Var};
pub use error::{Error, ErrorKind, Result};
pub use model::{ModelConfig, ModelParams};
pub use sigproc::{NoiseSpec, SignalSegment, SpectralImage};
