//! The network: configuration, static architecture walk, parameters,
//! forward pass and checkpoints.

pub mod arch;
pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod params;

pub use arch::{count_params, estimate_flops, Architecture, LayerInfo, ParamSpec};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{AhabPlacement, ModelConfig, NormKind};
pub use forward::{forward, ForwardOutput, Mode, Session};
pub use params::ModelParams;
