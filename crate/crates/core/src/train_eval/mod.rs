//! Training, evaluation, SNR sweeps, ablations and feature export.
//!
//! Every random stream (initialization, batch order, dropout, noise) is
//! derived from the run seed, so a `(dataset, config, seed)` triple fixes
//! every emitted number.

mod ablate;
mod config;
mod data;
mod eval;
mod export;
mod metrics;
mod sweep;
mod train;

pub use ablate::{ablate, AblationRow, AblationTable, FfnKind, Protocol, Variant};
pub use config::{TrainConfig, TrainNoise};
pub use data::{run_eval, EvalOutput, Prepared};
pub use eval::{evaluate, split_indices};
pub use export::{export_features, FeatureTable};
pub use metrics::{evaluate_predictions, metrics_from_logits, ClassMetrics, Metrics};
pub use sweep::{
    format_snr, parse_snr_list, snr_grid, snr_serde, snr_sweep, SweepCell, SweepPoint, SweepTable, CLEAN,
};
pub use train::{
    outcome_checkpoint, train, train_to_dir, write_run, DatasetSummary, EpochLog, RunRecord, TrainOutcome,
    CHECKPOINT_FILE, RUN_RECORD_FILE, TIMING_FILE,
};
