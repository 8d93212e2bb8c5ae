//! Data generation, training, sharpness measurement and rank correlation.

pub mod data;
pub mod grid;
pub mod kendall;
pub mod measure;
pub mod report;
pub mod selfcheck;
pub mod train;

pub use data::{gen_dataset, gen_dataset_with, DataSpec, DatasetKind};
pub use grid::{canonicalize, read_results, run_cell, run_grid, Cell, GridSpec, GridSummary};
pub use kendall::{kendall_counts, kendall_tau, kendall_tau_variant, KendallCounts, TauVariant};
pub use measure::{
    measure_sharpness, sam_sharpness, subsample, Measure, MeasureConfig, RenyiMeasure, SamMeasure,
    Scope, SharpnessMeasures,
};
pub use report::{
    correlate, CorrelateOptions, CorrelationRow, CorrelationTable, Hyperparameters,
    SharpnessReport, Target,
};
pub use selfcheck::{selfcheck, Check};
pub use train::{
    train, train_from, write_metrics_csv, EpochMetrics, ModelConfig, RunStatus, TrainOutcome,
    TrainSettings,
};
