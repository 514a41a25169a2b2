//! Experiment configuration, sweep execution, and report rendering for the
//! `bench` CLI.
//!
//! A run loads or generates a dataset, does one train/test split, picks
//! hyperparameters by k-fold cross-validation on the training part (skipped
//! when every grid has a single point), then fits every sweep entry times the
//! replicate count, each replicate with its own derived seed. Metrics go to a
//! timing-free CSV so that two runs with the same config produce identical
//! metric files; wall-clock numbers live in the JSON record and a separate
//! timings CSV.

mod config;
mod report;
mod run;

pub use config::{
    CvConfig, DatasetSpec, ExperimentConfig, RobustLoss, SweepEntry, SweepFamily, TaskSpec,
};
pub use report::{render_report, ReportFormat};
pub use run::{
    median_heuristic, replicate_seed, run_experiment, sketch_diagnostics, write_outputs,
    ChosenHyperparams, EntryAggregate, EntryDiagnostics, ReplicateRow, RunRecord, SketchDiagReport,
};
