//! Experiment orchestration shared by the command-line tool: configuration,
//! preprocessing artifacts, ground truth, BO runs, benchmarks and loss maps.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod pipeline;
pub mod stats;
pub mod svg;

pub use artifacts::{preprocess, Layout, Prepared, PreprocessReport};
pub use commands::{
    benchmark, certify, gen_mesh, ground_truth, loss_map, run, BenchmarkReport, BenchmarkRow, Certification, LossMap,
    LossMapReport, Mode, ModeAggregate, RunSummary, Session, TruthRecord,
};
pub use config::ExperimentConfig;
pub use pipeline::{ForwardModel, LossProblem, Speeds};
