//! Experiment harness: config files, seeded runs, evaluation and comparison.

pub mod compare;
pub mod config;
pub mod run;

pub use compare::{compare, Comparison, ConfigSummary, NOT_REACHED};
pub use config::{PolicyGraph, TrainConfig};
pub use run::{evaluate_checkpoint, run_all, run_seed, EvalPoint, Observer, RunRecord, Silent};
