//! Experiment orchestration: configuration, method rows, evaluation,
//! reports, mechanistic probes and run directories.

pub mod analysis;
pub mod config;
pub mod eval;
pub mod methods;
pub mod report;
pub mod run;

pub use analysis::{counterfactual_replay, drift_report, mean_prompt_sensitivity, prompt_sensitivity, DriftReport, ReplayRecord};
pub use config::{DataConfig, ExperimentConfig, PosttrainConfig, Stage};
pub use eval::{eval_suite, run_trial, trial_setup, Condition, Evaluated, TrialRecord};
pub use methods::Method;
pub use report::{CellReport, EvalReport};
pub use run::{Experiment, Manifest, RunDir, TraceFile};
