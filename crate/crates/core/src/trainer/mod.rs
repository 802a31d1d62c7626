//! The dual teacher-student training loop: data combinations, pseudo-label
//! routing, the Prob estimator and run orchestration.

mod batch;
mod combination;
mod config;
mod output;
mod prob;
mod routing;
mod step;

pub use batch::{assemble_batch, AssembledBatch, BatchAugment, EpochSampler, TargetView};
pub use combination::{BatchCounts, DataCombination};
pub use config::{TrainerConfig, CONFIG_FILE};
pub use output::{read_prob_log, write_run, RunWriter, AUDIT_FILE, METRICS_FILE, PROB_FILE};
pub use prob::{prob_value, ProbEstimator, ProbRecord};
pub use routing::{ModelRef, RoutingPolicy, RoutingPreset};
pub use step::{
    run, run_with, select_setting, train_step, AuditEntry, GroupState, IterationReport, RunOutcome,
    StepEvent, Trainer,
};
