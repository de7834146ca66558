//! Monte Carlo experiment driver and its inputs.

mod ingest;
mod intents;
mod plan;

pub use ingest::{ingest_label_map, LabelMapStats};
pub use intents::{assign_intents, IntentPolicy};
pub use plan::{
    emit_csv, run_experiment, write_csv, AggregateResult, DistanceModel, ExperimentPlan,
    PointResult, RunOptions, Summary, SweepPoint, TrialFailure, CSV_HEADER, MAX_FAILURE_FRACTION,
};
