//! Latency-optimal power and rate planning for intent-aware generative
//! semantic multicasting.
//!
//! A transmitter multicasts a semantic map to every user and unicasts the
//! classes each user wants reconstructed faithfully; users synthesize the
//! rest on device. [`optimizer::sqp_solve`] picks per-stream powers and
//! compression rates that minimize the total latency under quality
//! requirements.

// NaN-rejecting comparisons and index loops are deliberate in the numeric code
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod benchmarks;
pub mod channel;
pub mod config;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod optimizer;
pub mod rdp;
pub mod scenario;
pub mod verify;

pub use benchmarks::{benchmark_metrics, fgm_latency, ngm_latency, Scheme};
pub use channel::{draw_channel, realize, ChannelRealization, ChannelState};
pub use error::{Error, Result};
pub use metrics::{metrics_from_solution, RunMetrics};
pub use optimizer::{reduced_solve, sqp_solve, Allocation, SolveOptions, SolveReport};
pub use rdp::{fit_curve, CurveFit, QualityCurve, RdpCurve};
pub use scenario::{
    effective_requirements, intent_graph_stats, ComputeSpec, IntentMatrix, RadioParams,
    Requirements, Scenario, SignalGeometry,
};
