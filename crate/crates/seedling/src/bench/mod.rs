//! Benchmarking and cost tooling.
//!
//! Two halves: a cost model that turns measured throughput and a resource
//! list into dollars per billion frames, and a live harness that measures
//! the service's throughput, latency quantiles, and per-stage time split
//! under benchmark mode. A microbenchmark isolates the batched-inference
//! advantage itself. Absolute numbers are machine-specific; the point is
//! the arithmetic and the relative comparisons.

mod cost;
mod throughput;

pub use cost::{
    cost_per_billion, hourly_rate, hours_per_billion, parse_accel_spec, AccelKind,
    ResourcePricing,
};
pub use throughput::{
    compare_inference_modes, percentile, run_throughput_bench, InferenceComparison,
    LatencyReport, ThroughputConfig,
};
