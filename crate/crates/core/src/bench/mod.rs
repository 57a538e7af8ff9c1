//! Latency, throughput and memory measurement plus pre/post comparison
//! reports. All timing goes through [`Clock`] so tests can inject time.

mod clock;
mod memory;
mod report;
mod runner;
mod stats;

pub use clock::{Clock, ManualClock, MonotonicClock};
pub use memory::{layer_weight_bytes, measure_memory, peak_rss_bytes, MemoryFootprint};
pub use report::{compare_report, BenchReport, Comparison, Deltas, ModelInfo, SCHEMA_VERSION};
pub use runner::{bench_prompts, measure_throughput, per_layer_mse, run_bench, BenchSettings, Throughput};
pub use stats::{measure_latency, LatencyStats, MIN_RUNS};
