//! Fixtures shared by the benchmarks.

use latprof::export::render_perf_script;
use latprof::sim::{simulate, SimConfig};

/// A perf-script trace from a jittered producer-consumer run with
/// `items` items per producer.
pub fn simulated_trace(items: u32) -> String {
    let cfg = SimConfig {
        producers: 4,
        consumers: 4,
        capacity: 8,
        items_per_producer: items,
        jitter: 0.2,
        seed: 42,
        ..SimConfig::default()
    };
    let out = simulate(&cfg).expect("valid config");
    render_perf_script(&out.events)
}
