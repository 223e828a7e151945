//! Deterministic federated-learning simulator.
//!
//! FedAvg over a small dense network, with data-ratio "recover" schedules,
//! participation-pool schedules and per-round instrumentation by the trace
//! of the federated Fisher information. Every run is a pure function of its
//! configuration and master seed.
//!
//! Module map:
//! - [`nn`]: MLP forward/backward, cross-entropy, SGD step.
//! - [`data`]: synthetic data, CSV ingestion, IID and label-shard partitions, ratio views.
//! - [`federation`]: client selection, local training, weighted aggregation, rounds.
//! - [`fisher`]: per-client Fisher trace, FedFIM trace, cumulative trace.
//! - [`schedules`]: data-ratio and participation schedules.
//! - [`harness`]: experiment configuration, runs, sweeps and metric files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod federation;
pub mod fisher;
mod fsutil;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod schedules;

pub use error::{Error, Result};

/// Library version string recorded in emitted run files.
pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// `⌈ratio · n⌉`, clamped to `[1, n]` for `n > 0`.
///
/// A small tolerance absorbs representation error so that e.g. `0.7 · 10`
/// yields 7 rather than 8.
pub(crate) fn ceil_fraction(ratio: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let raw = (ratio * n as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(n)
}

#[cfg(test)]
mod tests {
    use super::ceil_fraction;

    #[test]
    fn ceil_fraction_handles_representation_error() {
        assert_eq!(ceil_fraction(0.7, 10), 7);
        assert_eq!(ceil_fraction(0.3, 7), 3);
        assert_eq!(ceil_fraction(0.3, 100), 30);
        assert_eq!(ceil_fraction(0.6, 64), 39);
        assert_eq!(ceil_fraction(1.0, 5), 5);
        assert_eq!(ceil_fraction(1e-9, 5), 1);
    }
}
