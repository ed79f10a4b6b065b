//! Queueing models for reads in MDS-coded storage.
//!
//! An `(n, k)` MDS code spreads a file over `n` servers so that any `k`
//! of them can rebuild it. A read is a batch of `k` jobs that must be
//! served by `k` distinct servers. The exact system (the *MDS queue*) has
//! no tractable Markov chain, so this crate works with two families of
//! policies that bracket it:
//!
//! * [`Policy::Reservation`] restricts which batches may start jobs and is
//!   a lower bound on performance.
//! * [`Policy::MkMn`] relaxes the distinct-server rule once enough batches
//!   are waiting and is an upper bound.
//!
//! Both are encoded as quasi-birth-death chains ([`chain`]) and solved with
//! matrix-analytic methods ([`qbd`]). Analytic metrics live in [`metrics`].
//! The [`simulator`] runs the exact policies, including the MDS queue
//! itself, with seeded per-server random streams.
//!
//! The crate is `no_std` and only needs `alloc`.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod chain;
pub mod config;
mod dynamics;
pub mod error;
pub mod linalg;
mod math;
pub mod metrics;
pub mod policies;
pub mod qbd;
pub mod simulator;
pub mod statespace;

pub use chain::{build_qbd, recurrence_stationary, QbdBlocks};
pub use config::{Policy, SystemConfig};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use math::harmonic;
pub use metrics::{
    latency_profile, mean_latency, occupancy_ccdf, throughput_loss_curve, waiting_probability,
    LatencyProfile, MeanLatency,
};
pub use qbd::{drift, max_throughput, solve_r, stationary, DriftCertificate, SolverOptions};
pub use simulator::{replicate, run, MetricsReport, RunPlan};
pub use statespace::{decode_state, encode_state, enumerate_states, ChainState, FullConfiguration};
