//! Metropolis Monte Carlo and replica exchange over Lennard-Jones particle
//! domains, expressed as tasks on the speculative runtime.
//!
//! Random numbers are keyed by (seed, replica, iteration, domain, purpose),
//! so the accepted moves do not depend on the order tasks execute in.

pub mod bench;
pub mod mc;
pub mod physics;
pub mod rng;

pub use bench::{run_benchmark, BenchConfig, BenchRecord, Workload};
pub use mc::{mc_core, remc, McConfig, McError, McSummary, Mode, RemcConfig, RemcSummary};
pub use rng::{Purpose, RngKey};
