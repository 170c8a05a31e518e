//! Experiment runner for quantum-graph scattering simulations.
//!
//! A JSON [`ExperimentConfig`] fixes the graph, the vertex family, the
//! sampling plan and the comparisons to make. [`run_experiment`] writes the
//! artifacts and a manifest with per-file checksums; reruns of the same
//! config produce identical bytes for any worker count.

pub mod artifacts;
pub mod config;
pub mod experiment;
pub mod report;
pub mod verify;

pub use config::{Check, ConfigError, CorrelatorEntry, ExperimentConfig, Overrides, PairSelection, PairSet, Pool};
pub use experiment::{run_experiment, run_stages, Manifest, RunOutcome, Stage};
pub use report::{Comparison, Metric, Report};
pub use verify::{run_suite, Suite, SuiteReport, VerifyOptions};

/// Worker threads: the flag wins over `QGRAPH_WORKERS`, which clap already
/// folds into the flag. Zero means one per core.
pub fn init_workers(workers: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}
