//! Experiment orchestration: configuration, checkpoints, the staged
//! pipeline, artifact reports and plots.

pub mod checkpoint;
pub mod config;
pub mod pipeline;
pub mod plot;
pub mod report;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, Role};
pub use config::ExperimentConfig;
pub use pipeline::{load_summary, run_pipeline, Pipeline, Summary};
pub use plot::emit_plots;
pub use report::Manifest;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "PRUNESCOPE_THREADS";

/// Sizes the global thread pool from `PRUNESCOPE_THREADS` when set.
/// Returns the thread count in effect.
pub fn configure_threads() -> crate::Result<usize> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| crate::Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        // A pool that is already built (e.g. by an earlier call) is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}
