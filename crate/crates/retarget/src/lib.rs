//! File formats, pipeline stages and end-to-end runs for keypoint-driven motion
//! retargeting. The numerical kernels live in `retarget-core`.

pub mod config;
pub mod error;
pub mod fixture;
pub mod run;
pub mod stages;
pub mod tensorio;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use retarget_core as core;

/// Runs `f` on a rayon pool of `threads` workers (0 picks the default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(f)
}
