//! Command-line front end: subcommands, run configurations and the
//! ablation presets.

pub mod args;
pub mod commands;
pub mod config;

pub use args::Cli;
pub use commands::exit_code;
pub use config::{MaskMode, Pipeline, RunConfig, PRESETS};

pub const WORKERS_ENV: &str = "HDRFUSE_NUM_WORKERS";

/// Sizes the global thread pool from `HDRFUSE_NUM_WORKERS` when set.
pub fn init_workers() -> hdrfuse::Result<()> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| hdrfuse::Error::BadConfig(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| hdrfuse::Error::BadConfig(e.to_string()))
}
