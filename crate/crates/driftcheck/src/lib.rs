//! Files, configuration, orchestration and reporting around
//! [`driftcheck_core`].
//!
//! The `driftcheck` binary wraps [`runner::run_suite`] and
//! [`reportlog::summarize`]; everything it does is reachable from here.

pub mod config;
pub mod error;
pub mod model_json;
pub mod reportlog;
pub mod runner;
pub mod tensorfile;

pub use error::{DriftError, Result};
