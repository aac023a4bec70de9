//! File formats, experiment configuration and pipeline stages for the
//! `dppseq` command line. The numerical work lives in `dppseq_core`.

pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;

pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, CliResult};
