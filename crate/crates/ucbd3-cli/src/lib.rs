//! Library surface of the experiment runner, shared by the binary and the
//! acceptance suite.

pub mod config;
pub mod experiment;
pub mod output;

pub use config::{CliError, ExperimentConfig};
pub use experiment::{run_experiment, ExperimentOutput};
pub use output::{write_experiment, OutputFormat};
