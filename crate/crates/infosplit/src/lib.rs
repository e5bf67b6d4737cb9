//! File formats and commands around `infosplit-core`: CSV datasets, TOML run
//! configuration, JSON reports, and the `fit`, `verify` and `simulate`
//! commands behind the `infosplit` binary.

pub mod config;
pub mod data;
pub mod error;
pub mod report;
pub mod run;

pub use config::{ConfigFile, ModelSpec, SimulateSpec, SolverSpec};
pub use data::{parse_dataset, read_dataset, write_dataset, GroupFactor, Table};
pub use error::{CliError, ExitCode, Result};
pub use run::{run_fit, run_simulate, run_verify, FitArgs, Outcome, SimulateArgs, VerifyArgs};
