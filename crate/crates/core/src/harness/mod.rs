//! Experiment configuration, subcommand runners, reports and the acceptance suite.
//!
//! Every run writes its CSV artifacts plus `<experiment>.json` (a [`StatReport`]) into the output
//! directory. Runs that need another run's artifacts read them from the same directory.

mod acceptance;
mod config;
mod report;
mod runners;

pub use config::{ExperimentConfig, InitMode, Profile, Subcommand};
pub use report::{Check, StatReport, Status, Timing};
pub use runners::{read_bank, run};
