//! Command implementations behind the CLI, plus run configuration and the
//! versioned oracle instances.
//!
//! Exit codes: 0 success, 1 property failure, 2 configuration or invalid
//! input, 3 numeric failure, 4 I/O failure.

pub mod config;
pub mod instance;
pub mod reports;
pub mod train;
pub mod verify;

use crate::error::Error;

pub use config::RunConfig;
pub use reports::{cmd_c_sweep, cmd_memory_report, cmd_variance_report, MemoryReport, SweepReport, VarianceReport};
pub use train::{cmd_train, TrainSummary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROPERTY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Io(_) => EXIT_IO,
        Error::Dimension(_) | Error::InvalidArgument(_) | Error::Capacity(_) | Error::Config(_) | Error::Parse(_) => {
            EXIT_CONFIG
        }
    }
}
