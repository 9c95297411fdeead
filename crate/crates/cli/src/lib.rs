//! File formats, run reports, the classification battery and the
//! subcommands of the `syncfin` binary. All simulation logic lives in
//! `syncfin-core`.

pub mod classify;
pub mod commands;
pub mod io;
pub mod report;

pub use io::CliError;
