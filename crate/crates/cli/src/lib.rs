//! Command-line front end for the skewsim synchronization simulator:
//! configuration files, record CSVs, and grouped statistics.

pub mod config;
pub mod error;
pub mod records;

pub use config::{parse_config, parse_config_str, serialize_config, FileConfig};
pub use error::{CliError, Result};
pub use records::{
    format_stats, period_from_file_name, read_records, records_file_name, render_records,
    stats_command, write_records, StatsRow,
};
