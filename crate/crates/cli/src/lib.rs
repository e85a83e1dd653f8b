//! Configuration, orchestration and output for the `kasnerlab` command line tool.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

pub use commands::{initial_state, run, CliError, Outcome};
pub use config::{parse_config, parse_table, Command, ConfigErrors, RunConfig, Violation};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "KASNERLAB_OUT_DIR";

/// Used when neither the command line, the environment nor the config names a directory.
pub const DEFAULT_OUT_DIR: &str = "kasnerlab-out";

/// Command line (or environment) first, then the config file, then the default.
pub fn resolve_out_dir(override_dir: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    override_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}
