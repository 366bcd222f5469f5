//! Configuration loading, experiment orchestration, artifact output and
//! plot-data views for the `slfv` command-line tool.

pub mod config;
mod jobs;
pub mod plotdata;
pub mod run;

pub use config::{load_config, parse_config, ConfigError, ConfigErrors, ExperimentConfig, Kind};
pub use jobs::{ForwardRow, GenealogyRow, LimitRow};
pub use plotdata::{emit_plotdata, plot_rows, PlotError, View};
pub use run::{prepare, read_manifest, run, Job, Manifest, RunError, RunOptions, RunStatus};
