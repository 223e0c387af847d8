//! Run configuration, output writers, the invariant suite and the CLI.

pub mod check;
pub mod cli;
pub mod config;
pub mod output;

pub use config::{
    parse_config, DropInitialData, ExpressionData, InitialKind, InitialSpec, Preset, RunConfig,
};
pub use output::{write_csv_tables, write_vtk, FieldSnapshot};
