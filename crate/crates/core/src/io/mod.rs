//! Dataset ingestion and serialization, plus report writing for the CLI.

mod dataset;
pub mod report;

pub use dataset::{ingest, read_dataset, write_dataset, DatasetSchema};
pub use report::{
    enumeration_csv, estimates_csv, metrics_csv, replications_csv, write_json, Manifest,
};
