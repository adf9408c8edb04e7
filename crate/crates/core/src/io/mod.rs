//! Data ingestion, result serialization and path-diagram export.

mod artifact;
mod data;
mod diagram;

pub use artifact::{
    config_hash, load_artifact, save_artifact, write_atomic, Provenance, RunArtifact, ARTIFACT_VERSION,
};
pub use data::{
    dataset_to_csv, load_column_spec, load_dataset, parse_column_spec, preprocess_column, read_dataset, ColumnSpec, LabeledDataset,
    Role, Transform,
};
pub use diagram::{diagram, export_diagram, DiagramLabels, EdgeThreshold, DEFAULT_RELATIVE_THRESHOLD};
