//! File formats, datasets and run directories.

pub mod array;
pub mod bars;
pub mod dataset;
pub mod manifest;
pub mod run_dir;
pub mod spec;

pub use array::{load_array, save_array};
pub use bars::{bars_dictionary, generate_bars, BarsConfig, BarsData, BarsMode};
pub use dataset::{load_dataset, load_matrix, parse_csv};
pub use manifest::RunManifest;
pub use run_dir::{RunDir, RunDirLogger};
pub use spec::{ModelKind, ModelSpec, ModelVisitor};
