//! Dataset handling and the evaluation protocol: CSV ingestion, a seeded
//! synthetic generator, log-target preprocessing, train/test/eval splits,
//! log-scale metrics and gridded spatial summaries.

mod data;
mod grid;
mod metrics;
mod preprocess;
mod split;

pub use data::{load_csv, save_csv, synth_dataset, PointSet, Scale, SYNTH_FEATURES, SYNTH_MIN_POINTS};
pub use grid::{spatial_variance_grid, SpatialGrid};
pub use metrics::{compute_metrics, Metrics};
pub use preprocess::{preprocess, Prepared, TransformRecord};
pub use split::{split, Split, SplitSpec};
