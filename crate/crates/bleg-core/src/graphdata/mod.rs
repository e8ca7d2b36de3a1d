//! Functional-connectivity graph construction, synthetic dataset
//! generation, and the data splits used by every evaluation protocol.

pub mod correlation;
pub mod graph;
pub mod io;
pub mod regions;
pub mod split;
pub mod synth;

pub use correlation::{build_graph, pearson_from_timeseries, threshold_adjacency, CorrMatrix};
pub use graph::{BrainGraph, GraphMeta, TimeSeriesRecord};
pub use io::{DatasetManifest, ManifestEntry};
pub use regions::aal90_regions;
pub use split::{make_split, KshotTestSize, SplitKind, SplitPlan, SubsetTag};
pub use synth::{generate_synthetic_dataset, planted_score, SynthConfig, SynthDataset};

/// Default fraction of strongest-|r| pairs kept as edges.
pub const DEFAULT_KEEP_FRACTION: f64 = 0.2;

#[derive(Debug, thiserror::Error)]
pub enum GraphDataError {
    #[error("degenerate time series: region '{region}' is constant")]
    ConstantSeries { region: String },
    #[error("parameter error: {0}")]
    Param(String),
    #[error("graph consistency: {0}")]
    Consistency(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error in {path}: {details}")]
    Parse { path: String, details: String },
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GraphDataError>;
