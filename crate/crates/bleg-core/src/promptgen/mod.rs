//! Stage 1: turn graphs into three-part prompts, obtain augmented text from
//! an LLM backend (remote or the offline oracle), score it, and write the
//! curated text-graph dataset.

pub mod backend;
pub mod curate;
pub mod oracle;
pub mod prompt;
pub mod response;
pub mod score;

pub use backend::{complete_all, RemoteBackend, RemoteConfig, TextBackend};
pub use curate::{curate_dataset, read_dprime, write_dprime, CurationOutcome, DPrimeRecord, Quarantined};
pub use oracle::{OfflineOracle, OracleHints};
pub use prompt::{build_prompt, parse_graph_text, serialize_graph, split_assembled, PromptBundle};
pub use response::{parse_response, request_text, ParsedResponse, TextRecord};
pub use score::{score_record, HeuristicJudge, Judge, QualityScore};

/// Default pass threshold on the 1–5 overall quality score.
pub const DEFAULT_QUALITY_THRESHOLD: f64 = 3.0;
/// Default bound on in-flight backend requests.
pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum PromptGenError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("graph/weight consistency: {0}")]
    Consistency(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transport failure after retries: {0}")]
    Transport(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PromptGenError>;
