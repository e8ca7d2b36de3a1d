//! Trainable components: GCN encoder, tokenizer, toy decoder-only LM,
//! adapter/readout/classification head, and the checkpoint bundle that ties
//! them together.

pub mod adapter;
pub mod bundle;
pub mod gcn;
pub mod lm;
pub mod tokenizer;

pub use adapter::{Adapter, AdapterConfig, ClassifierHead};
pub use bundle::{extract_text_logit, BundleManifest, ModelBundle, ModelConfig};
pub use gcn::{gcn_layer, normalized_adjacency, GcnConfig, GnnEncoder, Mode};
pub use lm::{LmConfig, LmOutput, SequenceInput, ToyLm};
pub use tokenizer::Tokenizer;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("numerics: {0}")]
    Numerics(#[from] crate::numerics::NumericsError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("sequence of {length} tokens exceeds maximum length {max}")]
    Overlength { length: usize, max: usize },
    #[error("model state: {0}")]
    State(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;
