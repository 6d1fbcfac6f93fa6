//! Model roles used by the editor and the evaluation harness.
//!
//! Built-in implementations live next to their models (BM25 in
//! [`crate::corpus`], embeddings in [`crate::embed`], the n-gram LM in
//! [`crate::lm`]); [`crate::remote`] implements every role over HTTP.

use crate::corpus::Document;
use crate::lm::PredictionDistribution;
use crate::text::TokenId;
use crate::Result;

/// The search model `S`: scores a query against a document.
pub trait SearchModel: Send + Sync {
    fn rel(&self, query: &[TokenId], doc: &Document) -> Result<f64>;
}

/// Token vectors, one unit-norm vector per input token.
pub trait Embedder: Send + Sync {
    fn embed(&self, tokens: &[TokenId]) -> Result<Vec<Vec<f64>>>;
}

/// Masked-slot word prediction conditioned on the counterfactual document.
pub trait Predictor: Send + Sync {
    fn predict(
        &self,
        masked_query: &[TokenId],
        counter_doc: &Document,
        position: usize,
        top: usize,
    ) -> Result<PredictionDistribution>;
}

/// Sequence perplexity; lower is more fluent.
pub trait PerplexityScorer: Send + Sync {
    fn perplexity(&self, seq: &[TokenId]) -> Result<f64>;
}
