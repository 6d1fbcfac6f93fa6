//! Counterfactual query editing for search result explanation.
//!
//! Given a query `q` and a document pair `(d, d')` where `d` outranks `d'`,
//! the editor rewrites `q` into `q'` so that `d'` outranks `d`. The crate
//! bundles everything needed to do this end to end with statistical models:
//!
//! - [`text`]: tokenization and vocabulary.
//! - [`corpus`]: document ingestion, inverted index and BM25 ranking.
//! - [`embed`]: PPMI/SVD token vectors and cosine similarity.
//! - [`masker`]: per-token importance (MaxSim or occlusion).
//! - [`lm`]: add-k n-gram LM, perplexity and document-conditioned slot prediction.
//! - [`editor`]: iterative masking with beam-search infilling.
//! - [`eval`]: triplet construction, metrics, baselines and reports.
//! - [`remote`]: JSON-over-HTTP clients for external model backends.
//!
//! Every model role sits behind a trait in [`backend`], so remote backends
//! can stand in for the built-in ones.

pub mod backend;
pub mod corpus;
pub mod editor;
pub mod embed;
mod error;
pub mod eval;
pub mod lm;
pub mod masker;
pub mod parallel;
pub mod remote;
pub mod store;
pub mod synth;
pub mod text;

pub use backend::{Embedder, PerplexityScorer, Predictor, SearchModel};
pub use corpus::{Bm25Params, Corpus, Document, Ranking, SearchIndex};
pub use editor::{edit, Beam, EditCandidate, EditConfig, EditResult, Triplet};
pub use embed::EmbeddingTable;
pub use error::{Error, Result};
pub use eval::{EvalConfig, EvalContext, EvalReport, Method};
pub use lm::{DocConditionedPredictor, NgramLm, PredictionDistribution};
pub use masker::{ImportanceScores, MaskerKind};
pub use text::{TokenId, Vocabulary};
