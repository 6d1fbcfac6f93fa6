//! Run configuration: a TOML file, overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use qflip_core::remote::BackendEndpoint;
use qflip_core::{EditConfig, EvalConfig, MaskerKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub index: IndexSection,
    pub search: SearchSection,
    pub embed: EmbedSection,
    pub lm: LmSection,
    pub editor: EditorSection,
    pub eval: EvalSection,
    pub backends: Backends,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub index: PathBuf,
    pub embeddings: PathBuf,
    pub lm: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: "corpus.jsonl".into(),
            index: "artifacts/index.json".into(),
            embeddings: "artifacts/embeddings.json".into(),
            lm: "artifacts/lm.json".into(),
            output: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSection {
    pub min_count: usize,
}

impl Default for IndexSection {
    fn default() -> Self {
        IndexSection { min_count: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub k1: f64,
    pub b: f64,
    pub top_k: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection {
            k1: 1.2,
            b: 0.75,
            top_k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSection {
    pub dim: usize,
    pub window: usize,
}

impl Default for EmbedSection {
    fn default() -> Self {
        EmbedSection { dim: 64, window: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSection {
    pub order: usize,
    pub smoothing: f64,
    pub lambda: f64,
}

impl Default for LmSection {
    fn default() -> Self {
        LmSection {
            order: 3,
            smoothing: 0.1,
            lambda: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditorSection {
    pub masker: MaskerKind,
    pub beam: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_masks: Option<usize>,
}

impl Default for EditorSection {
    fn default() -> Self {
        EditorSection {
            masker: MaskerKind::Maxsim,
            beam: 10,
            max_masks: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Unset means all available threads.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub record_timing: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            workers: None,
            record_timing: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search: Option<BackendEndpoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed: Option<BackendEndpoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predict: Option<BackendEndpoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perplexity: Option<BackendEndpoint>,
}

fn field_error(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::ConfigParse(e.message().to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::ConfigParse(e.to_string()))
    }

    /// Reads `path`, or returns defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Io(p.to_path_buf(), e))?;
                RunConfig::from_toml(&text)
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.search.top_k < 2 {
            return Err(field_error("search.top_k", "must be >= 2"));
        }
        if !(self.search.k1.is_finite() && self.search.k1 > 0.0) {
            return Err(field_error("search.k1", "must be a finite value > 0"));
        }
        if !(0.0..=1.0).contains(&self.search.b) {
            return Err(field_error("search.b", "must be within [0, 1]"));
        }
        if self.editor.beam < 1 {
            return Err(field_error("editor.beam", "must be >= 1"));
        }
        if self.editor.max_masks == Some(0) {
            return Err(field_error("editor.max_masks", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.lm.lambda) {
            return Err(field_error("lm.lambda", "must be within [0, 1]"));
        }
        if self.lm.order < 1 {
            return Err(field_error("lm.order", "must be >= 1"));
        }
        if !(self.lm.smoothing > 0.0 && self.lm.smoothing.is_finite()) {
            return Err(field_error("lm.smoothing", "must be > 0"));
        }
        if self.embed.dim < 2 {
            return Err(field_error("embed.dim", "must be >= 2"));
        }
        if self.embed.window < 1 {
            return Err(field_error("embed.window", "must be >= 1"));
        }
        if self.index.min_count < 1 {
            return Err(field_error("index.min_count", "must be >= 1"));
        }
        if self.eval.workers == Some(0) {
            return Err(field_error("eval.workers", "must be >= 1"));
        }
        let roles = [
            ("backends.search", &self.backends.search),
            ("backends.embed", &self.backends.embed),
            ("backends.predict", &self.backends.predict),
            ("backends.perplexity", &self.backends.perplexity),
        ];
        for (name, ep) in roles {
            if let Some(ep) = ep {
                ep.validate()
                    .map_err(|e| field_error(name, e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            edit: EditConfig {
                beam_width: self.editor.beam,
                max_masks: self.editor.max_masks,
            },
            masker: self.editor.masker,
            workers: self.eval.workers,
            record_timing: self.eval.record_timing,
        }
    }

    /// SHA-256 over the artifact-relevant settings and the corpus bytes.
    pub fn artifact_hash(&self, corpus: &[u8]) -> String {
        let settings = serde_json::json!({
            "seed": self.seed,
            "min_count": self.index.min_count,
            "dim": self.embed.dim,
            "window": self.embed.window,
            "order": self.lm.order,
            "smoothing": self.lm.smoothing,
        });
        let mut h = Sha256::new();
        h.update(settings.to_string().as_bytes());
        h.update([0u8]);
        h.update(corpus);
        hex::encode(h.finalize())
    }
}
