//! Self-describing artifact files.
//!
//! Every artifact is a JSON envelope `{format, version, config_hash, payload}`.
//! Loading checks the format tag and, when an expected hash is given, that
//! the artifact was built from the same configuration.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{Bm25Params, SearchIndex, SearchIndexRepr};
use crate::embed::EmbeddingTable;
use crate::lm::NgramLm;
use crate::{Error, Result};

pub const ARTIFACT_VERSION: u32 = 1;
const BUILD_HINT: &str = "qflip index";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Index,
    Embeddings,
    LanguageModel,
}

impl ArtifactKind {
    pub fn format(self) -> &'static str {
        match self {
            ArtifactKind::Index => "qflip.index",
            ArtifactKind::Embeddings => "qflip.embeddings",
            ArtifactKind::LanguageModel => "qflip.lm",
        }
    }

    pub fn default_file_name(self) -> &'static str {
        match self {
            ArtifactKind::Index => "index.json",
            ArtifactKind::Embeddings => "embeddings.json",
            ArtifactKind::LanguageModel => "lm.json",
        }
    }
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    format: &'a str,
    version: u32,
    config_hash: &'a str,
    payload: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    format: String,
    version: u32,
    config_hash: String,
    payload: T,
}

pub fn save<T: Serialize>(
    path: &Path,
    kind: ArtifactKind,
    config_hash: &str,
    payload: &T,
) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(
        &mut w,
        &EnvelopeOut {
            format: kind.format(),
            version: ARTIFACT_VERSION,
            config_hash,
            payload,
        },
    )?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Reads an artifact; returns the payload and the hash it was built with.
pub fn load<T: DeserializeOwned>(
    path: &Path,
    kind: ArtifactKind,
    expected_hash: Option<&str>,
) -> Result<(T, String)> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: BUILD_HINT,
            })
        }
        Err(e) => return Err(e.into()),
    };
    let bad = |message: String| Error::BadArtifact {
        path: path.to_path_buf(),
        message,
    };
    let env: EnvelopeIn<T> = serde_json::from_slice(&bytes).map_err(|e| bad(e.to_string()))?;
    if env.format != kind.format() {
        return Err(bad(format!(
            "expected format {}, found {}",
            kind.format(),
            env.format
        )));
    }
    if env.version != ARTIFACT_VERSION {
        return Err(bad(format!("unsupported version {}", env.version)));
    }
    if let Some(expected) = expected_hash {
        if env.config_hash != expected {
            return Err(Error::ConfigMismatch {
                path: path.to_path_buf(),
                expected: expected.to_string(),
                found: env.config_hash,
            });
        }
    }
    Ok((env.payload, env.config_hash))
}

pub fn save_index(path: &Path, index: &SearchIndex, config_hash: &str) -> Result<()> {
    save(path, ArtifactKind::Index, config_hash, &index.to_repr())
}

/// The index file stores corpus and vocabulary; BM25 parameters come from
/// the caller so they can be changed without rebuilding.
pub fn load_index(
    path: &Path,
    params: Bm25Params,
    expected_hash: Option<&str>,
) -> Result<SearchIndex> {
    let (repr, _) = load::<SearchIndexRepr>(path, ArtifactKind::Index, expected_hash)?;
    SearchIndex::from_repr(repr, params)
}

pub fn save_embeddings(path: &Path, table: &EmbeddingTable, config_hash: &str) -> Result<()> {
    save(path, ArtifactKind::Embeddings, config_hash, table)
}

pub fn load_embedding_table(path: &Path, expected_hash: Option<&str>) -> Result<EmbeddingTable> {
    let (table, _) = load::<EmbeddingTable>(path, ArtifactKind::Embeddings, expected_hash)?;
    table.validate().map_err(|e| Error::BadArtifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(table)
}

pub fn save_lm(path: &Path, lm: &NgramLm, config_hash: &str) -> Result<()> {
    save(path, ArtifactKind::LanguageModel, config_hash, lm)
}

pub fn load_lm(path: &Path, expected_hash: Option<&str>) -> Result<NgramLm> {
    load::<NgramLm>(path, ArtifactKind::LanguageModel, expected_hash).map(|(lm, _)| lm)
}
