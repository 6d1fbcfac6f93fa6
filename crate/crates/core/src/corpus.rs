//! Document collection, inverted index and the built-in BM25 search model.
//!
//! ```text
//! idf(t)      = ln(1 + (N - df(t) + 0.5) / (df(t) + 0.5))
//! score(q, d) = sum over query tokens t of
//!               idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * n / avgdl))
//! ```
//!
//! Scores are accumulated in query-token order both when scoring a single
//! document and when ranking the whole collection, so the two paths agree
//! bit for bit.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::backend::SearchModel;
use crate::text::{build_vocabulary, tokenize, TokenId, Vocabulary};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub tokens: Vec<TokenId>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1.is_finite() && self.k1 > 0.0) {
            return Err(Error::invalid("k1", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::invalid("b", "must be within [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub num_docs: usize,
    pub total_len: usize,
    pub avgdl: f64,
    /// Document frequency per token id.
    pub df: Vec<u32>,
}

/// Tokenized documents plus the vocabulary they were encoded with.
#[derive(Debug, Clone)]
pub struct Corpus {
    vocab: Vocabulary,
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
    stats: CorpusStats,
}

impl Corpus {
    /// Builds a corpus from `(id, text)` pairs. The vocabulary is derived
    /// from the same texts.
    pub fn from_records(records: Vec<(String, String)>, min_count: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let tokenized: Vec<Vec<String>> = records.iter().map(|(_, text)| tokenize(text)).collect();
        let vocab = build_vocabulary(&tokenized, min_count)?;
        let documents = records
            .into_iter()
            .zip(&tokenized)
            .map(|((id, text), toks)| Document {
                tokens: vocab.encode(toks),
                id,
                text,
            })
            .collect();
        Corpus::from_documents(vocab, documents)
    }

    /// Assembles a corpus from already-encoded documents.
    pub fn from_documents(vocab: Vocabulary, documents: Vec<Document>) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut by_id = HashMap::with_capacity(documents.len());
        let mut df = vec![0u32; vocab.len()];
        let mut total_len = 0usize;
        let mut seen = vec![usize::MAX; vocab.len()];
        for (i, doc) in documents.iter().enumerate() {
            if by_id.insert(doc.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(doc.id.clone()));
            }
            total_len += doc.len();
            for &t in &doc.tokens {
                if t.index() >= vocab.len() {
                    return Err(Error::invalid(
                        "tokens",
                        format!("{t} outside vocabulary in {}", doc.id),
                    ));
                }
                if seen[t.index()] != i {
                    seen[t.index()] = i;
                    df[t.index()] += 1;
                }
            }
        }
        let num_docs = documents.len();
        let stats = CorpusStats {
            num_docs,
            total_len,
            avgdl: total_len as f64 / num_docs as f64,
            df,
        };
        Ok(Corpus {
            vocab,
            documents,
            by_id,
            stats,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.documents[i])
    }

    pub fn doc(&self, id: &str) -> Result<&Document> {
        self.get(id)
            .ok_or_else(|| Error::UnknownDocument(id.to_string()))
    }

    /// Encodes free text with this corpus's vocabulary.
    pub fn encode_query(&self, text: &str) -> Vec<TokenId> {
        self.vocab.encode_text(text)
    }
}

/// Reads one JSON object per line with string fields `id` and `text`.
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn ingest_corpus<R: BufRead>(source: R, min_count: usize) -> Result<Corpus> {
    let mut records = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: line_no,
                message: e.to_string(),
            })?;
        let obj = value.as_object().ok_or_else(|| Error::MalformedRecord {
            line: line_no,
            message: "expected a JSON object".into(),
        })?;
        let field = |name: &'static str| -> Result<String> {
            match obj.get(name) {
                None | Some(serde_json::Value::Null) => Err(Error::MissingField {
                    field: name,
                    line: line_no,
                }),
                Some(serde_json::Value::String(s)) => Ok(s.clone()),
                Some(_) => Err(Error::MalformedRecord {
                    line: line_no,
                    message: format!("field `{name}` must be a string"),
                }),
            }
        };
        let id = field("id")?;
        let text = field("text")?;
        if seen.insert(id.clone(), line_no).is_some() {
            return Err(Error::DuplicateId(id));
        }
        records.push((id, text));
    }
    Corpus::from_records(records, min_count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Term -> postings sorted by internal document index.
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    postings: Vec<Vec<Posting>>,
    doc_lengths: Vec<u32>,
}

impl InvertedIndex {
    pub fn build(corpus: &Corpus) -> Self {
        let mut postings: Vec<Vec<Posting>> = vec![Vec::new(); corpus.vocab().len()];
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        let mut tf: HashMap<TokenId, u32> = HashMap::new();
        for (i, doc) in corpus.documents().iter().enumerate() {
            doc_lengths.push(doc.len() as u32);
            tf.clear();
            for &t in &doc.tokens {
                if !t.is_special() {
                    *tf.entry(t).or_default() += 1;
                }
            }
            for (&t, &count) in &tf {
                postings[t.index()].push(Posting {
                    doc: i as u32,
                    tf: count,
                });
            }
        }
        // Documents are visited in index order, so each list is already sorted.
        InvertedIndex {
            postings,
            doc_lengths,
        }
    }

    pub fn postings(&self, term: TokenId) -> &[Posting] {
        self.postings
            .get(term.index())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn doc_length(&self, doc: usize) -> u32 {
        self.doc_lengths[doc]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDoc {
    pub doc_id: String,
    pub score: f64,
}

/// Documents in descending score order, ties by ascending doc id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub query: Vec<TokenId>,
    pub entries: Vec<RankedDoc>,
}

/// Sparse idf-weighted query vector, L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryVector {
    /// `(term, weight)` sorted by term id.
    pub weights: Vec<(TokenId, f64)>,
    /// True when no query term carries weight (e.g. all `[UNK]`).
    pub zero: bool,
}

impl QueryVector {
    /// Cosine against another query vector; zero vectors give 0.0.
    pub fn cosine(&self, other: &QueryVector) -> f64 {
        if self.zero || other.zero {
            return 0.0;
        }
        let (mut i, mut j) = (0, 0);
        let mut dot = 0.0;
        while i < self.weights.len() && j < other.weights.len() {
            let (a, wa) = self.weights[i];
            let (b, wb) = other.weights[j];
            match a.cmp(&b) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    dot += wa * wb;
                    i += 1;
                    j += 1;
                }
            }
        }
        let nu: f64 = self.weights.iter().map(|(_, w)| w * w).sum();
        let nv: f64 = other.weights.iter().map(|(_, w)| w * w).sum();
        dot / (nu * nv).sqrt()
    }
}

/// Corpus + inverted index + BM25 parameters. This is the built-in `S`.
#[derive(Debug, Clone)]
pub struct SearchIndex {
    corpus: Corpus,
    index: InvertedIndex,
    idf: Vec<f64>,
    params: Bm25Params,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct SearchIndexRepr {
    pub vocabulary: Vocabulary,
    pub documents: Vec<Document>,
}

impl SearchIndex {
    pub fn build(corpus: Corpus, params: Bm25Params) -> Result<Self> {
        params.validate()?;
        let index = InvertedIndex::build(&corpus);
        let n = corpus.len() as f64;
        let idf = corpus
            .stats()
            .df
            .iter()
            .map(|&df| {
                if df == 0 {
                    0.0
                } else {
                    let df = df as f64;
                    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
                }
            })
            .collect();
        Ok(SearchIndex {
            corpus,
            index,
            idf,
            params,
        })
    }

    pub fn with_params(mut self, params: Bm25Params) -> Result<Self> {
        params.validate()?;
        self.params = params;
        Ok(self)
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn vocab(&self) -> &Vocabulary {
        self.corpus.vocab()
    }

    pub fn inverted(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn idf(&self, term: TokenId) -> f64 {
        if term.is_special() {
            return 0.0;
        }
        self.idf.get(term.index()).copied().unwrap_or(0.0)
    }

    fn term_score(&self, idf: f64, tf: u32, doc_len: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = 1.0 - b + b * doc_len as f64 / self.corpus.stats().avgdl;
        idf * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// BM25 score of `doc` for `query`. Terms outside the index add nothing.
    pub fn bm25_score(&self, query: &[TokenId], doc: &Document) -> f64 {
        let mut score = 0.0;
        for &t in query {
            let idf = self.idf(t);
            if idf == 0.0 {
                continue;
            }
            let tf = doc.tokens.iter().filter(|&&x| x == t).count() as u32;
            if tf > 0 {
                score += self.term_score(idf, tf, doc.len());
            }
        }
        score
    }

    /// Top-`k` documents by BM25, ties by ascending doc id.
    pub fn search(&self, query: &[TokenId], k: usize) -> Result<Ranking> {
        if k < 1 {
            return Err(Error::invalid("k", "must be >= 1"));
        }
        if self.corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let docs = self.corpus.documents();
        let mut acc = vec![0.0f64; docs.len()];
        for &t in query {
            let idf = self.idf(t);
            if idf == 0.0 {
                continue;
            }
            for p in self.index.postings(t) {
                let d = p.doc as usize;
                acc[d] += self.term_score(idf, p.tf, self.index.doc_length(d) as usize);
            }
        }
        let mut order: Vec<usize> = (0..docs.len()).collect();
        let cmp = |&a: &usize, &b: &usize| {
            acc[b]
                .total_cmp(&acc[a])
                .then_with(|| docs[a].id.cmp(&docs[b].id))
        };
        let k = k.min(docs.len());
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_by(cmp);
        Ok(Ranking {
            query: query.to_vec(),
            entries: order
                .into_iter()
                .map(|i| RankedDoc {
                    doc_id: docs[i].id.clone(),
                    score: acc[i],
                })
                .collect(),
        })
    }

    /// idf-weighted term-frequency vector of the query, L2-normalized.
    pub fn query_representation(&self, query: &[TokenId]) -> QueryVector {
        let mut tf: Vec<(TokenId, f64)> = Vec::new();
        for &t in query {
            let idf = self.idf(t);
            if idf == 0.0 {
                continue;
            }
            match tf.iter_mut().find(|(x, _)| *x == t) {
                Some((_, w)) => *w += idf,
                None => tf.push((t, idf)),
            }
        }
        tf.sort_by_key(|&(t, _)| t);
        let norm = tf.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm == 0.0 {
            return QueryVector {
                weights: Vec::new(),
                zero: true,
            };
        }
        for (_, w) in &mut tf {
            *w /= norm;
        }
        QueryVector {
            weights: tf,
            zero: false,
        }
    }

    pub(crate) fn to_repr(&self) -> SearchIndexRepr {
        SearchIndexRepr {
            vocabulary: self.corpus.vocab().clone(),
            documents: self.corpus.documents().to_vec(),
        }
    }

    pub(crate) fn from_repr(repr: SearchIndexRepr, params: Bm25Params) -> Result<Self> {
        SearchIndex::build(
            Corpus::from_documents(repr.vocabulary, repr.documents)?,
            params,
        )
    }
}

impl SearchModel for SearchIndex {
    fn rel(&self, query: &[TokenId], doc: &Document) -> Result<f64> {
        Ok(self.bm25_score(query, doc))
    }
}
