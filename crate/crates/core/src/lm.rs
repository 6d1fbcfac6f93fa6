//! Add-k n-gram language model, perplexity and masked-slot prediction.
//!
//! Probabilities range over the usable vocabulary only (`V` tokens, specials
//! excluded):
//!
//! ```text
//! P(i | ctx) = (count(ctx, i) + k) / (count(ctx) + k * V)
//! ```
//!
//! Contexts are the previous `order - 1` tokens, left-padded with BOS. There
//! is no back-off: an unseen context yields the uniform distribution.
//! Special tokens inside a scored sequence receive the unseen-token mass
//! `k / (count(ctx) + k * V)`.
//!
//! Masked-slot prediction mixes the n-gram conditional with an add-k
//! unigram model of the counterfactual document:
//!
//! ```text
//! P(i) = (1 - lambda) * P_ngram(i | left context) + lambda * P_doc(i)
//! ```

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::backend::{PerplexityScorer, Predictor};
use crate::corpus::{Corpus, Document};
use crate::text::{split_sentences, TokenId};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NgramLmRepr", into = "NgramLmRepr")]
pub struct NgramLm {
    order: usize,
    k: f64,
    vocab_size: usize,
    contexts: HashMap<Vec<TokenId>, ContextCounts>,
}

type ContextRow = (Vec<TokenId>, Vec<(TokenId, u64)>);

#[derive(Serialize, Deserialize)]
struct NgramLmRepr {
    order: usize,
    k: f64,
    vocab_size: usize,
    /// `(context, [(token, count)])`, both levels sorted.
    contexts: Vec<ContextRow>,
}

impl From<NgramLm> for NgramLmRepr {
    fn from(lm: NgramLm) -> Self {
        let mut contexts: Vec<ContextRow> = lm
            .contexts
            .into_iter()
            .map(|(ctx, counts)| {
                let mut next: Vec<(TokenId, u64)> = counts.next.into_iter().collect();
                next.sort();
                (ctx, next)
            })
            .collect();
        contexts.sort_by(|a, b| a.0.cmp(&b.0));
        NgramLmRepr {
            order: lm.order,
            k: lm.k,
            vocab_size: lm.vocab_size,
            contexts,
        }
    }
}

impl TryFrom<NgramLmRepr> for NgramLm {
    type Error = String;

    fn try_from(repr: NgramLmRepr) -> std::result::Result<Self, String> {
        validate(repr.order, repr.k).map_err(|e| e.to_string())?;
        let contexts = repr
            .contexts
            .into_iter()
            .map(|(ctx, next)| {
                let total = next.iter().map(|&(_, c)| c).sum();
                (
                    ctx,
                    ContextCounts {
                        total,
                        next: next.into_iter().collect(),
                    },
                )
            })
            .collect();
        Ok(NgramLm {
            order: repr.order,
            k: repr.k,
            vocab_size: repr.vocab_size,
            contexts,
        })
    }
}

fn validate(order: usize, k: f64) -> Result<()> {
    if order < 1 {
        return Err(Error::invalid("order", "must be >= 1"));
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::invalid("k", "smoothing constant must be > 0"));
    }
    Ok(())
}

fn usable_index(t: TokenId, vocab_size: usize) -> Option<usize> {
    if t.is_special() {
        return None;
    }
    let i = (t.0 - TokenId::FIRST_USABLE) as usize;
    (i < vocab_size).then_some(i)
}

impl NgramLm {
    /// Counts n-grams over token sequences. Only usable tokens are counted as
    /// predictions; contexts may contain anything.
    pub fn from_sequences<'a, I>(
        vocab_size: usize,
        sequences: I,
        order: usize,
        k: f64,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [TokenId]>,
    {
        validate(order, k)?;
        if vocab_size == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mut contexts: HashMap<Vec<TokenId>, ContextCounts> = HashMap::new();
        let mut any = false;
        for seq in sequences {
            for t in 0..seq.len() {
                if usable_index(seq[t], vocab_size).is_none() {
                    continue;
                }
                any = true;
                let entry = contexts.entry(context_key(order, &seq[..t])).or_default();
                entry.total += 1;
                *entry.next.entry(seq[t]).or_default() += 1;
            }
        }
        if !any {
            return Err(Error::EmptyCorpus);
        }
        Ok(NgramLm {
            order,
            k,
            vocab_size,
            contexts,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.k
    }

    /// Number of predictable tokens `V`.
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn counts(&self, left: &[TokenId]) -> Option<&ContextCounts> {
        self.contexts.get(&context_key(self.order, left))
    }

    /// `P(token | left)` where `left` is everything before the token.
    pub fn prob(&self, left: &[TokenId], token: TokenId) -> f64 {
        let v = self.vocab_size as f64;
        let (total, c) = match self.counts(left) {
            Some(cc) => (
                cc.total as f64,
                cc.next.get(&token).copied().unwrap_or(0) as f64,
            ),
            None => (0.0, 0.0),
        };
        match usable_index(token, self.vocab_size) {
            Some(_) => (c + self.k) / (total + self.k * v),
            None => self.k / (total + self.k * v),
        }
    }

    /// Full conditional over the usable vocabulary; entry `i` is id `i + 3`.
    pub fn conditional(&self, left: &[TokenId]) -> Vec<f64> {
        let v = self.vocab_size as f64;
        match self.counts(left) {
            None => vec![1.0 / v; self.vocab_size],
            Some(cc) => {
                let denom = cc.total as f64 + self.k * v;
                let mut out = vec![self.k / denom; self.vocab_size];
                for (&t, &c) in &cc.next {
                    if let Some(i) = usable_index(t, self.vocab_size) {
                        out[i] = (c as f64 + self.k) / denom;
                    }
                }
                out
            }
        }
    }

    /// Add-k unigram distribution of a document's usable tokens.
    pub fn doc_unigram(&self, doc: &[TokenId]) -> Vec<f64> {
        let mut counts = vec![0u64; self.vocab_size];
        let mut n = 0u64;
        for &t in doc {
            if let Some(i) = usable_index(t, self.vocab_size) {
                counts[i] += 1;
                n += 1;
            }
        }
        let denom = n as f64 + self.k * self.vocab_size as f64;
        counts
            .iter()
            .map(|&c| (c as f64 + self.k) / denom)
            .collect()
    }

    /// `exp(-(1/T) * sum ln P(x_t | x_<t))`.
    pub fn perplexity(&self, seq: &[TokenId]) -> Result<f64> {
        perplexity(seq, self)
    }
}

fn context_key(order: usize, left: &[TokenId]) -> Vec<TokenId> {
    let n = order - 1;
    let mut key = Vec::with_capacity(n);
    let have = left.len().min(n);
    key.extend(std::iter::repeat_n(TokenId::BOS, n - have));
    key.extend_from_slice(&left[left.len() - have..]);
    key
}

/// Trains on the sentences of every document (split on `.`, `!`, `?`).
pub fn train_ngram(corpus: &Corpus, order: usize, k: f64) -> Result<NgramLm> {
    validate(order, k)?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vocab = corpus.vocab();
    let sentences: Vec<Vec<TokenId>> = corpus
        .documents()
        .iter()
        .flat_map(|d| {
            split_sentences(&d.text)
                .into_iter()
                .map(|s| vocab.encode_text(s))
        })
        .collect();
    NgramLm::from_sequences(
        vocab.usable_len(),
        sentences.iter().map(Vec::as_slice),
        order,
        k,
    )
}

pub fn perplexity(seq: &[TokenId], lm: &NgramLm) -> Result<f64> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let log_sum: f64 = (0..seq.len())
        .map(|t| lm.prob(&seq[..t], seq[t]).ln())
        .sum();
    Ok((-log_sum / seq.len() as f64).exp())
}

impl PerplexityScorer for NgramLm {
    fn perplexity(&self, seq: &[TokenId]) -> Result<f64> {
        perplexity(seq, self)
    }
}

/// Top entries of a masked-slot distribution, descending probability with
/// ties broken by ascending token id. Never contains special tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionDistribution {
    pub position: usize,
    pub entries: Vec<(TokenId, f64)>,
}

impl PredictionDistribution {
    /// Keeps the `top` best of a full distribution indexed by usable id.
    pub fn from_full(position: usize, full: &[f64], top: usize) -> Self {
        let mut idx: Vec<usize> = (0..full.len()).collect();
        let cmp = |&a: &usize, &b: &usize| full[b].total_cmp(&full[a]).then(a.cmp(&b));
        let top = top.min(idx.len());
        if top > 0 && top < idx.len() {
            idx.select_nth_unstable_by(top - 1, cmp);
            idx.truncate(top);
        }
        idx.sort_by(cmp);
        idx.truncate(top);
        PredictionDistribution {
            position,
            entries: idx
                .into_iter()
                .map(|i| (TokenId(i as u32 + TokenId::FIRST_USABLE), full[i]))
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid("lambda", "must be within [0, 1]"));
    }
    Ok(())
}

/// The untruncated mixture distribution for a masked slot.
pub fn slot_distribution(
    masked_query: &[TokenId],
    counter_doc: &[TokenId],
    position: usize,
    lm: &NgramLm,
    lambda: f64,
) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    if masked_query.get(position) != Some(&TokenId::MASK) {
        return Err(Error::NotMasked(position));
    }
    let left = &masked_query[..position];
    let window = &left[left.len().saturating_sub(lm.order() - 1)..];
    let doc = lm.doc_unigram(counter_doc);
    // An unfilled slot inside the context window leaves nothing to condition on.
    if window.contains(&TokenId::MASK) {
        return Ok(doc);
    }
    let ngram = lm.conditional(left);
    Ok(ngram
        .iter()
        .zip(&doc)
        .map(|(g, d)| (1.0 - lambda) * g + lambda * d)
        .collect())
}

pub fn predict_masked(
    masked_query: &[TokenId],
    counter_doc: &Document,
    position: usize,
    top: usize,
    lm: &NgramLm,
    lambda: f64,
) -> Result<PredictionDistribution> {
    if top < 1 {
        return Err(Error::invalid("top", "must be >= 1"));
    }
    let full = slot_distribution(masked_query, &counter_doc.tokens, position, lm, lambda)?;
    Ok(PredictionDistribution::from_full(position, &full, top))
}

/// Built-in [`Predictor`]: n-gram left context mixed with the document unigram.
#[derive(Debug, Clone, Copy)]
pub struct DocConditionedPredictor<'a> {
    pub lm: &'a NgramLm,
    pub lambda: f64,
}

impl<'a> DocConditionedPredictor<'a> {
    pub fn new(lm: &'a NgramLm, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(DocConditionedPredictor { lm, lambda })
    }
}

impl Predictor for DocConditionedPredictor<'_> {
    fn predict(
        &self,
        masked_query: &[TokenId],
        counter_doc: &Document,
        position: usize,
        top: usize,
    ) -> Result<PredictionDistribution> {
        predict_masked(
            masked_query,
            counter_doc,
            position,
            top,
            self.lm,
            self.lambda,
        )
    }
}
