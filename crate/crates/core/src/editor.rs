//! Iterative mask-and-infill query editing.
//!
//! For `i = 1..=max_masks` the editor masks the `i` most important query
//! tokens, fills the masked slots left to right with beam search, and checks
//! every fully decoded candidate in the final beam for a flip
//! (`rel(q', d') > rel(q', d)`). The first `i` that yields any flipping
//! candidate ends the search; among those candidates the lowest-perplexity
//! one is returned. Beam scores are accumulated in log space.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backend::{PerplexityScorer, Predictor, SearchModel};
use crate::corpus::Document;
use crate::lm::PredictionDistribution;
use crate::masker::ImportanceScores;
use crate::text::{TokenId, Vocabulary};
use crate::{Error, Result};

/// `(q, d, d')` with `rel(q, d) > rel(q, d')` under the search model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub query: Vec<TokenId>,
    pub doc: Document,
    pub counter: Document,
    pub doc_score: f64,
    pub counter_score: f64,
    /// Rank of `d'` in the originating ranking (2-based), when known.
    pub counter_rank: Option<usize>,
}

impl Triplet {
    /// Scores both documents with `search` and checks the strict ordering.
    pub fn new(
        query: Vec<TokenId>,
        doc: Document,
        counter: Document,
        search: &dyn SearchModel,
    ) -> Result<Self> {
        let doc_score = search.rel(&query, &doc)?;
        let counter_score = search.rel(&query, &counter)?;
        Triplet::with_scores(query, doc, counter, doc_score, counter_score, None)
    }

    pub fn with_scores(
        query: Vec<TokenId>,
        doc: Document,
        counter: Document,
        doc_score: f64,
        counter_score: f64,
        counter_rank: Option<usize>,
    ) -> Result<Self> {
        if query.is_empty() {
            return Err(Error::EmptyQuery);
        }
        let t = Triplet {
            query,
            doc,
            counter,
            doc_score,
            counter_score,
            counter_rank,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.doc_score > self.counter_score {
            Ok(())
        } else {
            Err(Error::InvalidTriplet {
                doc_score: self.doc_score,
                counter_score: self.counter_score,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditCandidate {
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub filled: usize,
}

impl EditCandidate {
    pub fn is_complete(&self) -> bool {
        !self.tokens.contains(&TokenId::MASK)
    }
}

fn candidate_order(a: &EditCandidate, b: &EditCandidate) -> std::cmp::Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// At most `width` candidates, descending log probability, ties by token-id
/// sequence, no duplicate sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    width: usize,
    candidates: Vec<EditCandidate>,
}

impl Beam {
    /// A beam holding only the masked query with probability 1.
    pub fn start(width: usize, masked_query: Vec<TokenId>) -> Result<Self> {
        if width < 1 {
            return Err(Error::invalid("beam", "width must be >= 1"));
        }
        Ok(Beam {
            width,
            candidates: vec![EditCandidate {
                tokens: masked_query,
                log_prob: 0.0,
                filled: 0,
            }],
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn candidates(&self) -> &[EditCandidate] {
        &self.candidates
    }

    /// Fills `slot` in every candidate. `dists[c]` is the prediction for
    /// candidate `c`; each contributes at most `width` extensions.
    pub fn expand(&self, slot: usize, dists: &[PredictionDistribution]) -> Result<Beam> {
        if dists.len() != self.candidates.len() {
            return Err(Error::DimensionMismatch {
                left: self.candidates.len(),
                right: dists.len(),
            });
        }
        let mut next: Vec<EditCandidate> = Vec::with_capacity(self.candidates.len() * self.width);
        let mut seen: HashMap<Vec<TokenId>, usize> = HashMap::new();
        for (cand, dist) in self.candidates.iter().zip(dists) {
            if dist.is_empty() {
                return Err(Error::EmptyDistribution);
            }
            if cand.tokens.get(slot) != Some(&TokenId::MASK) {
                return Err(Error::NotMasked(slot));
            }
            for &(token, p) in dist.entries.iter().take(self.width) {
                let mut tokens = cand.tokens.clone();
                tokens[slot] = token;
                let log_prob = cand.log_prob + p.ln();
                match seen.get(&tokens) {
                    Some(&i) => {
                        if log_prob > next[i].log_prob {
                            next[i].log_prob = log_prob;
                        }
                    }
                    None => {
                        seen.insert(tokens.clone(), next.len());
                        next.push(EditCandidate {
                            tokens,
                            log_prob,
                            filled: cand.filled + 1,
                        });
                    }
                }
            }
        }
        next.sort_by(candidate_order);
        next.truncate(self.width);
        Ok(Beam {
            width: self.width,
            candidates: next,
        })
    }
}

/// Free-function form of [`Beam::expand`].
pub fn expand_beam(beam: &Beam, slot: usize, dists: &[PredictionDistribution]) -> Result<Beam> {
    beam.expand(slot, dists)
}

/// `rel(q', d') > rel(q', d)`, strictly.
pub fn check_flip(
    candidate: &[TokenId],
    triplet: &Triplet,
    search: &dyn SearchModel,
) -> Result<bool> {
    if candidate.contains(&TokenId::MASK) {
        return Err(Error::UnfilledMask);
    }
    let counter = search.rel(candidate, &triplet.counter)?;
    let doc = search.rel(candidate, &triplet.doc)?;
    Ok(counter > doc)
}

/// Lowest perplexity, ties by token-id sequence.
pub fn select_final(flipping: &[Vec<TokenId>], ppl: &dyn PerplexityScorer) -> Result<Vec<TokenId>> {
    let mut best: Option<(f64, &Vec<TokenId>)> = None;
    for cand in flipping {
        let p = ppl.perplexity(cand)?;
        let better = match best {
            None => true,
            Some((bp, bc)) => p.total_cmp(&bp).then_with(|| cand.cmp(bc)).is_lt(),
        };
        if better {
            best = Some((p, cand));
        }
    }
    best.map(|(_, c)| c.clone()).ok_or(Error::NoCandidates)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditConfig {
    pub beam_width: usize,
    /// Upper bound on masked tokens; `None` means the full query length.
    pub max_masks: Option<usize>,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig {
            beam_width: 10,
            max_masks: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub flips: bool,
}

/// One outer iteration: which positions were masked and how the final beam fared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub masks: usize,
    pub positions: Vec<usize>,
    pub beam: Vec<CandidateTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResult {
    /// The counterfactual query, or `None` when no schedule step flipped.
    pub outcome: Option<Vec<TokenId>>,
    pub masks_used: usize,
    pub trace: Vec<IterationTrace>,
    pub elapsed_secs: f64,
}

impl EditResult {
    /// True when no iteration before the reported one had a flipping candidate.
    pub fn schedule_is_minimal(&self) -> bool {
        self.trace
            .iter()
            .filter(|it| it.masks < self.masks_used)
            .all(|it| it.beam.iter().all(|c| !c.flips))
    }
}

/// Replaces `positions` of `query` with `fill`.
pub(crate) fn mask_positions(
    query: &[TokenId],
    positions: &[usize],
    fill: TokenId,
) -> Vec<TokenId> {
    let mut out = query.to_vec();
    for &p in positions {
        out[p] = fill;
    }
    out
}

pub(crate) fn resolve_max_masks(config_max: Option<usize>, query_len: usize) -> Result<usize> {
    let max = config_max.unwrap_or(query_len).min(query_len);
    if max < 1 {
        return Err(Error::invalid("max_masks", "must be >= 1"));
    }
    Ok(max)
}

/// Runs the full mask/decode/check schedule for one triplet.
pub fn edit(
    triplet: &Triplet,
    search: &dyn SearchModel,
    scores: &ImportanceScores,
    predictor: &dyn Predictor,
    ppl: &dyn PerplexityScorer,
    config: &EditConfig,
) -> Result<EditResult> {
    let started = Instant::now();
    let q = &triplet.query;
    if q.is_empty() {
        return Err(Error::EmptyQuery);
    }
    triplet.validate()?;
    if scores.order.len() != q.len() {
        return Err(Error::DimensionMismatch {
            left: q.len(),
            right: scores.order.len(),
        });
    }
    let max_masks = resolve_max_masks(config.max_masks, q.len())?;
    let mut trace = Vec::with_capacity(max_masks);

    for i in 1..=max_masks {
        let positions = scores.top_positions(i);
        let mut beam = Beam::start(
            config.beam_width,
            mask_positions(q, &positions, TokenId::MASK),
        )?;
        for &slot in &positions {
            let dists = beam
                .candidates()
                .iter()
                .map(|c| predictor.predict(&c.tokens, &triplet.counter, slot, config.beam_width))
                .collect::<Result<Vec<_>>>()?;
            beam = beam.expand(slot, &dists)?;
        }
        let mut flipping = Vec::new();
        let mut iteration = IterationTrace {
            masks: i,
            positions,
            beam: Vec::with_capacity(beam.candidates().len()),
        };
        for cand in beam.candidates() {
            let flips = check_flip(&cand.tokens, triplet, search)?;
            if flips {
                flipping.push(cand.tokens.clone());
            }
            iteration.beam.push(CandidateTrace {
                tokens: cand.tokens.clone(),
                log_prob: cand.log_prob,
                flips,
            });
        }
        trace.push(iteration);
        if !flipping.is_empty() {
            return Ok(EditResult {
                outcome: Some(select_final(&flipping, ppl)?),
                masks_used: i,
                trace,
                elapsed_secs: started.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(EditResult {
        outcome: None,
        masks_used: max_masks,
        trace,
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamSummary {
    pub query: String,
    pub log_prob: f64,
    pub flips: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub masks: usize,
    pub positions: Vec<usize>,
    pub beam: Vec<BeamSummary>,
}

/// One line of batch `edit` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub query: String,
    pub doc_id: String,
    pub counter_doc_id: String,
    pub q_prime: Option<String>,
    pub masks_used: usize,
    pub elapsed_seconds: f64,
    pub iterations: Vec<IterationSummary>,
}

impl EditRecord {
    pub fn new(triplet: &Triplet, result: &EditResult, vocab: &Vocabulary) -> Self {
        EditRecord {
            query: vocab.render(&triplet.query),
            doc_id: triplet.doc.id.clone(),
            counter_doc_id: triplet.counter.id.clone(),
            q_prime: result.outcome.as_ref().map(|q| vocab.render(q)),
            masks_used: result.masks_used,
            elapsed_seconds: result.elapsed_secs,
            iterations: result
                .trace
                .iter()
                .map(|it| IterationSummary {
                    masks: it.masks,
                    positions: it.positions.clone(),
                    beam: it
                        .beam
                        .iter()
                        .map(|c| BeamSummary {
                            query: vocab.render(&c.tokens),
                            log_prob: c.log_prob,
                            flips: c.flips,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::sample_index;
    use crate::lm::{DocConditionedPredictor, NgramLm};

    fn dist(entries: &[(u32, f64)]) -> PredictionDistribution {
        PredictionDistribution {
            position: 0,
            entries: entries.iter().map(|&(t, p)| (TokenId(t), p)).collect(),
        }
    }

    #[test]
    fn width_one_is_greedy() {
        let beam = Beam::start(1, vec![TokenId::MASK, TokenId::MASK]).unwrap();
        let b1 = beam.expand(0, &[dist(&[(4, 0.6), (3, 0.4)])]).unwrap();
        assert_eq!(b1.candidates().len(), 1);
        assert_eq!(b1.candidates()[0].tokens[0], TokenId(4));
        let b2 = b1.expand(1, &[dist(&[(5, 0.9), (3, 0.1)])]).unwrap();
        assert_eq!(b2.candidates()[0].tokens, vec![TokenId(4), TokenId(5)]);
        assert!((b2.candidates()[0].log_prob - (0.6f64.ln() + 0.9f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn duplicate_sequences_keep_max() {
        // Two identical parents (constructed by hand) produce the same child.
        let beam = Beam {
            width: 4,
            candidates: vec![
                EditCandidate {
                    tokens: vec![TokenId::MASK],
                    log_prob: -0.1,
                    filled: 0,
                },
                EditCandidate {
                    tokens: vec![TokenId::MASK],
                    log_prob: -0.5,
                    filled: 0,
                },
            ],
        };
        let out = beam
            .expand(0, &[dist(&[(3, 0.5)]), dist(&[(3, 0.9)])])
            .unwrap();
        assert_eq!(out.candidates().len(), 1);
        // -0.1 + ln 0.5 < -0.5 + ln 0.9
        assert!((out.candidates()[0].log_prob - (-0.5 + 0.9f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn expand_errors() {
        let beam = Beam::start(2, vec![TokenId::MASK]).unwrap();
        assert!(matches!(
            beam.expand(0, &[dist(&[])]),
            Err(Error::EmptyDistribution)
        ));
        assert!(beam.expand(0, &[]).is_err());
        assert!(Beam::start(0, vec![]).is_err());
    }

    struct FixedPpl(Vec<(Vec<TokenId>, f64)>);

    impl PerplexityScorer for FixedPpl {
        fn perplexity(&self, seq: &[TokenId]) -> Result<f64> {
            Ok(self
                .0
                .iter()
                .find(|(s, _)| s == seq)
                .map(|(_, p)| *p)
                .unwrap())
        }
    }

    #[test]
    fn select_final_rules() {
        let a = vec![TokenId(3)];
        let b = vec![TokenId(4)];
        let ppl = FixedPpl(vec![(a.clone(), 4.1), (b.clone(), 3.2)]);
        assert_eq!(select_final(std::slice::from_ref(&a), &ppl).unwrap(), a);
        assert_eq!(select_final(&[a.clone(), b.clone()], &ppl).unwrap(), b);
        let tied = FixedPpl(vec![(a.clone(), 2.0), (b.clone(), 2.0)]);
        assert_eq!(select_final(&[b.clone(), a.clone()], &tied).unwrap(), a);
        assert!(matches!(select_final(&[], &ppl), Err(Error::NoCandidates)));
    }

    #[test]
    fn select_final_by_hand_bigram() {
        // Sentences "a b", "a b", "c a" (V=3, k=0.1): P(a|BOS)=2.1/3.3,
        // P(b|a)=2.1/2.3, P(c|BOS)=1.1/3.3, P(b|c)=0.1/1.3.
        let (a, b, c) = (TokenId(3), TokenId(4), TokenId(5));
        let seqs = [vec![a, b], vec![a, b], vec![c, a]];
        let lm = NgramLm::from_sequences(3, seqs.iter().map(Vec::as_slice), 2, 0.1).unwrap();
        let p_ab = (-((2.1f64 / 3.3).ln() + (2.1f64 / 2.3).ln()) / 2.0).exp();
        let p_cb = (-((1.1f64 / 3.3).ln() + (0.1f64 / 1.3).ln()) / 2.0).exp();
        assert!((lm.perplexity(&[a, b]).unwrap() - p_ab).abs() < 1e-12);
        assert!((lm.perplexity(&[c, b]).unwrap() - p_cb).abs() < 1e-12);
        assert!(p_ab < p_cb);
        assert_eq!(
            select_final(&[vec![c, b], vec![a, b]], &lm).unwrap(),
            vec![a, b]
        );
    }

    #[test]
    fn check_flip_rules() {
        let idx = sample_index();
        let c = idx.corpus();
        let q = c.encode_query("apple recipe");
        let t = Triplet::new(
            q.clone(),
            c.doc("d1").unwrap().clone(),
            c.doc("d3").unwrap().clone(),
            &idx,
        )
        .unwrap();
        assert!(!check_flip(&q, &t, &idx).unwrap());
        assert!(check_flip(&c.encode_query("banana recipe"), &t, &idx).unwrap());
        // "recipe" alone scores d1 and d3 equally: not a flip.
        assert!(!check_flip(&c.encode_query("recipe"), &t, &idx).unwrap());
        assert!(check_flip(&[TokenId::MASK], &t, &idx).is_err());
    }

    #[test]
    fn invalid_triplet_rejected() {
        let idx = sample_index();
        let c = idx.corpus();
        let q = c.encode_query("apple recipe");
        let e = Triplet::new(
            q,
            c.doc("d3").unwrap().clone(),
            c.doc("d1").unwrap().clone(),
            &idx,
        )
        .unwrap_err();
        assert!(e
            .to_string()
            .starts_with("not a valid counterfactual target"));
    }

    #[test]
    fn edit_is_deterministic() {
        let idx = sample_index();
        let c = idx.corpus();
        let lm = crate::lm::train_ngram(c, 3, 0.1).unwrap();
        let pred = DocConditionedPredictor::new(&lm, 0.5).unwrap();
        let q = c.encode_query("apple recipe");
        let t = Triplet::new(
            q.clone(),
            c.doc("d1").unwrap().clone(),
            c.doc("d2").unwrap().clone(),
            &idx,
        )
        .unwrap();
        let s = crate::masker::occlusion_importance(&q, &t.doc, &idx).unwrap();
        let cfg = EditConfig::default();
        let mut a = edit(&t, &idx, &s, &pred, &lm, &cfg).unwrap();
        let mut b = edit(&t, &idx, &s, &pred, &lm, &cfg).unwrap();
        a.elapsed_secs = 0.0;
        b.elapsed_secs = 0.0;
        assert_eq!(a, b);
        assert!(a.schedule_is_minimal());
    }
}
