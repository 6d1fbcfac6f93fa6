//! Query-token importance and the resulting masking order.
//!
//! Two maskers are available:
//! - MaxSim: `r_i = max_j v(q_i) . v(d_j)` over unit-norm token vectors.
//! - Occlusion: `r_i = rel(q, d) - rel(q without token i, d)` under `S`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{Embedder, SearchModel};
use crate::corpus::Document;
use crate::embed::dot;
use crate::text::TokenId;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskerKind {
    #[default]
    Maxsim,
    Occlusion,
}

impl FromStr for MaskerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maxsim" => Ok(MaskerKind::Maxsim),
            "occlusion" => Ok(MaskerKind::Occlusion),
            other => Err(Error::invalid(
                "masker",
                format!("unknown masker `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScores {
    pub query: Vec<TokenId>,
    pub scores: Vec<f64>,
    /// Query positions, most important first; ties go to the leftmost position.
    pub order: Vec<usize>,
}

impl ImportanceScores {
    pub fn new(query: Vec<TokenId>, scores: Vec<f64>) -> Result<Self> {
        if query.len() != scores.len() {
            return Err(Error::DimensionMismatch {
                left: query.len(),
                right: scores.len(),
            });
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Ok(ImportanceScores {
            query,
            scores,
            order,
        })
    }

    /// Sum of token scores; the masker's own approximation of `rel(q, d)`.
    /// Never used in place of the search model's score.
    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }

    /// The `i` most important positions, in ascending position order.
    pub fn top_positions(&self, i: usize) -> Vec<usize> {
        let mut p = self.order[..i.min(self.order.len())].to_vec();
        p.sort_unstable();
        p
    }
}

pub fn maxsim_importance(
    query: &[TokenId],
    doc: &Document,
    embedder: &dyn Embedder,
) -> Result<ImportanceScores> {
    if query.is_empty() {
        return Err(Error::EmptyQuery);
    }
    if doc.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let qv = embedder.embed(query)?;
    let dv = embedder.embed(&doc.tokens)?;
    let scores = qv
        .iter()
        .map(|q| {
            dv.iter()
                .map(|d| dot(q, d))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    ImportanceScores::new(query.to_vec(), scores)
}

pub fn occlusion_importance(
    query: &[TokenId],
    doc: &Document,
    search: &dyn SearchModel,
) -> Result<ImportanceScores> {
    if query.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let base = search.rel(query, doc)?;
    let mut scores = Vec::with_capacity(query.len());
    let mut reduced = Vec::with_capacity(query.len());
    for i in 0..query.len() {
        reduced.clear();
        reduced.extend(
            query
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &t)| t),
        );
        scores.push(base - search.rel(&reduced, doc)?);
    }
    ImportanceScores::new(query.to_vec(), scores)
}

/// Dispatches on [`MaskerKind`]; both maskers are grounded on the original top document.
pub fn importance(
    kind: MaskerKind,
    query: &[TokenId],
    doc: &Document,
    embedder: &dyn Embedder,
    search: &dyn SearchModel,
) -> Result<ImportanceScores> {
    match kind {
        MaskerKind::Maxsim => maxsim_importance(query, doc, embedder),
        MaskerKind::Occlusion => occlusion_importance(query, doc, search),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::sample_index;
    use crate::embed::load_embeddings;
    use crate::text::build_vocabulary;
    use proptest::prelude::*;

    fn doc(tokens: Vec<TokenId>) -> Document {
        Document {
            id: "d".into(),
            text: String::new(),
            tokens,
        }
    }

    #[test]
    fn single_token_query() {
        let v = build_vocabulary(&[vec!["apple", "pie"]], 1).unwrap();
        let t = load_embeddings("apple 1 0\npie 0 1\n".as_bytes(), &v).unwrap();
        let apple = v.id("apple").unwrap();
        let s = maxsim_importance(&[apple], &doc(vec![apple]), &t).unwrap();
        assert_eq!(s.scores, vec![1.0]);
        assert_eq!(s.order, vec![0]);
    }

    #[test]
    fn maxsim_by_enumeration() {
        let v = build_vocabulary(&[vec!["apple", "recipe", "banana", "orchard"]], 1).unwrap();
        let file = "apple 1 0\nrecipe 0 1\nbanana 0.8 0.6\norchard 0.6 -0.8\n";
        let t = load_embeddings(file.as_bytes(), &v).unwrap();
        let id = |s| v.id(s).unwrap();
        let s = maxsim_importance(
            &[id("apple"), id("recipe")],
            &doc(vec![id("banana"), id("orchard")]),
            &t,
        )
        .unwrap();
        // apple . banana = 0.8, apple . orchard = 0.6 -> 0.8
        // recipe . banana = 0.6, recipe . orchard = -0.8 -> 0.6
        assert!((s.scores[0] - 0.8).abs() < 1e-12);
        assert!((s.scores[1] - 0.6).abs() < 1e-12);
        assert_eq!(s.order, vec![0, 1]);
        assert!(maxsim_importance(&[id("apple")], &doc(vec![]), &t).is_err());
    }

    #[test]
    fn occlusion_on_sample_corpus() {
        let idx = sample_index();
        let q = idx.corpus().encode_query("apple recipe");
        let d1 = idx.corpus().doc("d1").unwrap();
        let s = occlusion_importance(&q, d1, &idx).unwrap();
        // Each term: idf = ln 1.6, tf part = 1 since n = avgdl.
        let contrib = 1.6f64.ln();
        assert!((s.scores[0] - contrib).abs() < 1e-12);
        assert!((s.scores[1] - contrib).abs() < 1e-12);
        // Equal scores: leftmost first.
        assert_eq!(s.order, vec![0, 1]);

        // "recipe" is absent from d2.
        let d2 = idx.corpus().doc("d2").unwrap();
        let s = occlusion_importance(&q, d2, &idx).unwrap();
        assert_eq!(s.scores[1], 0.0);
    }

    proptest! {
        #[test]
        fn maxsim_ignores_doc_order_and_is_monotone(
            vecs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 6),
            q in proptest::collection::vec(0usize..6, 1..4),
            d in proptest::collection::vec(0usize..6, 1..6),
            extra in 0usize..6,
        ) {
            let words = ["a", "b", "c", "e", "f", "g"];
            let v = build_vocabulary(&[words.to_vec()], 1).unwrap();
            let mut file = String::new();
            for (w, (x, y)) in words.iter().zip(&vecs) {
                file.push_str(&format!("{w} {} {}\n", x + 1.5, y));
            }
            let t = load_embeddings(file.as_bytes(), &v).unwrap();
            let id = |i: usize| v.id(words[i]).unwrap();
            let q: Vec<TokenId> = q.into_iter().map(id).collect();
            let d: Vec<TokenId> = d.into_iter().map(id).collect();
            let base = maxsim_importance(&q, &doc(d.clone()), &t).unwrap();
            let mut rev = d.clone();
            rev.reverse();
            prop_assert_eq!(&maxsim_importance(&q, &doc(rev), &t).unwrap().scores, &base.scores);
            let mut more = d;
            more.push(id(extra));
            let grown = maxsim_importance(&q, &doc(more), &t).unwrap();
            for (a, b) in grown.scores.iter().zip(&base.scores) {
                prop_assert!(a >= b);
            }
            prop_assert!(base.scores.iter().all(|r| (-1.0 - 1e-12..=1.0 + 1e-12).contains(r)));
        }
    }
}
