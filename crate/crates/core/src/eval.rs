//! Triplet construction, explanation metrics, baselines and reports.
//!
//! Metrics per edited query `q'`:
//! - Flip Rate: share of triplets whose outcome is not Null.
//! - CosSim: cosine of the search model's query vectors of `q` and `q'`.
//! - BERTScore-F1: greedy token matching over embeddings, with similarities
//!   rescaled from [-1, 1] to [0, 1] via `(s + 1) / 2`.
//! - Fluency: `ppl(q') / ppl(q)`.
//! - Runtime: wall-clock seconds per edit.
//!
//! Null outcomes count as non-flips and are left out of the similarity and
//! fluency means; their number is reported next to them.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::backend::{Embedder, PerplexityScorer, Predictor, SearchModel};
use crate::corpus::{Corpus, Ranking, SearchIndex};
use crate::editor::{
    check_flip, edit, mask_positions, resolve_max_masks, select_final, CandidateTrace, EditConfig,
    EditResult, IterationTrace, Triplet,
};
use crate::embed::{dot, Cosine};
use crate::masker::{importance, ImportanceScores, MaskerKind};
use crate::parallel::map_indexed;
use crate::text::{split_sentences, TokenId, Vocabulary};
use crate::{Error, Result};

const NOTES: [&str; 2] = [
    "BERTScore token similarities rescaled from [-1,1] to [0,1] via (s+1)/2",
    "Null edits count as non-flips and are excluded from CosSim, BERTScore-F1 and Fluency means",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cfe2,
    MaskOnly,
    MaxFlip,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Cfe2 => "cfe2",
            Method::MaskOnly => "mask_only",
            Method::MaxFlip => "max_flip",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cfe2" => Ok(Method::Cfe2),
            "mask_only" => Ok(Method::MaskOnly),
            "max_flip" => Ok(Method::MaxFlip),
            other => Err(Error::UnknownMethod(other.to_string())),
        }
    }
}

/// Top-1 document as `d`, every strictly lower-scored entry as `d'`.
pub fn build_triplets(ranking: &Ranking, corpus: &Corpus) -> Result<Vec<Triplet>> {
    if ranking.entries.len() < 2 {
        warn!(
            "ranking has {} result(s); no triplets",
            ranking.entries.len()
        );
        return Ok(Vec::new());
    }
    let top = &ranking.entries[0];
    let doc = corpus.doc(&top.doc_id)?;
    let mut out = Vec::with_capacity(ranking.entries.len() - 1);
    for (r, entry) in ranking.entries.iter().enumerate().skip(1) {
        if top.score <= entry.score {
            warn!(
                "rank {} ({}) ties the top score; skipped",
                r + 1,
                entry.doc_id
            );
            continue;
        }
        out.push(Triplet::with_scores(
            ranking.query.clone(),
            doc.clone(),
            corpus.doc(&entry.doc_id)?.clone(),
            top.score,
            entry.score,
            Some(r + 1),
        )?);
    }
    Ok(out)
}

/// Searches every query and concatenates the resulting triplets.
pub fn build_dataset(
    index: &SearchIndex,
    queries: &[Vec<TokenId>],
    k: usize,
) -> Result<Vec<Triplet>> {
    if k < 2 {
        return Err(Error::invalid("top_k", "must be >= 2"));
    }
    let mut out = Vec::new();
    for q in queries {
        if q.is_empty() {
            continue;
        }
        out.extend(build_triplets(&index.search(q, k)?, index.corpus())?);
    }
    Ok(out)
}

/// CosSim between search-model query vectors, clamped to [0, 1].
pub fn cos_sim_metric(q: &[TokenId], q_prime: &[TokenId], index: &SearchIndex) -> Cosine {
    let a = index.query_representation(q);
    let b = index.query_representation(q_prime);
    Cosine {
        value: a.cosine(&b).clamp(0.0, 1.0),
        degenerate: a.zero || b.zero,
    }
}

/// Greedy-matching F1 over token vectors; identical tokens match at 1.
pub fn bertscore_f1(q: &[TokenId], q_prime: &[TokenId], embedder: &dyn Embedder) -> Result<f64> {
    if q.is_empty() || q_prime.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let vq = embedder.embed(q)?;
    let vp = embedder.embed(q_prime)?;
    let sim = |i: usize, j: usize| -> f64 {
        let s = if q[i] == q_prime[j] {
            1.0
        } else {
            dot(&vq[i], &vp[j]).clamp(-1.0, 1.0)
        };
        (s + 1.0) / 2.0
    };
    let precision = (0..q_prime.len())
        .map(|j| {
            (0..q.len())
                .map(|i| sim(i, j))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / q_prime.len() as f64;
    let recall = (0..q.len())
        .map(|i| {
            (0..q_prime.len())
                .map(|j| sim(i, j))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / q.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// `ppl(q') / ppl(q)`.
pub fn fluency_metric(
    q: &[TokenId],
    q_prime: &[TokenId],
    ppl: &dyn PerplexityScorer,
) -> Result<f64> {
    Ok(ppl.perplexity(q_prime)? / ppl.perplexity(q)?)
}

/// Replaces the top-`i` important tokens with `[PAD]` for growing `i`
/// until the pair flips.
pub fn baseline_mask_only(
    triplet: &Triplet,
    scores: &ImportanceScores,
    search: &dyn SearchModel,
    max_masks: Option<usize>,
) -> Result<EditResult> {
    let started = Instant::now();
    triplet.validate()?;
    let max = resolve_max_masks(max_masks, triplet.query.len())?;
    let mut trace = Vec::with_capacity(max);
    for i in 1..=max {
        let positions = scores.top_positions(i);
        let cand = mask_positions(&triplet.query, &positions, TokenId::PAD);
        let flips = check_flip(&cand, triplet, search)?;
        trace.push(IterationTrace {
            masks: i,
            positions,
            beam: vec![CandidateTrace {
                tokens: cand.clone(),
                log_prob: 0.0,
                flips,
            }],
        });
        if flips {
            return Ok(EditResult {
                outcome: Some(cand),
                masks_used: i,
                trace,
                elapsed_secs: started.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(EditResult {
        outcome: None,
        masks_used: max,
        trace,
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}

/// Picks the lowest-perplexity sentence of `d'` that flips the pair.
pub fn baseline_max_flip(
    triplet: &Triplet,
    vocab: &Vocabulary,
    search: &dyn SearchModel,
    ppl: &dyn PerplexityScorer,
) -> Result<EditResult> {
    let started = Instant::now();
    let mut beam = Vec::new();
    let mut flipping = Vec::new();
    for sentence in split_sentences(&triplet.counter.text) {
        let tokens = vocab.encode_text(sentence);
        if tokens.is_empty() {
            continue;
        }
        let flips = check_flip(&tokens, triplet, search)?;
        if flips {
            flipping.push(tokens.clone());
        }
        beam.push(CandidateTrace {
            tokens,
            log_prob: 0.0,
            flips,
        });
    }
    let outcome = if flipping.is_empty() {
        None
    } else {
        Some(select_final(&flipping, ppl)?)
    };
    Ok(EditResult {
        outcome,
        masks_used: 0,
        trace: vec![IterationTrace {
            masks: 0,
            positions: Vec::new(),
            beam,
        }],
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub edit: EditConfig,
    pub masker: MaskerKind,
    /// `None` uses all available threads.
    pub workers: Option<usize>,
    /// When false, per-edit runtimes are recorded as 0 so reports are
    /// byte-reproducible.
    pub record_timing: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            edit: EditConfig::default(),
            masker: MaskerKind::Maxsim,
            workers: None,
            record_timing: true,
        }
    }
}

/// Everything a method needs: the built-in index (vocabulary and the CosSim
/// query representation) plus one backend per model role.
#[derive(Clone, Copy)]
pub struct EvalContext<'a> {
    pub index: &'a SearchIndex,
    pub search: &'a dyn SearchModel,
    pub embedder: &'a dyn Embedder,
    pub predictor: &'a dyn Predictor,
    pub perplexity: &'a dyn PerplexityScorer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub triplet_id: usize,
    pub query: String,
    pub doc_id: String,
    pub counter_doc_id: String,
    pub counter_rank: Option<usize>,
    pub q_prime: Option<String>,
    pub flipped: bool,
    pub masks_used: usize,
    pub cos_sim: Option<f64>,
    pub bertscore_f1: Option<f64>,
    pub fluency: Option<f64>,
    pub elapsed_secs: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub triplets: usize,
    pub flipped: usize,
    pub nulls: usize,
    pub flip_rate: f64,
    pub mean_cos_sim: Option<f64>,
    pub mean_bertscore_f1: Option<f64>,
    pub mean_fluency: Option<f64>,
    pub mean_runtime_secs: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl Aggregates {
    pub fn from_records<'a>(
        records: impl IntoIterator<Item = &'a TripletRecord> + Clone,
    ) -> Result<Self> {
        let all: Vec<&TripletRecord> = records.into_iter().collect();
        if all.is_empty() {
            return Err(Error::NoRecords);
        }
        let flipped = all.iter().filter(|r| r.flipped).count();
        Ok(Aggregates {
            triplets: all.len(),
            flipped,
            nulls: all.iter().filter(|r| r.q_prime.is_none()).count(),
            flip_rate: flipped as f64 / all.len() as f64,
            mean_cos_sim: mean(all.iter().filter_map(|r| r.cos_sim)),
            mean_bertscore_f1: mean(all.iter().filter_map(|r| r.bertscore_f1)),
            mean_fluency: mean(all.iter().filter_map(|r| r.fluency)),
            mean_runtime_secs: mean(all.iter().map(|r| r.elapsed_secs)).unwrap_or(0.0),
        })
    }
}

/// Flipped share; Null outcomes are non-flips.
pub fn flip_rate(records: &[TripletRecord]) -> Result<f64> {
    Ok(Aggregates::from_records(records)?.flip_rate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: usize,
    #[serde(flatten)]
    pub aggregate: Aggregates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub beam_width: usize,
    pub masker: MaskerKind,
    pub notes: Vec<String>,
    pub aggregate: Aggregates,
    pub by_rank: Vec<RankRow>,
    pub records: Vec<TripletRecord>,
}

impl EvalReport {
    pub fn from_records(
        method: Method,
        config: &EvalConfig,
        records: Vec<TripletRecord>,
    ) -> Result<Self> {
        let aggregate = Aggregates::from_records(&records)?;
        let mut groups: BTreeMap<usize, Vec<&TripletRecord>> = BTreeMap::new();
        for r in &records {
            if let Some(rank) = r.counter_rank {
                groups.entry(rank).or_default().push(r);
            }
        }
        let by_rank = groups
            .into_iter()
            .map(|(rank, rs)| {
                Ok(RankRow {
                    rank,
                    aggregate: Aggregates::from_records(rs)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalReport {
            method,
            beam_width: config.edit.beam_width,
            masker: config.masker,
            notes: NOTES.iter().map(|s| s.to_string()).collect(),
            aggregate,
            by_rank,
            records,
        })
    }
}

fn run_method(
    method: Method,
    triplet: &Triplet,
    ctx: &EvalContext<'_>,
    config: &EvalConfig,
) -> Result<EditResult> {
    match method {
        Method::Cfe2 => {
            let scores = importance(
                config.masker,
                &triplet.query,
                &triplet.doc,
                ctx.embedder,
                ctx.search,
            )?;
            edit(
                triplet,
                ctx.search,
                &scores,
                ctx.predictor,
                ctx.perplexity,
                &config.edit,
            )
        }
        Method::MaskOnly => {
            let scores = importance(
                config.masker,
                &triplet.query,
                &triplet.doc,
                ctx.embedder,
                ctx.search,
            )?;
            baseline_mask_only(triplet, &scores, ctx.search, config.edit.max_masks)
        }
        Method::MaxFlip => {
            baseline_max_flip(triplet, ctx.index.vocab(), ctx.search, ctx.perplexity)
        }
    }
}

fn score_one(
    id: usize,
    triplet: &Triplet,
    method: Method,
    ctx: &EvalContext<'_>,
    config: &EvalConfig,
) -> Result<(TripletRecord, EditResult)> {
    let started = Instant::now();
    let mut result = run_method(method, triplet, ctx, config)?;
    result.elapsed_secs = if config.record_timing {
        started.elapsed().as_secs_f64()
    } else {
        0.0
    };
    let vocab = ctx.index.vocab();
    let mut flags = Vec::new();
    let (cos_sim, bertscore, fluency) = match &result.outcome {
        Some(qp) => {
            let cos = cos_sim_metric(&triplet.query, qp, ctx.index);
            if cos.degenerate {
                flags.push("cos_sim_zero_vector".to_string());
            }
            (
                Some(cos.value),
                Some(bertscore_f1(&triplet.query, qp, ctx.embedder)?),
                Some(fluency_metric(&triplet.query, qp, ctx.perplexity)?),
            )
        }
        None => (None, None, None),
    };
    let record = TripletRecord {
        triplet_id: id,
        query: vocab.render(&triplet.query),
        doc_id: triplet.doc.id.clone(),
        counter_doc_id: triplet.counter.id.clone(),
        counter_rank: triplet.counter_rank,
        q_prime: result.outcome.as_ref().map(|q| vocab.render(q)),
        flipped: result.outcome.is_some(),
        masks_used: result.masks_used,
        cos_sim,
        bertscore_f1: bertscore,
        fluency,
        elapsed_secs: result.elapsed_secs,
        flags,
    };
    Ok((record, result))
}

/// Runs `method` over every triplet and also returns the raw edit results
/// (with traces), in triplet order.
pub fn evaluate_with_results(
    dataset: &[Triplet],
    method: Method,
    ctx: &EvalContext<'_>,
    config: &EvalConfig,
) -> Result<(EvalReport, Vec<EditResult>)> {
    if dataset.is_empty() {
        return Err(Error::NoRecords);
    }
    let outputs = map_indexed(dataset, config.workers, |i, t| {
        score_one(i, t, method, ctx, config)
    })?;
    let (records, results): (Vec<_>, Vec<_>) = outputs
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok((EvalReport::from_records(method, config, records)?, results))
}

pub fn evaluate(
    dataset: &[Triplet],
    method: Method,
    ctx: &EvalContext<'_>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    evaluate_with_results(dataset, method, ctx, config).map(|(r, _)| r)
}

/// One CFE2 report per beam width.
pub fn beam_sweep(
    dataset: &[Triplet],
    sizes: &[usize],
    ctx: &EvalContext<'_>,
    config: &EvalConfig,
) -> Result<Vec<EvalReport>> {
    if sizes.is_empty() {
        return Err(Error::invalid("sizes", "at least one beam size required"));
    }
    if sizes.contains(&0) {
        return Err(Error::invalid("sizes", "beam sizes must be >= 1"));
    }
    sizes
        .iter()
        .map(|&b| {
            let mut cfg = *config;
            cfg.edit.beam_width = b;
            evaluate(dataset, Method::Cfe2, ctx, &cfg)
        })
        .collect()
}

pub fn render_json(reports: &[EvalReport]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(reports)?;
    s.push('\n');
    Ok(s)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

/// Metrics x methods table, followed by one per-rank table per method.
pub fn render_markdown(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let header = |r: &EvalReport| format!("{} (b={})", r.method, r.beam_width);
    out.push_str("| Metric |");
    for r in reports {
        let _ = write!(out, " {} |", header(r));
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(reports.len()));
    out.push('\n');
    type Row = (&'static str, fn(&Aggregates) -> String);
    let rows: [Row; 7] = [
        ("Flip Rate", |a| format!("{:.4}", a.flip_rate)),
        ("CosSim", |a| fmt_opt(a.mean_cos_sim)),
        ("BERTScore-F1", |a| fmt_opt(a.mean_bertscore_f1)),
        ("Fluency", |a| fmt_opt(a.mean_fluency)),
        ("Runtime (s/edit)", |a| {
            format!("{:.4}", a.mean_runtime_secs)
        }),
        ("Null edits", |a| a.nulls.to_string()),
        ("Triplets", |a| a.triplets.to_string()),
    ];
    for (name, f) in rows {
        let _ = write!(out, "| {name} |");
        for r in reports {
            let _ = write!(out, " {} |", f(&r.aggregate));
        }
        out.push('\n');
    }
    for r in reports.iter().filter(|r| !r.by_rank.is_empty()) {
        let _ = write!(
            out,
            "\n### {}: effect of rank position\n\n| Rank | Triplets | Flip Rate | CosSim | BERTScore-F1 | Fluency | Runtime |\n|---:|---:|---:|---:|---:|---:|---:|\n",
            header(r)
        );
        for row in &r.by_rank {
            let a = &row.aggregate;
            let _ = writeln!(
                out,
                "| {} | {} | {:.4} | {} | {} | {} | {:.4} |",
                row.rank,
                a.triplets,
                a.flip_rate,
                fmt_opt(a.mean_cos_sim),
                fmt_opt(a.mean_bertscore_f1),
                fmt_opt(a.mean_fluency),
                a.mean_runtime_secs
            );
        }
    }
    if let Some(r) = reports.first() {
        out.push('\n');
        for note in &r.notes {
            let _ = writeln!(out, "- {note}");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::sample_index;
    use crate::corpus::RankedDoc;
    use crate::embed::load_embeddings;
    use crate::lm::NgramLm;
    use crate::text::build_vocabulary;

    fn ranking(scores: &[f64]) -> (Ranking, Corpus) {
        let records = (0..scores.len())
            .map(|i| (format!("d{i}"), format!("w{i} common")))
            .collect();
        let corpus = Corpus::from_records(records, 1).unwrap();
        let r = Ranking {
            query: vec![TokenId(3)],
            entries: scores
                .iter()
                .enumerate()
                .map(|(i, &s)| RankedDoc {
                    doc_id: format!("d{i}"),
                    score: s,
                })
                .collect(),
        };
        (r, corpus)
    }

    #[test]
    fn triplet_counts() {
        let (r, c) = ranking(&[5.0, 4.0, 3.0, 2.0, 1.0]);
        let t = build_triplets(&r, &c).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(
            t.iter()
                .map(|t| t.counter_rank.unwrap())
                .collect::<Vec<_>>(),
            [2, 3, 4, 5]
        );
        let (r, c) = ranking(&[5.0, 4.0]);
        assert_eq!(build_triplets(&r, &c).unwrap().len(), 1);
        let (r, c) = ranking(&[5.0, 4.0, 5.0, 2.0, 1.0]);
        let t = build_triplets(&r, &c).unwrap();
        assert_eq!(t.len(), 3);
        assert!(t.iter().all(|t| t.counter.id != "d2"));
        let (r, c) = ranking(&[5.0]);
        assert!(build_triplets(&r, &c).unwrap().is_empty());
    }

    fn rec(flipped: bool, cos: Option<f64>, rank: usize) -> TripletRecord {
        TripletRecord {
            triplet_id: 0,
            query: "q".into(),
            doc_id: "d".into(),
            counter_doc_id: "e".into(),
            counter_rank: Some(rank),
            q_prime: flipped.then(|| "x".to_string()),
            flipped,
            masks_used: 1,
            cos_sim: cos,
            bertscore_f1: cos,
            fluency: cos,
            elapsed_secs: 0.5,
            flags: Vec::new(),
        }
    }

    #[test]
    fn flip_rate_values() {
        let all: Vec<_> = (0..4).map(|_| rec(true, Some(1.0), 2)).collect();
        assert_eq!(flip_rate(&all).unwrap(), 1.0);
        let mut some = all.clone();
        some[3] = rec(false, None, 2);
        assert_eq!(flip_rate(&some).unwrap(), 0.75);
        assert!(matches!(flip_rate(&[]), Err(Error::NoRecords)));
    }

    #[test]
    fn all_null_report_has_empty_similarity() {
        let records: Vec<_> = (0..3).map(|i| rec(false, None, 2 + i)).collect();
        let r =
            EvalReport::from_records(Method::MaskOnly, &EvalConfig::default(), records).unwrap();
        assert_eq!(r.aggregate.flip_rate, 0.0);
        assert_eq!(r.aggregate.nulls, 3);
        assert_eq!(r.aggregate.mean_cos_sim, None);
        assert_eq!(r.by_rank.len(), 3);
        assert!(render_markdown(&[r]).contains("| CosSim | n/a |"));
    }

    #[test]
    fn method_parsing() {
        assert_eq!("cfe2".parse::<Method>().unwrap(), Method::Cfe2);
        assert_eq!("max_flip".parse::<Method>().unwrap(), Method::MaxFlip);
        assert!(matches!(
            "genex".parse::<Method>(),
            Err(Error::UnknownMethod(_))
        ));
    }

    #[test]
    fn bertscore_closed_forms() {
        let v = build_vocabulary(&[vec!["a", "b", "c"]], 1).unwrap();
        let t = load_embeddings("a 1 0\nb 0 1\nc 0.6 0.8\n".as_bytes(), &v).unwrap();
        let (a, b, c) = (v.id("a").unwrap(), v.id("b").unwrap(), v.id("c").unwrap());
        assert_eq!(bertscore_f1(&[a, b], &[a, b], &t).unwrap(), 1.0);
        assert!((bertscore_f1(&[a], &[b], &t).unwrap() - 0.5).abs() < 1e-15);
        // q=[a,b], q'=[a,c]. Rescaled similarities:
        //        a     c
        //   a    1     0.8
        //   b    0.5   0.9
        // P = (1 + 0.9)/2 = 0.95, R = (1 + 0.9)/2 = 0.95, F1 = 0.95.
        assert!((bertscore_f1(&[a, b], &[a, c], &t).unwrap() - 0.95).abs() < 1e-12);
    }

    #[test]
    fn fluency_identities() {
        let seqs = [vec![TokenId(3), TokenId(4)], vec![TokenId(4), TokenId(5)]];
        let lm = NgramLm::from_sequences(3, seqs.iter().map(Vec::as_slice), 2, 0.1).unwrap();
        let q = [TokenId(3), TokenId(4)];
        assert_eq!(fluency_metric(&q, &q, &lm).unwrap(), 1.0);
        // Unigram with equal counts is uniform: ratio 1 for any lengths.
        let uni_seqs: Vec<Vec<TokenId>> = (3..6).map(|i| vec![TokenId(i)]).collect();
        let uni = NgramLm::from_sequences(3, uni_seqs.iter().map(Vec::as_slice), 1, 0.1).unwrap();
        assert!((fluency_metric(&q, &[TokenId(5)], &uni).unwrap() - 1.0).abs() < 1e-12);
        // One-token substitution under the bigram (V=3, k=0.1):
        // ppl([3,4]) from P(3|BOS)=1.1/2.3, P(4|3)=1.1/1.3;
        // ppl([3,5]) from P(3|BOS)=1.1/2.3, P(5|3)=0.1/1.3.
        let p1 = (-((1.1f64 / 2.3).ln() + (1.1f64 / 1.3).ln()) / 2.0).exp();
        let p2 = (-((1.1f64 / 2.3).ln() + (0.1f64 / 1.3).ln()) / 2.0).exp();
        let f = fluency_metric(&q, &[TokenId(3), TokenId(5)], &lm).unwrap();
        assert!((f - p2 / p1).abs() < 1e-12);
    }

    #[test]
    fn cos_sim_on_sample() {
        let idx = sample_index();
        let c = idx.corpus();
        let q = c.encode_query("apple recipe");
        assert_eq!(cos_sim_metric(&q, &q, &idx).value, 1.0);
        assert_eq!(
            cos_sim_metric(&q, &c.encode_query("banana tree"), &idx).value,
            0.0
        );
        // idf(apple) = idf(recipe) = ln 1.6, idf(orchard) = ln(8/3).
        let (a, o) = (1.6f64.ln(), (8.0f64 / 3.0).ln());
        let expected = a * a / ((2.0 * a * a).sqrt() * (a * a + o * o).sqrt());
        let got = cos_sim_metric(&q, &c.encode_query("apple orchard"), &idx).value;
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn baselines_on_sample() {
        let idx = sample_index();
        let c = idx.corpus();
        let lm = crate::lm::train_ngram(c, 3, 0.1).unwrap();
        let q = c.encode_query("apple recipe");
        // d1 = "apple pie recipe", d2 = "apple tree orchard". Padding "recipe"
        // leaves "apple" which ties; padding both ties at 0: Null.
        let t = Triplet::new(
            q.clone(),
            c.doc("d1").unwrap().clone(),
            c.doc("d2").unwrap().clone(),
            &idx,
        )
        .unwrap();
        let s = crate::masker::occlusion_importance(&q, &t.doc, &idx).unwrap();
        let r = baseline_mask_only(&t, &s, &idx, None).unwrap();
        assert_eq!(r.outcome, None);
        assert_eq!(r.masks_used, 2);
        // max_flip: d2 has one sentence, "apple tree orchard", which flips.
        let r = baseline_max_flip(&t, c.vocab(), &idx, &lm).unwrap();
        assert_eq!(r.outcome, Some(c.encode_query("apple tree orchard")));
    }
}
