#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use qflip_core::embed::{train_embeddings, EmbeddingTable};
use qflip_core::eval::{build_dataset, EvalContext};
use qflip_core::lm::{train_ngram, DocConditionedPredictor, NgramLm};
use qflip_core::synth::{generate, SynthConfig};
use qflip_core::{Bm25Params, Corpus, SearchIndex, TokenId, Triplet};

pub struct Synthetic {
    pub index: SearchIndex,
    pub table: EmbeddingTable,
    pub lm: NgramLm,
    pub queries: Vec<Vec<TokenId>>,
}

impl Synthetic {
    pub fn build(seed: u64) -> Self {
        let data = generate(&SynthConfig {
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let corpus = Corpus::from_records(data.records(), 1).unwrap();
        let table = train_embeddings(&corpus, 64, 5, seed).unwrap();
        let lm = train_ngram(&corpus, 3, 0.1).unwrap();
        let queries = data
            .queries
            .iter()
            .map(|q| corpus.encode_query(q))
            .collect();
        let index = SearchIndex::build(corpus, Bm25Params::default()).unwrap();
        Synthetic {
            index,
            table,
            lm,
            queries,
        }
    }

    pub fn predictor(&self) -> DocConditionedPredictor<'_> {
        DocConditionedPredictor::new(&self.lm, 0.5).unwrap()
    }

    pub fn ctx<'a>(&'a self, predictor: &'a DocConditionedPredictor<'a>) -> EvalContext<'a> {
        EvalContext {
            index: &self.index,
            search: &self.index,
            embedder: &self.table,
            predictor,
            perplexity: &self.lm,
        }
    }

    pub fn dataset(&self) -> Vec<Triplet> {
        build_dataset(&self.index, &self.queries, 5).unwrap()
    }
}

pub type Handler = dyn Fn(&str, &str) -> (u16, String) + Send + Sync;

/// HTTP server on an ephemeral port answering every request with `handler`.
pub struct StubServer {
    pub url: String,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(handler: Arc<Handler>) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let port = match server.server_addr() {
            tiny_http::ListenAddr::IP(SocketAddr::V4(a)) => a.port(),
            other => panic!("unexpected listen address {other:?}"),
        };
        let stop = Arc::new(AtomicBool::new(false));
        let threads = (0..8)
            .map(|_| {
                let server = Arc::clone(&server);
                let stop = Arc::clone(&stop);
                let handler = Arc::clone(&handler);
                std::thread::spawn(move || {
                    while !stop.load(Ordering::Relaxed) {
                        let Ok(Some(mut req)) = server.recv_timeout(Duration::from_millis(20))
                        else {
                            continue;
                        };
                        let mut body = String::new();
                        req.as_reader().read_to_string(&mut body).unwrap();
                        let (status, out) = handler(req.url(), &body);
                        let resp = tiny_http::Response::from_string(out)
                            .with_status_code(status)
                            .with_header(
                                "content-type: application/json"
                                    .parse::<tiny_http::Header>()
                                    .unwrap(),
                            );
                        let _ = req.respond(resp);
                    }
                })
            })
            .collect();
        StubServer {
            url: format!("http://127.0.0.1:{port}"),
            stop,
            threads,
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

pub const SAMPLE: &str = r#"{"id":"d1","text":"apple pie recipe"}
{"id":"d2","text":"apple tree orchard"}
{"id":"d3","text":"banana bread recipe"}
"#;

pub fn sample_index() -> SearchIndex {
    let corpus = qflip_core::corpus::ingest_corpus(SAMPLE.as_bytes(), 1).unwrap();
    SearchIndex::build(corpus, Bm25Params::default()).unwrap()
}

/// BM25 with the default parameters evaluated straight from the formula.
pub fn bm25_by_hand(n_docs: f64, avgdl: f64, df: f64, tf: f64, doc_len: f64) -> f64 {
    let (k1, b) = (1.2, 0.75);
    let idf = (1.0 + (n_docs - df + 0.5) / (df + 0.5)).ln();
    idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc_len / avgdl))
}

pub mod beam_oracle {
    use qflip_core::backend::SearchModel;
    use qflip_core::corpus::Document;
    use qflip_core::editor::{edit, EditConfig};
    use qflip_core::lm::{slot_distribution, DocConditionedPredictor, NgramLm};
    use qflip_core::masker::ImportanceScores;
    use qflip_core::{Result, TokenId, Triplet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Scores every pair equally, so no candidate ever flips and the editor
    /// records a trace for every mask count.
    pub struct NeverFlips;

    impl SearchModel for NeverFlips {
        fn rel(&self, _: &[TokenId], _: &Document) -> Result<f64> {
            Ok(0.0)
        }
    }

    pub struct Case {
        pub vocab: usize,
        pub masks: usize,
        pub width: usize,
        /// `(tokens, log_prob)` for each mask count, editor first.
        pub editor: Vec<Vec<(Vec<TokenId>, f64)>>,
        pub oracle: Vec<Vec<(Vec<TokenId>, f64)>>,
    }

    fn doc(tokens: Vec<TokenId>) -> Document {
        Document {
            id: String::new(),
            text: String::new(),
            tokens,
        }
    }

    /// All `V^|slots|` fillings, scored as the running sum of per-slot log
    /// probabilities, sorted by score then token sequence.
    fn enumerate(
        query: &[TokenId],
        slots: &[usize],
        counter: &[TokenId],
        lm: &NgramLm,
        lambda: f64,
        width: usize,
    ) -> Vec<(Vec<TokenId>, f64)> {
        let mut masked = query.to_vec();
        for &p in slots {
            masked[p] = TokenId::MASK;
        }
        let mut partial = vec![(masked, 0.0f64)];
        for &p in slots {
            let mut next = Vec::new();
            for (cand, lp) in &partial {
                let dist = slot_distribution(cand, counter, p, lm, lambda).unwrap();
                for (i, prob) in dist.iter().enumerate() {
                    let mut c = cand.clone();
                    c[p] = TokenId(i as u32 + TokenId::FIRST_USABLE);
                    next.push((c, lp + prob.ln()));
                }
            }
            partial = next;
        }
        partial.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        partial.truncate(width);
        partial
    }

    pub fn random_case(seed: u64) -> Case {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = rng.random_range(2..=8usize);
        let tok =
            |rng: &mut ChaCha8Rng| TokenId(rng.random_range(0..v) as u32 + TokenId::FIRST_USABLE);
        let seqs: Vec<Vec<TokenId>> = (0..rng.random_range(2..6))
            .map(|_| (0..rng.random_range(1..7)).map(|_| tok(&mut rng)).collect())
            .collect();
        let order = rng.random_range(1..=3);
        let k = [0.1, 0.5, 1.0][rng.random_range(0..3)];
        let lm = NgramLm::from_sequences(v, seqs.iter().map(Vec::as_slice), order, k).unwrap();
        let lambda = rng.random_range(0.0..0.9);
        let query: Vec<TokenId> = (0..rng.random_range(2..=4))
            .map(|_| tok(&mut rng))
            .collect();
        let counter: Vec<TokenId> = (0..rng.random_range(1..6)).map(|_| tok(&mut rng)).collect();
        let scores: Vec<f64> = query
            .iter()
            .map(|_| rng.random_range(0..3) as f64)
            .collect();
        let width = v * v + rng.random_range(0..3);
        let masks = 2;

        let scores = ImportanceScores::new(query.clone(), scores).unwrap();
        let t = Triplet::with_scores(
            query.clone(),
            doc(Vec::new()),
            doc(counter.clone()),
            1.0,
            0.0,
            None,
        )
        .unwrap();
        let predictor = DocConditionedPredictor::new(&lm, lambda).unwrap();
        let config = EditConfig {
            beam_width: width,
            max_masks: Some(masks),
        };
        let result = edit(&t, &NeverFlips, &scores, &predictor, &lm, &config).unwrap();
        assert!(result.outcome.is_none());
        let editor = result
            .trace
            .iter()
            .map(|it| {
                it.beam
                    .iter()
                    .map(|c| (c.tokens.clone(), c.log_prob))
                    .collect()
            })
            .collect();
        let oracle = (1..=masks)
            .map(|i| {
                enumerate(
                    &query,
                    &scores.top_positions(i),
                    &counter,
                    &lm,
                    lambda,
                    width,
                )
            })
            .collect();
        Case {
            vocab: v,
            masks,
            width,
            editor,
            oracle,
        }
    }
}
