//! Seeded synthetic corpus and query set for evaluation runs.
//!
//! Documents are topical: each topic owns a block of pseudo-words drawn with
//! Zipf-like weights, mixed with shared function words and general
//! vocabulary. Queries are short bags of a topic's frequent words, so every
//! query has several competing relevant documents.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const FUNCTION_WORDS: [&str; 12] = [
    "the", "a", "of", "and", "to", "in", "is", "for", "with", "on", "as", "by",
];
const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st",
];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];
const CODAS: [&str; 6] = ["", "n", "r", "s", "l", "k"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub topics: usize,
    pub docs_per_topic: usize,
    pub queries_per_topic: usize,
    pub topic_words: usize,
    pub general_words: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            topics: 20,
            docs_per_topic: 12,
            queries_per_topic: 3,
            topic_words: 16,
            general_words: 60,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDoc {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthData {
    pub documents: Vec<SynthDoc>,
    pub queries: Vec<String>,
}

impl SynthData {
    pub fn records(&self) -> Vec<(String, String)> {
        self.documents
            .iter()
            .map(|d| (d.id.clone(), d.text.clone()))
            .collect()
    }

    /// One JSON object per line, as accepted by corpus ingestion.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for d in &self.documents {
            out.push_str(&serde_json::to_string(d)?);
            out.push('\n');
        }
        Ok(out)
    }
}

fn pseudo_words(rng: &mut ChaCha8Rng, n: usize, taken: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).unwrap());
            w.push_str(VOWELS.choose(rng).unwrap());
        }
        w.push_str(CODAS.choose(rng).unwrap());
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Index drawn with weight `1 / (i + 1)`.
fn zipf(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let total: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
    let mut x = rng.random::<f64>() * total;
    for i in 0..n {
        x -= 1.0 / (i + 1) as f64;
        if x <= 0.0 {
            return i;
        }
    }
    n - 1
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    if config.topics < 2 || config.docs_per_topic < 2 {
        return Err(Error::invalid(
            "synth",
            "need at least 2 topics with 2 documents each",
        ));
    }
    if config.topic_words < 4 || config.general_words < 1 {
        return Err(Error::invalid(
            "synth",
            "need at least 4 topic words and 1 general word",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut taken: HashSet<String> = FUNCTION_WORDS.iter().map(|s| s.to_string()).collect();
    let general = pseudo_words(&mut rng, config.general_words, &mut taken);
    let topics: Vec<Vec<String>> = (0..config.topics)
        .map(|_| pseudo_words(&mut rng, config.topic_words, &mut taken))
        .collect();

    let mut documents = Vec::with_capacity(config.topics * config.docs_per_topic);
    for (t, words) in topics.iter().enumerate() {
        for j in 0..config.docs_per_topic {
            // Topical focus varies per document so rankings have depth.
            let focus = rng.random_range(0.2..0.6);
            let sentences = rng.random_range(2..=5);
            let mut text = Vec::with_capacity(sentences);
            for _ in 0..sentences {
                let len = rng.random_range(5..=11);
                let mut s: Vec<&str> = Vec::with_capacity(len);
                for _ in 0..len {
                    let roll: f64 = rng.random();
                    let w = if roll < 0.3 {
                        FUNCTION_WORDS.choose(&mut rng).unwrap()
                    } else if roll < 0.3 + focus {
                        words[zipf(&mut rng, words.len())].as_str()
                    } else if roll < 0.95 {
                        general[zipf(&mut rng, general.len())].as_str()
                    } else {
                        let other = &topics[rng.random_range(0..topics.len())];
                        other[zipf(&mut rng, other.len())].as_str()
                    };
                    s.push(w);
                }
                let mut sentence = s.join(" ");
                sentence.push('.');
                text.push(sentence);
            }
            documents.push(SynthDoc {
                id: format!("t{t:02}-d{j:02}"),
                text: text.join(" "),
            });
        }
    }

    let mut queries = Vec::with_capacity(config.topics * config.queries_per_topic);
    for words in &topics {
        for _ in 0..config.queries_per_topic {
            let len = rng.random_range(2..=5);
            let mut q: Vec<&str> = Vec::with_capacity(len);
            while q.len() < len {
                let w = if rng.random::<f64>() < 0.8 {
                    words[zipf(&mut rng, words.len() / 2)].as_str()
                } else {
                    general[zipf(&mut rng, general.len())].as_str()
                };
                if !q.contains(&w) {
                    q.push(w);
                }
            }
            queries.push(q.join(" "));
        }
    }
    Ok(SynthData { documents, queries })
}
