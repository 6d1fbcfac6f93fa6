mod common;

use common::{bm25_by_hand, sample_index};
use qflip_core::corpus::ingest_corpus;
use qflip_core::eval::cos_sim_metric;
use qflip_core::Error;

#[test]
fn sample_corpus_shape() {
    let idx = sample_index();
    assert_eq!(idx.corpus().len(), 3);
    assert_eq!(idx.corpus().stats().avgdl, 3.0);
    assert_eq!(idx.vocab().usable_len(), 7);
}

#[test]
fn golden_scores() {
    let idx = sample_index();
    let c = idx.corpus();
    let q = c.encode_query("apple recipe");
    // Every document has length 3 = avgdl, both terms have df = 2 of N = 3:
    // idf = ln(1 + 1.5 / 2.5) = ln 1.6 and the tf factor is 2.2 / 2.2 = 1.
    let one = bm25_by_hand(3.0, 3.0, 2.0, 1.0, 3.0);
    assert!((one - 1.6f64.ln()).abs() < 1e-15);
    let d1 = idx.bm25_score(&q, c.doc("d1").unwrap());
    assert!((d1 - 2.0 * 1.6f64.ln()).abs() < 1e-9);
    assert!((d1 - 0.940_007_258_491_471_3).abs() < 1e-9);
    assert!((idx.bm25_score(&q, c.doc("d2").unwrap()) - one).abs() < 1e-9);
    assert!((idx.bm25_score(&q, c.doc("d3").unwrap()) - one).abs() < 1e-9);
    assert_eq!(
        idx.bm25_score(&c.encode_query("xylophone"), c.doc("d1").unwrap()),
        0.0
    );
}

#[test]
fn golden_ranking() {
    let idx = sample_index();
    let q = idx.corpus().encode_query("apple recipe");
    let r = idx.search(&q, 3).unwrap();
    let ids: Vec<&str> = r.entries.iter().map(|e| e.doc_id.as_str()).collect();
    // d2 and d3 tie at ln 1.6; ascending id decides.
    assert_eq!(ids, ["d1", "d2", "d3"]);
    assert_eq!(r.entries[1].score, r.entries[2].score);
    assert_eq!(idx.search(&q, 1).unwrap().entries.len(), 1);
    assert_eq!(idx.search(&q, 10).unwrap().entries.len(), 3);
    for e in &r.entries {
        assert_eq!(
            e.score,
            idx.bm25_score(&q, idx.corpus().doc(&e.doc_id).unwrap())
        );
    }
}

#[test]
fn unequal_lengths_by_hand() {
    let src = r#"{"id":"a","text":"x y y z"}
{"id":"b","text":"x"}
{"id":"c","text":"w w"}
"#;
    let c = ingest_corpus(src.as_bytes(), 1).unwrap();
    let idx = qflip_core::SearchIndex::build(c, Default::default()).unwrap();
    let avgdl = 7.0 / 3.0;
    let q = idx.corpus().encode_query("x y");
    let a = bm25_by_hand(3.0, avgdl, 2.0, 1.0, 4.0) + bm25_by_hand(3.0, avgdl, 1.0, 2.0, 4.0);
    let b = bm25_by_hand(3.0, avgdl, 2.0, 1.0, 1.0);
    assert!((idx.bm25_score(&q, idx.corpus().doc("a").unwrap()) - a).abs() < 1e-12);
    assert!((idx.bm25_score(&q, idx.corpus().doc("b").unwrap()) - b).abs() < 1e-12);
}

#[test]
fn cosine_by_hand() {
    let idx = sample_index();
    let c = idx.corpus();
    let a = 1.6f64.ln();
    let o = (1.0 + 2.5f64 / 1.5).ln();
    let expected = a * a / ((a * a + a * a).sqrt() * (a * a + o * o).sqrt());
    let got = cos_sim_metric(
        &c.encode_query("apple recipe"),
        &c.encode_query("apple orchard"),
        &idx,
    );
    assert!((got.value - expected).abs() < 1e-12);
    assert!(!got.degenerate);
    let zero = cos_sim_metric(&c.encode_query("xylophone"), &c.encode_query("apple"), &idx);
    assert_eq!(zero.value, 0.0);
    assert!(zero.degenerate);
}

#[test]
fn ingestion_errors() {
    let err = ingest_corpus(
        "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\"}\n".as_bytes(),
        1,
    )
    .unwrap_err();
    assert_eq!(err.to_string(), "missing field: text @ line 2");
    assert!(matches!(
        ingest_corpus("".as_bytes(), 1),
        Err(Error::EmptyCorpus)
    ));
    let dup = "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n";
    assert!(matches!(
        ingest_corpus(dup.as_bytes(), 1),
        Err(Error::DuplicateId(_))
    ));
}
