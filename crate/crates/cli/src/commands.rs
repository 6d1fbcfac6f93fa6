use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use qflip_core::backend::{Embedder, PerplexityScorer, Predictor, SearchModel};
use qflip_core::corpus::ingest_corpus;
use qflip_core::editor::{edit as run_edit, EditRecord};
use qflip_core::embed::{train_embeddings, EmbeddingTable};
use qflip_core::eval::{
    beam_sweep, build_dataset, evaluate, render_json, render_markdown, EvalContext, Method,
};
use qflip_core::lm::{train_ngram, DocConditionedPredictor, NgramLm};
use qflip_core::masker::importance;
use qflip_core::remote::{RemoteEmbedder, RemotePerplexity, RemotePredictor, RemoteSearch};
use qflip_core::store;
use qflip_core::synth::{generate, SynthConfig};
use qflip_core::{Bm25Params, SearchIndex, Triplet, Vocabulary};
use serde::Deserialize;

use crate::config::RunConfig;
use crate::CliError;

pub enum TripletSource {
    Single(String, String, String),
    File(PathBuf),
}

pub enum DatasetSource {
    Queries(PathBuf),
    Triplets(PathBuf),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TripletLine {
    query: String,
    doc_id: String,
    counter_doc_id: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.to_path_buf(), e)
}

fn read_corpus_bytes(cfg: &RunConfig) -> Result<Vec<u8>, CliError> {
    let p = &cfg.paths.corpus;
    fs::read(p).map_err(|e| {
        CliError::Input(format!(
            "corpus {}: {e}; set paths.corpus or --corpus",
            p.display()
        ))
    })
}

fn bm25(cfg: &RunConfig) -> Bm25Params {
    Bm25Params {
        k1: cfg.search.k1,
        b: cfg.search.b,
    }
}

pub fn index(cfg: &RunConfig) -> Result<(), CliError> {
    let bytes = read_corpus_bytes(cfg)?;
    let hash = cfg.artifact_hash(&bytes);
    let corpus = ingest_corpus(bytes.as_slice(), cfg.index.min_count)?;
    info!("ingested {} documents", corpus.len());
    let table = train_embeddings(&corpus, cfg.embed.dim, cfg.embed.window, cfg.seed)?;
    let lm = train_ngram(&corpus, cfg.lm.order, cfg.lm.smoothing)?;
    let index = SearchIndex::build(corpus, bm25(cfg))?;
    store::save_index(&cfg.paths.index, &index, &hash)?;
    store::save_embeddings(&cfg.paths.embeddings, &table, &hash)?;
    store::save_lm(&cfg.paths.lm, &lm, &hash)?;
    println!(
        "indexed {} documents, {} tokens in vocabulary, config {}",
        index.corpus().len(),
        index.vocab().usable_len(),
        &hash[..12]
    );
    Ok(())
}

struct Artifacts {
    index: SearchIndex,
    table: EmbeddingTable,
    lm: NgramLm,
}

fn load_index(cfg: &RunConfig, hash: &str) -> Result<SearchIndex, CliError> {
    Ok(store::load_index(&cfg.paths.index, bm25(cfg), Some(hash))?)
}

fn load_all(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let hash = cfg.artifact_hash(&read_corpus_bytes(cfg)?);
    Ok(Artifacts {
        index: load_index(cfg, &hash)?,
        table: store::load_embedding_table(&cfg.paths.embeddings, Some(&hash))?,
        lm: store::load_lm(&cfg.paths.lm, Some(&hash))?,
    })
}

/// Remote clients for the roles that have an endpoint configured.
struct Remotes {
    search: Option<RemoteSearch>,
    embed: Option<RemoteEmbedder>,
    predict: Option<RemotePredictor>,
    perplexity: Option<RemotePerplexity>,
}

impl Remotes {
    fn connect(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Self, CliError> {
        let b = &cfg.backends;
        Ok(Remotes {
            search: b
                .search
                .clone()
                .map(|e| RemoteSearch::new(e, vocab.clone()))
                .transpose()?,
            embed: b
                .embed
                .clone()
                .map(|e| RemoteEmbedder::new(e, vocab.clone()))
                .transpose()?,
            predict: b
                .predict
                .clone()
                .map(|e| RemotePredictor::new(e, vocab.clone()))
                .transpose()?,
            perplexity: b
                .perplexity
                .clone()
                .map(|e| RemotePerplexity::new(e, vocab.clone()))
                .transpose()?,
        })
    }

    fn ctx<'a>(
        &'a self,
        a: &'a Artifacts,
        predictor: &'a DocConditionedPredictor<'a>,
    ) -> EvalContext<'a> {
        EvalContext {
            index: &a.index,
            search: self
                .search
                .as_ref()
                .map_or(&a.index as &dyn SearchModel, |r| r),
            embedder: self.embed.as_ref().map_or(&a.table as &dyn Embedder, |r| r),
            predictor: self
                .predict
                .as_ref()
                .map_or(predictor as &dyn Predictor, |r| r),
            perplexity: self
                .perplexity
                .as_ref()
                .map_or(&a.lm as &dyn PerplexityScorer, |r| r),
        }
    }
}

pub fn search(cfg: &RunConfig, query: &str) -> Result<(), CliError> {
    let hash = cfg.artifact_hash(&read_corpus_bytes(cfg)?);
    let index = load_index(cfg, &hash)?;
    let ranking = index.search(&index.corpus().encode_query(query), cfg.search.top_k)?;
    for (rank, e) in ranking.entries.iter().enumerate() {
        println!("{}\t{}\t{}", rank + 1, e.doc_id, e.score);
    }
    Ok(())
}

fn read_triplets(
    path: &Path,
    index: &SearchIndex,
    search: &dyn SearchModel,
) -> Result<Vec<Triplet>, CliError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| CliError::Input(format!("{} line {}: {msg}", path.display(), i + 1));
        let t: TripletLine = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        out.push(
            make_triplet(index, search, &t.query, &t.doc_id, &t.counter_doc_id)
                .map_err(|e| at(e.to_string()))?,
        );
    }
    Ok(out)
}

fn make_triplet(
    index: &SearchIndex,
    search: &dyn SearchModel,
    query: &str,
    doc_id: &str,
    counter_id: &str,
) -> Result<Triplet, CliError> {
    let c = index.corpus();
    Ok(Triplet::new(
        c.encode_query(query),
        c.doc(doc_id)?.clone(),
        c.doc(counter_id)?.clone(),
        search,
    )?)
}

pub fn edit(cfg: &RunConfig, source: TripletSource, out: Option<&Path>) -> Result<(), CliError> {
    let a = load_all(cfg)?;
    let remotes = Remotes::connect(cfg, a.index.vocab())?;
    let builtin = DocConditionedPredictor::new(&a.lm, cfg.lm.lambda)?;
    let ctx = remotes.ctx(&a, &builtin);
    let triplets = match source {
        TripletSource::Single(q, d, c) => vec![make_triplet(&a.index, ctx.search, &q, &d, &c)?],
        TripletSource::File(p) => read_triplets(&p, &a.index, ctx.search)?,
    };
    let eval = cfg.eval_config();
    let sink_path = out.unwrap_or(Path::new("<stdout>"));
    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(io_err(p))?)),
        None => Box::new(std::io::stdout().lock()),
    };
    for t in &triplets {
        let scores = importance(eval.masker, &t.query, &t.doc, ctx.embedder, ctx.search)?;
        let mut result = run_edit(
            t,
            ctx.search,
            &scores,
            ctx.predictor,
            ctx.perplexity,
            &eval.edit,
        )?;
        if !eval.record_timing {
            result.elapsed_secs = 0.0;
        }
        let record = EditRecord::new(t, &result, a.index.vocab());
        let line = serde_json::to_string(&record).map_err(|e| CliError::Input(e.to_string()))?;
        writeln!(sink, "{line}").map_err(io_err(sink_path))?;
    }
    sink.flush().map_err(io_err(sink_path))?;
    Ok(())
}

fn dataset(
    cfg: &RunConfig,
    source: &DatasetSource,
    a: &Artifacts,
    search: &dyn SearchModel,
) -> Result<Vec<Triplet>, CliError> {
    let triplets = match source {
        DatasetSource::Triplets(p) => read_triplets(p, &a.index, search)?,
        DatasetSource::Queries(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            let queries: Vec<_> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| a.index.corpus().encode_query(l))
                .collect();
            build_dataset(&a.index, &queries, cfg.search.top_k)?
        }
    };
    if triplets.is_empty() {
        return Err(CliError::Input("no valid triplets in the input".into()));
    }
    Ok(triplets)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

pub fn eval(
    cfg: &RunConfig,
    methods: &[Method],
    source: &DatasetSource,
    name: &str,
) -> Result<(), CliError> {
    let a = load_all(cfg)?;
    let remotes = Remotes::connect(cfg, a.index.vocab())?;
    let builtin = DocConditionedPredictor::new(&a.lm, cfg.lm.lambda)?;
    let ctx = remotes.ctx(&a, &builtin);
    let data = dataset(cfg, source, &a, ctx.search)?;
    let config = cfg.eval_config();
    let reports = methods
        .iter()
        .map(|&m| evaluate(&data, m, &ctx, &config))
        .collect::<Result<Vec<_>, _>>()?;
    let json = cfg.paths.output.join(format!("{name}.json"));
    let md = cfg.paths.output.join(format!("{name}.md"));
    write_file(&json, &render_json(&reports)?)?;
    let table = render_markdown(&reports);
    write_file(&md, &table)?;
    print!("{table}");
    println!("\nwrote {} and {}", json.display(), md.display());
    Ok(())
}

pub fn sweep(
    cfg: &RunConfig,
    sizes: &[usize],
    source: &DatasetSource,
    name: &str,
) -> Result<(), CliError> {
    let a = load_all(cfg)?;
    let remotes = Remotes::connect(cfg, a.index.vocab())?;
    let builtin = DocConditionedPredictor::new(&a.lm, cfg.lm.lambda)?;
    let ctx = remotes.ctx(&a, &builtin);
    let data = dataset(cfg, source, &a, ctx.search)?;
    let reports = beam_sweep(&data, sizes, &ctx, &cfg.eval_config())?;
    for r in &reports {
        let path = cfg
            .paths
            .output
            .join(format!("{name}-b{}.json", r.beam_width));
        write_file(&path, &render_json(std::slice::from_ref(r))?)?;
        println!("wrote {}", path.display());
    }
    let md = cfg.paths.output.join(format!("{name}.md"));
    let table = render_markdown(&reports);
    write_file(&md, &table)?;
    print!("{table}");
    println!("\nwrote {}", md.display());
    Ok(())
}

pub fn synth(
    cfg: &RunConfig,
    out: &Path,
    queries_out: &Path,
    topics: usize,
    docs_per_topic: usize,
    queries_per_topic: usize,
) -> Result<(), CliError> {
    let data = generate(&SynthConfig {
        topics,
        docs_per_topic,
        queries_per_topic,
        seed: cfg.seed,
        ..SynthConfig::default()
    })?;
    write_file(out, &data.to_jsonl()?)?;
    let mut queries = data.queries.join("\n");
    queries.push('\n');
    write_file(queries_out, &queries)?;
    println!(
        "wrote {} documents to {} and {} queries to {}",
        data.documents.len(),
        out.display(),
        data.queries.len(),
        queries_out.display()
    );
    Ok(())
}
