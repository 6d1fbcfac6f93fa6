//! `qflip`: build artifacts, search, edit and evaluate from the command line.
//!
//! Settings come from built-in defaults, then the `--config` TOML file, then
//! flags; later sources win.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] qflip_core::Error),
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("config: {0}")]
    ConfigParse(String),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Parser)]
#[command(
    name = "qflip",
    version,
    about = "Counterfactual query edits that flip a pair of search results"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Default, Args)]
struct Overrides {
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long = "index-path", global = true)]
    index: Option<PathBuf>,
    #[arg(long = "embeddings-path", global = true)]
    embeddings: Option<PathBuf>,
    #[arg(long = "lm-path", global = true)]
    lm: Option<PathBuf>,
    #[arg(long = "output-dir", global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    min_count: Option<usize>,
    #[arg(long, global = true)]
    k1: Option<f64>,
    #[arg(long = "bm25-b", global = true)]
    bm25_b: Option<f64>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    window: Option<usize>,
    #[arg(long, global = true)]
    order: Option<usize>,
    #[arg(long, global = true)]
    smoothing: Option<f64>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// `maxsim` or `occlusion`.
    #[arg(long, global = true)]
    masker: Option<String>,
    #[arg(long, global = true)]
    beam: Option<usize>,
    #[arg(long, global = true)]
    max_masks: Option<usize>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Record runtimes as 0 so reports are byte-reproducible.
    #[arg(long, global = true)]
    no_timing: bool,
}

impl Overrides {
    fn apply(&self, c: &mut RunConfig) -> Result<(), CliError> {
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(self.seed => c.seed);
        set!(self.corpus => c.paths.corpus);
        set!(self.index => c.paths.index);
        set!(self.embeddings => c.paths.embeddings);
        set!(self.lm => c.paths.lm);
        set!(self.output => c.paths.output);
        set!(self.min_count => c.index.min_count);
        set!(self.k1 => c.search.k1);
        set!(self.bm25_b => c.search.b);
        set!(self.top_k => c.search.top_k);
        set!(self.dim => c.embed.dim);
        set!(self.window => c.embed.window);
        set!(self.order => c.lm.order);
        set!(self.smoothing => c.lm.smoothing);
        set!(self.lambda => c.lm.lambda);
        set!(self.beam => c.editor.beam);
        if let Some(m) = &self.masker {
            c.editor.masker = m.parse()?;
        }
        if self.max_masks.is_some() {
            c.editor.max_masks = self.max_masks;
        }
        if self.workers.is_some() {
            c.eval.workers = self.workers;
        }
        if self.no_timing {
            c.eval.record_timing = false;
        }
        Ok(())
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build index, embedding and language-model artifacts from the corpus.
    Index,
    /// Print the top-k ranking for a query.
    Search {
        #[arg(long)]
        query: String,
    },
    /// Edit one triplet, or every line of a triplets file.
    Edit {
        #[arg(long, required_unless_present = "triplets")]
        query: Option<String>,
        #[arg(long, requires = "query")]
        doc_id: Option<String>,
        #[arg(long, requires = "query")]
        counter_doc_id: Option<String>,
        /// JSON lines `{"query", "doc_id", "counter_doc_id"}`.
        #[arg(long, conflicts_with = "query")]
        triplets: Option<PathBuf>,
        /// Write JSON lines here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate methods and write JSON and markdown reports.
    Eval {
        #[arg(long, value_delimiter = ',', default_value = "cfe2,mask_only,max_flip")]
        methods: Vec<String>,
        #[command(flatten)]
        input: DatasetInput,
        /// Report file stem inside the output directory.
        #[arg(long, default_value = "eval")]
        name: String,
    },
    /// Evaluate CFE2 at several beam sizes; one report per size.
    SweepBeam {
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        sizes: Vec<usize>,
        #[command(flatten)]
        input: DatasetInput,
        #[arg(long, default_value = "sweep")]
        name: String,
    },
    /// Write a seeded synthetic corpus and query file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        queries_out: PathBuf,
        #[arg(long, default_value_t = 20)]
        topics: usize,
        #[arg(long, default_value_t = 12)]
        docs_per_topic: usize,
        #[arg(long, default_value_t = 3)]
        queries_per_topic: usize,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct DatasetInput {
    /// One query per line; triplets come from each query's top-k.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// JSON lines `{"query", "doc_id", "counter_doc_id"}`.
    #[arg(long)]
    triplets: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cli.overrides.apply(&mut cfg)?;
    cfg.validate()?;
    match cli.command {
        Command::Index => commands::index(&cfg),
        Command::Search { query } => commands::search(&cfg, &query),
        Command::Edit {
            query,
            doc_id,
            counter_doc_id,
            triplets,
            out,
        } => {
            let source = match (triplets, query, doc_id, counter_doc_id) {
                (Some(path), ..) => commands::TripletSource::File(path),
                (None, Some(q), Some(d), Some(c)) => commands::TripletSource::Single(q, d, c),
                _ => {
                    return Err(CliError::Input(
                        "edit needs --query, --doc-id and --counter-doc-id, or --triplets".into(),
                    ))
                }
            };
            commands::edit(&cfg, source, out.as_deref())
        }
        Command::Eval {
            methods,
            input,
            name,
        } => {
            let methods = methods
                .iter()
                .map(|m| m.parse())
                .collect::<Result<Vec<_>, _>>()?;
            commands::eval(&cfg, &methods, &input.into(), &name)
        }
        Command::SweepBeam { sizes, input, name } => {
            commands::sweep(&cfg, &sizes, &input.into(), &name)
        }
        Command::Synth {
            out,
            queries_out,
            topics,
            docs_per_topic,
            queries_per_topic,
        } => commands::synth(
            &cfg,
            &out,
            &queries_out,
            topics,
            docs_per_topic,
            queries_per_topic,
        ),
        Command::ShowConfig => {
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}

impl From<DatasetInput> for commands::DatasetSource {
    fn from(d: DatasetInput) -> Self {
        match (d.queries, d.triplets) {
            (Some(q), _) => commands::DatasetSource::Queries(q),
            (None, Some(t)) => commands::DatasetSource::Triplets(t),
            (None, None) => unreachable!("clap requires one input"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Io(_, e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
