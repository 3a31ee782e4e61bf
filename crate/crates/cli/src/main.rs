mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use graphdoc::contrastive::SplitMode;
use graphdoc::retrieval::Metric;

use crate::config::{extract_overrides, Config, Override};

/// Graph-attention document embeddings: pretraining, task heads and retrieval.
///
/// Any config key can be overridden with `--section.key value`.
#[derive(Debug, Parser)]
#[command(name = "graphdoc", version)]
pub struct Cli {
    /// `key = value` config file with [model] [synth] [pretrain] [finetune] [retrieval] [eval] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Shorthand for `--model.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum System {
    Bm25,
    Dense,
    Hybrid,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic corpus with queries and judgments.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Contrastive pretraining; writes model.ckpt and loss.tsv.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mode: Option<SplitMode>,
        /// Start from this checkpoint instead of a random init.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Finetune a classification head (and the encoder unless frozen).
    FinetuneCls {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy of a classifier checkpoint on a labeled corpus.
    EvalCls {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finetune the dual encoder on query/document pairs with mined negatives.
    FinetuneRet {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a BM25 index (bm25.json).
    IndexBm25 {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a corpus into a dense index (dense.tsv).
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Rank documents for every query; writes run.trec.
    Search {
        #[arg(long, value_enum)]
        system: System,
        #[arg(long)]
        queries: PathBuf,
        /// BM25 index, for bm25 and hybrid.
        #[arg(long)]
        bm25: Option<PathBuf>,
        /// Dense index, for dense and hybrid.
        #[arg(long)]
        dense: Option<PathBuf>,
        /// Query encoder, for dense and hybrid.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dense weight of the hybrid score.
        #[arg(long)]
        w: Option<f64>,
        #[arg(long, default_value = "graphdoc")]
        tag: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Grid-search the hybrid weight on a dev run pair and print it.
    TuneFusion {
        #[arg(long)]
        dense_run: PathBuf,
        #[arg(long)]
        bm25_run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a run file; prints metrics JSON.
    EvalRet {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// p@k, mrr@k or ndcg@k; repeatable. Defaults to `eval.metric`.
        #[arg(long)]
        metric: Vec<Metric>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// k-means over document embeddings, scored by NMI and purity.
    Cluster {
        #[arg(long)]
        model: PathBuf,
        /// Centroids are fit on this corpus.
        #[arg(long)]
        corpus: PathBuf,
        /// Documents to assign and score; defaults to the fitting corpus.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Document embeddings as `doc_id<TAB>v_1..v_d`.
    ExportEmb {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Last-layer attention of one document as CSV.
    ExportAtt {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        doc: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the pretraining loss on a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
}

/// A failed invocation and its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Check(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Check(_) => 3,
        }
    }

    fn line(&self) -> String {
        let (kind, msg) = match self {
            Failure::Usage(m) => ("usage", m),
            Failure::Data(m) => ("data", m),
            Failure::Check(m) => ("check", m),
        };
        format!("error[{kind}]: {}", msg.split_whitespace().collect::<Vec<_>>().join(" "))
    }
}

impl From<graphdoc::Error> for Failure {
    fn from(e: graphdoc::Error) -> Self {
        match e {
            graphdoc::Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn resolve_config(cli: &Cli, overrides: &[Override]) -> Result<Config, Failure> {
    let mut config = Config::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        config
            .apply_text(&text, &path.display().to_string())
            .map_err(Failure::Usage)?;
    }
    if let Some(seed) = cli.seed {
        config.set("model", "seed", &seed.to_string()).map_err(Failure::Usage)?;
    }
    for (section, key, value) in overrides {
        config.set(section, key, value).map_err(Failure::Usage)?;
    }
    if let Command::Pretrain { mode: Some(mode), .. } = &cli.command {
        config.set("pretrain", "mode", &mode.to_string()).map_err(Failure::Usage)?;
    }
    config.check().map_err(Failure::Usage)?;
    Ok(config)
}

fn run(args: Vec<String>) -> Result<(), Failure> {
    let (overrides, rest) = extract_overrides(args).map_err(Failure::Usage)?;
    let cli = match Cli::try_parse_from(rest) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("bad arguments");
            return Err(Failure::Usage(first.trim_start_matches("error: ").to_string()));
        }
    };
    let config = resolve_config(&cli, &overrides)?;
    commands::dispatch(cli.command, &config)
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.line());
            ExitCode::from(f.code())
        }
    }
}
