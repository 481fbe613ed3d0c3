//! `conlink`: retrieve, link, evaluate and cost concept links from the
//! command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use conlink::orchestrator::Mode;

use crate::config::{ProviderKind, RunConfig};

#[derive(Parser)]
#[command(
    name = "conlink",
    version,
    about = "Concept linking with retrieval and LLM prompting"
)]
struct Cli {
    #[command(flatten)]
    opts: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Each one overrides the matching key of
/// the config file.
#[derive(Args, Default)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset directory (queries.tsv, targets.tsv, embeddings, gold.tsv).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    n: Option<u32>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    nil_majority: Option<f64>,
    #[arg(long, global = true)]
    temperature: Option<f64>,
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderKind>,
    #[arg(long, global = true)]
    mock_script: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, conflicts_with_all = ["stage2_only", "no_llm"])]
    stage1_only: bool,
    #[arg(long, global = true, conflicts_with = "no_llm")]
    stage2_only: bool,
    /// Skip prompting; link to the most similar candidate.
    #[arg(long, global = true)]
    no_llm: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Query,
    Target,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Write the top-k candidates of every query to candidates.jsonl.
    Retrieve {
        /// Ranker: embedding, bm25, char_cosine, jaccard, levenshtein, jaro_winkler.
        #[arg(long, default_value = "embedding")]
        scorer: String,
    },
    /// Run the linking pipeline and write decisions, ledger and manifest.
    Link,
    /// Score decision files against gold.tsv and write report.json/report.txt.
    Eval {
        /// Decision files; defaults to decisions.jsonl in the output directory.
        #[arg(long)]
        decisions: Vec<PathBuf>,
        /// Also score every string and embedding ranker's top-1.
        #[arg(long)]
        baselines: bool,
        /// Thresholds for the similarity-threshold NIL sweep.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<f64>,
        /// Usage ledger priced into the report; defaults to ledger.jsonl in
        /// the output directory when present.
        #[arg(long)]
        ledger: Option<PathBuf>,
        /// Column name in the accuracy table.
        #[arg(long, default_value = "dataset")]
        name: String,
    },
    /// Price ledgers or run manifests and print per-stage totals.
    Cost {
        /// ledger.jsonl or manifest.json files; their usage is summed.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Generate a synthetic dataset and a gold-aware mock script.
    Gen {
        #[arg(long, default_value_t = 200)]
        queries: usize,
        #[arg(long, default_value_t = 2000)]
        targets: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 0.05)]
        margin: f64,
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        #[arg(long, default_value_t = 0.0)]
        hard_fraction: f64,
        /// Share of queries relabelled NIL.
        #[arg(long, default_value_t = 0.0)]
        nil_proportion: f64,
    },
    /// Fetch embeddings for the dataset's concept names from the configured
    /// embedding endpoint.
    Embed {
        #[arg(long, value_enum, default_value = "both")]
        side: SideArg,
    },
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        if self.dataset.is_some() {
            cfg.dataset = self.dataset.clone();
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        if self.mock_script.is_some() {
            cfg.provider.mock_script = self.mock_script.clone();
        }
        let p = &mut cfg.pipeline;
        set(&mut p.k, &self.k);
        set(&mut p.n, &self.n);
        set(&mut p.tau, &self.tau);
        set(&mut p.nil_majority, &self.nil_majority);
        set(&mut p.temperature, &self.temperature);
        set(&mut p.model, &self.model);
        set(&mut cfg.provider.kind, &self.provider);
        set(&mut cfg.seed, &self.seed);
        set(&mut cfg.jobs, &self.jobs);
        if self.stage1_only {
            cfg.set_mode(Mode::Stage1Only);
        } else if self.stage2_only {
            cfg.set_mode(Mode::Stage2Only);
        } else if self.no_llm {
            cfg.set_mode(Mode::NoLlm);
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = (|| {
        let mut cfg = match &cli.opts.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cli.opts.apply(&mut cfg);
        commands::run(&cli.command, &cfg)
    })();
    match outcome {
        Ok(commands::Status::Done) => ExitCode::SUCCESS,
        Ok(commands::Status::Partial(n)) => {
            eprintln!("warning: {n} queries failed; see the manifest");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
