use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use keycov::canonicalizer::{cluster_keys, propose_clusters, read_jsonl, stats_from_sizes, write_jsonl, ClusterProposal, ReviewDecision};
use keycov::corpus::{generate_synthetic_corpus, load_corpus, save_corpus, split_by_report_hash, CorpusSplit, Page, SplitName};
use keycov::evaluation::{
    coverage_sweep, extract_corpus, pair_prf, read_predictions, value_prf, write_predictions, write_sweep_csv, MatchCriterion,
    MatchMode,
};
use keycov::inventory::{coverage, CoverageMode, KeyInventory};
use keycov::loss::random_grad_checks;
use keycov::orchestrator::{observed_keys, run_batch_iteration, DecisionMode, DecisionOrigin, InventoryStore};
use serde::{Deserialize, Serialize};

use crate::api::{request_view, router, AppState, EvalData};
use crate::config::AppConfig;

#[derive(Debug, Parser)]
#[command(name = "keycov", version, about = "Canonical key inventory, key-value extraction and coverage tooling")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random step; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override a config value, e.g. `--set extractor.budget=256`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus and its planted inventory.
    GenCorpus(GenCorpusArgs),
    /// Split a corpus by report.
    Split(SplitArgs),
    /// Extract key-value pairs.
    Extract(ExtractArgs),
    /// Score predictions against gold pairs.
    Evaluate(EvaluateArgs),
    /// Coverage sweep over top-fraction inventory views.
    Sweep(SweepArgs),
    /// List observed keys missing from the inventory.
    MineKeys(MineKeysArgs),
    /// Cluster keys into review proposals.
    Cluster(ClusterArgs),
    /// Review queue operations.
    #[command(subcommand)]
    Review(ReviewCommand),
    /// Run one batch iteration against an inventory store.
    Batch(BatchArgs),
    /// Check loss gradients against finite differences.
    LossCheck(LossCheckArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub inventory_out: Option<PathBuf>,
    #[arg(long)]
    pub pages: Option<usize>,
    #[arg(long)]
    pub keys: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitSelect {
    /// Split file written by `split`; restricts pages to `--split`.
    #[arg(long)]
    pub split_file: Option<PathBuf>,
    #[arg(long, default_value = "test", requires = "split_file")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub inventory: PathBuf,
    /// Keep the top percent of canonical keys.
    #[arg(long, conflicts_with = "keys")]
    pub fraction: Option<f64>,
    /// Comma-separated canonical keys.
    #[arg(long, value_delimiter = ',')]
    pub keys: Option<Vec<String>>,
    /// Query with canonical names only.
    #[arg(long)]
    pub no_aliases: bool,
    #[command(flatten)]
    pub select: SplitSelect,
    /// Prediction JSONL; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum LevelArg {
    Value,
    Pair,
    Both,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub delta: Option<usize>,
    #[arg(long, value_enum, default_value = "pair")]
    pub level: LevelArg,
    #[command(flatten)]
    pub select: SplitSelect,
    /// Adds occurrence coverage of this inventory (or of `--fraction` of it).
    #[arg(long)]
    pub inventory: Option<PathBuf>,
    #[arg(long, requires = "inventory")]
    pub fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub inventory: PathBuf,
    /// Split file; computed from the config ratios and seed when absent.
    #[arg(long)]
    pub split_file: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long)]
    pub delta: Option<usize>,
    /// CSV table; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON rows with counts, for plotting.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MineKeysArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub inventory: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// JSONL of `{key, frequency}` as written by `mine-keys`.
    #[arg(long)]
    pub keys: PathBuf,
    /// Existing inventory; enables alias-attachment proposals.
    #[arg(long)]
    pub inventory: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value = "p")]
    pub id_prefix: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cluster size statistics as JSON.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ReviewCommand {
    /// Enqueue proposals and apply a decision file to a store.
    Apply(ReviewApplyArgs),
    /// Print the queue.
    Queue(ReviewQueueArgs),
}

#[derive(Debug, Args)]
pub struct StoreArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Seeds the store when it does not exist yet.
    #[arg(long)]
    pub inventory: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReviewApplyArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    #[arg(long)]
    pub proposals: Option<PathBuf>,
    #[arg(long)]
    pub decisions: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReviewQueueArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub status: Option<String>,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    #[command(flatten)]
    pub store: StoreArgs,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub batch_id: String,
    #[arg(long)]
    pub mode: Option<String>,
    /// Pair predictions of the batch.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossCheckArgs {
    #[arg(long)]
    pub cases: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub inventory: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub split_file: Option<PathBuf>,
    #[arg(long)]
    pub sweep_file: Option<PathBuf>,
}

/// Failure that is the caller's fault rather than the environment's.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Validation(pub String);

/// 2 when an I/O error is anywhere in the chain, else 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.downcast_ref::<Validation>().is_some()) {
        return 1;
    }
    if err.chain().any(|e| e.downcast_ref::<io::Error>().is_some()) {
        2
    } else {
        1
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = output(Some(path))?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn load_pages(path: &Path) -> anyhow::Result<Vec<Page>> {
    load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn load_inventory(path: &Path) -> anyhow::Result<KeyInventory> {
    KeyInventory::load(path).with_context(|| format!("loading inventory {}", path.display()))
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> anyhow::Result<T> {
    s.parse().map_err(|e: String| Validation(e).into())
}

fn select_pages(pages: Vec<Page>, select: &SplitSelect) -> anyhow::Result<Vec<Page>> {
    let Some(path) = &select.split_file else { return Ok(pages) };
    let split: CorpusSplit = read_json(path)?;
    let name: SplitName = parse(&select.split)?;
    Ok(split.pages(name, &pages).into_iter().cloned().collect())
}

fn open_store(args: &StoreArgs) -> anyhow::Result<InventoryStore> {
    let store = InventoryStore::open_or_init(&args.store, || match &args.inventory {
        Some(p) => Ok(KeyInventory::load(p)?),
        None => Err(keycov::orchestrator::OrchestratorError::NotInitialized(args.store.clone())),
    })
    .with_context(|| format!("opening store {}", args.store.display()))?;
    Ok(store)
}

#[derive(Debug, Serialize, Deserialize)]
struct KeyCount {
    key: String,
    frequency: u64,
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = AppConfig::load(cli.global.config.as_deref(), &cli.global.overrides)?;
    if let Some(seed) = cli.global.seed {
        cfg.seed = Some(seed);
    }
    let seed = cfg.seed.unwrap_or(cfg.synthesis.seed);
    match cli.command {
        Command::GenCorpus(a) => {
            let mut syn = cfg.synthesis.clone();
            syn.seed = seed;
            syn.pages = a.pages.unwrap_or(syn.pages);
            syn.num_keys = a.keys.unwrap_or(syn.num_keys);
            syn.noise_rate = a.noise.unwrap_or(syn.noise_rate);
            let corpus = generate_synthetic_corpus(&syn)?;
            save_corpus(&a.out, &corpus.pages)?;
            if let Some(p) = &a.inventory_out {
                corpus.inventory.save(p)?;
            }
            eprintln!("{} pages, {} pairs, {} canonical keys", corpus.pages.len(), corpus.annotation_count(), corpus.inventory.len());
        }
        Command::Split(a) => {
            let pages = load_pages(&a.corpus)?;
            let split = split_by_report_hash(&pages, cfg.split, seed)?;
            write_json(&a.out, &split)?;
            eprintln!("train {} / validation {} / test {} reports", split.train.len(), split.validation.len(), split.test.len());
        }
        Command::Extract(a) => {
            let pages = select_pages(load_pages(&a.corpus)?, &a.select)?;
            let inv = load_inventory(&a.inventory)?;
            let view = request_view(&inv, a.fraction, a.keys.as_deref(), !a.no_aliases)?;
            let backend = cfg.backend()?;
            let preds = extract_corpus(&pages, &view, backend.as_ref(), &cfg.extractor)?;
            let mut w = output(a.out.as_deref())?;
            write_predictions(&mut w, &preds)?;
            w.flush()?;
        }
        Command::Evaluate(a) => {
            let gold = select_pages(load_pages(&a.corpus)?, &a.select)?;
            let f = File::open(&a.predictions).with_context(|| format!("opening {}", a.predictions.display()))?;
            let preds = read_predictions(BufReader::new(f))?;
            let mode: MatchMode = match &a.mode {
                Some(m) => parse(m)?,
                None => cfg.evaluation.mode,
            };
            let delta = a.delta.unwrap_or(cfg.evaluation.delta);
            let criterion = match mode {
                MatchMode::Em => MatchCriterion::EM,
                MatchMode::Btm => MatchCriterion::btm(delta),
            };
            let cov = match &a.inventory {
                None => None,
                Some(p) => {
                    let inv = load_inventory(p)?;
                    let view = match a.fraction {
                        Some(f) => inv.top_fraction_keys(f)?,
                        None => inv,
                    };
                    Some(coverage(&view, &gold, CoverageMode::Occurrence)?)
                }
            };
            let mut reports = Vec::new();
            if a.level != LevelArg::Pair {
                reports.push(value_prf(&preds, &gold, criterion)?);
            }
            if a.level != LevelArg::Value {
                reports.push(pair_prf(&preds, &gold, criterion)?);
            }
            let mut w = output(None)?;
            for mut r in reports {
                r.coverage = cov;
                serde_json::to_writer(&mut w, &r)?;
                writeln!(w)?;
            }
            w.flush()?;
        }
        Command::Sweep(a) => {
            let pages = load_pages(&a.corpus)?;
            let inv = load_inventory(&a.inventory)?;
            let split = match &a.split_file {
                Some(p) => read_json(p)?,
                None => split_by_report_hash(&pages, cfg.split, seed)?,
            };
            let mut sweep = cfg.sweep_config();
            if let Some(f) = a.fractions {
                sweep.fractions = f;
            }
            if let Some(d) = a.delta {
                sweep.delta = d;
            }
            let backend = cfg.backend()?;
            let rows = coverage_sweep(&pages, &split, &inv, backend.as_ref(), &sweep)?;
            let mut w = output(a.out.as_deref())?;
            write_sweep_csv(&mut w, &rows)?;
            w.flush()?;
            if let Some(p) = &a.plot_data {
                write_json(p, &rows)?;
            }
        }
        Command::MineKeys(a) => {
            let pages = load_pages(&a.corpus)?;
            let inv = load_inventory(&a.inventory)?;
            let backend = cfg.backend()?;
            let loop_cfg = cfg.loop_config();
            let preds = extract_corpus(&pages, &inv, backend.as_ref(), &loop_cfg.extractor)?;
            let observed: BTreeMap<String, u64> = observed_keys(&pages, &preds, &loop_cfg);
            let novel = inv.detect_novel_keys(observed.keys().map(String::as_str));
            let mut rows: Vec<KeyCount> = novel.into_iter().map(|k| KeyCount { frequency: observed[&k], key: k }).collect();
            rows.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.key.cmp(&b.key)));
            let mut w = output(a.out.as_deref())?;
            write_jsonl(&mut w, &rows)?;
            w.flush()?;
        }
        Command::Cluster(a) => {
            let f = File::open(&a.keys).with_context(|| format!("opening {}", a.keys.display()))?;
            let keys: Vec<KeyCount> = read_jsonl(BufReader::new(f))?;
            let keys: Vec<(String, u64)> = keys.into_iter().map(|k| (k.key, k.frequency)).collect();
            let tau = a.tau.unwrap_or(cfg.canonicalizer.tau);
            let provider = cfg.embedder()?;
            let proposals: Vec<ClusterProposal> = match &a.inventory {
                Some(p) => propose_clusters(&keys, &load_inventory(p)?, provider.as_ref(), tau, &a.id_prefix)?,
                None => cluster_keys(&keys, provider.as_ref(), tau, &a.id_prefix)?,
            };
            let mut w = output(a.out.as_deref())?;
            write_jsonl(&mut w, &proposals)?;
            w.flush()?;
            let stats = stats_from_sizes(&proposals.iter().map(|p| p.members.len()).collect::<Vec<_>>());
            if let Some(p) = &a.stats {
                write_json(p, &stats)?;
            }
            eprintln!("{} keys -> {} proposals (compression {:.4})", stats.surface_forms, stats.clusters, stats.compression);
        }
        Command::Review(ReviewCommand::Apply(a)) => {
            let mut store = open_store(&a.store)?;
            if let Some(p) = &a.proposals {
                let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
                let proposals: Vec<ClusterProposal> = read_jsonl(BufReader::new(f))?;
                let mut queue = store.queue().clone();
                queue.enqueue(proposals)?;
                store.commit(Vec::new(), queue, Vec::new())?;
            }
            let f = File::open(&a.decisions).with_context(|| format!("opening {}", a.decisions.display()))?;
            let decisions: Vec<ReviewDecision> = read_jsonl(BufReader::new(f))?;
            let mut w = output(None)?;
            for d in &decisions {
                let record = store.decide(d, DecisionOrigin::Interactive).with_context(|| format!("decision on {}", d.proposal_id))?;
                serde_json::to_writer(&mut w, &record)?;
                writeln!(w)?;
            }
            w.flush()?;
            eprintln!("inventory version {}", store.current().version());
        }
        Command::Review(ReviewCommand::Queue(a)) => {
            let store = InventoryStore::open(&a.store)?;
            let status = a.status.as_deref().map(parse).transpose()?;
            let items: Vec<&ClusterProposal> =
                store.queue().proposals().iter().filter(|p| status.is_none_or(|s| p.status == s)).collect();
            let mut w = output(None)?;
            write_jsonl(&mut w, &items)?;
            w.flush()?;
        }
        Command::Batch(a) => {
            let mut store = open_store(&a.store)?;
            let pages = load_pages(&a.corpus)?;
            let mut loop_cfg = cfg.loop_config();
            if let Some(m) = &a.mode {
                loop_cfg.mode = parse::<DecisionMode>(m)?;
            }
            let backend = cfg.backend()?;
            let provider = cfg.embedder()?;
            let out = run_batch_iteration(&mut store, &a.batch_id, &pages, backend.as_ref(), provider.as_ref(), &loop_cfg, None)?;
            if let Some(p) = &a.out {
                let mut w = output(Some(p))?;
                write_predictions(&mut w, &out.pairs)?;
                w.flush()?;
            }
            println!("{}", serde_json::to_string(&out.record)?);
        }
        Command::LossCheck(a) => {
            let cases = a.cases.unwrap_or(cfg.loss.cases);
            let max_len = a.max_len.unwrap_or(cfg.loss.max_len);
            let tolerance = a.tolerance.unwrap_or(cfg.loss.tolerance);
            let suite = random_grad_checks(cases, max_len, seed, cfg.loss.h)?;
            println!("{}", serde_json::to_string(&suite)?);
            if suite.max_rel_error >= tolerance {
                bail!(Validation(format!("max relative error {:e} exceeds {tolerance:e}", suite.max_rel_error)));
            }
        }
        Command::Serve(a) => {
            let mut server = cfg.server.clone();
            server.bind = a.bind.unwrap_or(server.bind);
            server.store = a.store.unwrap_or(server.store);
            server.inventory = a.inventory.or(server.inventory);
            server.corpus = a.corpus.or(server.corpus);
            server.split_file = a.split_file.or(server.split_file);
            server.sweep_file = a.sweep_file.or(server.sweep_file);
            let store = open_store(&StoreArgs { store: server.store.clone(), inventory: server.inventory.clone() })?;
            let mut state = AppState::new(store, cfg.backend()?, cfg.embedder()?, cfg.loop_config());
            if let Some(c) = &server.corpus {
                let pages = load_pages(c)?;
                let split = match &server.split_file {
                    Some(p) => read_json(p)?,
                    None => split_by_report_hash(&pages, cfg.split, seed)?,
                };
                state = state.with_eval(EvalData { pages, split });
            }
            if let Some(p) = server.sweep_file {
                state = state.with_sweep_file(p);
            }
            serve(Arc::new(state), &server.bind)?;
        }
    }
    Ok(())
}

fn serve(state: Arc<AppState>, bind: &str) -> anyhow::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind).await.with_context(|| format!("binding {bind}"))?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        axum::serve(listener, router(state)).await?;
        Ok(())
    })
}
