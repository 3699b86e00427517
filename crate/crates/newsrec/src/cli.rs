//! Batch command-line entry points.
//!
//! Five subcommands cover the offline workflow: `ingest` turns a click log
//! (or a synthetic-corpus spec) into a dataset directory, `build-graph` and
//! `infer-topics` materialize the intermediate artifacts for inspection,
//! `train` produces a checkpoint plus training log, and `eval` scores the
//! held-out splits with an existing checkpoint.
//!
//! Every command resolves one [`RunConfig`] from defaults, an optional TOML
//! file, and command-line overrides (flags win), then echoes the resolved
//! config into its output directory, so a run is reproducible from its
//! artifacts alone. Exit codes: 0 success, 1 user error (bad paths, bad
//! input, bad flags), 2 internal failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{generate_synthetic, ingest, preprocess, to_tsv, Corpus, Stopwords, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::MetricsRow;
use crate::numerics::{ParameterStore, Real};
use crate::pipeline::{evaluate, prepare, train_model, Model, Prepared};
use crate::predictor::LogRow;

const DAY: i64 = 86_400;

/// Parses the process arguments, runs the selected command, and returns the
/// process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version print to stdout and succeed; anything else
            // is a usage problem, i.e. a user error.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

#[derive(Parser)]
#[command(
    name = "newsrec",
    version,
    about = "Graph-neural news recommendation: ingest click logs, train, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a click log (or generate a synthetic one) into a dataset directory
    Ingest(IngestArgs),
    /// Build the user-news-topic graphs and dump their edges and stats
    BuildGraph(StageArgs),
    /// Fit the topic model and assign a topic to every article
    InferTopics(StageArgs),
    /// Train a model; writes checkpoint, training log, and metrics
    Train(StageArgs),
    /// Score the held-out splits with a trained checkpoint
    Eval(EvalArgs),
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["input", "synthetic"])))]
struct IngestArgs {
    /// Click log to parse: JSON lines or tab-separated events
    #[arg(long)]
    input: Option<PathBuf>,
    /// Generate events from a synthetic-corpus spec (JSON)
    #[arg(long)]
    synthetic: Option<PathBuf>,
    /// Dataset directory to write
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct StageArgs {
    /// Dataset directory produced by `ingest`
    #[arg(long)]
    data: PathBuf,
    /// Directory for run artifacts
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory produced by `ingest`
    #[arg(long)]
    data: PathBuf,
    /// Trained checkpoint (the params.bin written by `train`)
    #[arg(long)]
    params: PathBuf,
    /// Directory for the metrics report
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

/// Config file plus the flag overrides; flags win over file values.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Flat-key TOML config; missing keys keep their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Propagation depth override (1, 2, or 3)
    #[arg(long)]
    layers: Option<usize>,
    /// F1 score-cutoff override (AUC is threshold-free)
    #[arg(long)]
    threshold: Option<Real>,
    /// Epoch-cap override
    #[arg(long)]
    max_epochs: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(layers) = self.layers {
            cfg.layers = layers;
        }
        if let Some(threshold) = self.threshold {
            cfg.threshold = threshold;
        }
        if let Some(max_epochs) = self.max_epochs {
            cfg.max_epochs = max_epochs;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::BuildGraph(args) => cmd_build_graph(args),
        Command::InferTopics(args) => cmd_infer_topics(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

/// Loads the dataset directory's event file and rebuilds the corpus with the
/// title vocabulary frozen at the held-out window's start. Every command goes
/// through this one path, so they all see the same corpus for a given config.
fn load_corpus(data: &Path, cfg: &RunConfig) -> Result<Corpus> {
    let events_path = data.join("events.tsv");
    if !events_path.exists() {
        return Err(Error::Data(format!(
            "no event file at {}; run `newsrec ingest` first",
            events_path.display()
        )));
    }
    let (raw, _) = ingest(&events_path)?;
    let min_ts = raw
        .iter()
        .map(|e| e.ts)
        .min()
        .ok_or_else(|| Error::Data(format!("{} holds no events", events_path.display())))?;
    let day0 = min_ts.div_euclid(DAY) * DAY;
    let cutoff = day0 + DAY * (cfg.graph_days + cfg.train_days) as i64;
    preprocess(&raw, &Stopwords::norwegian(), cutoff)
}

fn write_resolved_config(out: &Path, cfg: &RunConfig) -> Result<()> {
    let text = cfg.to_toml();
    println!("resolved configuration:\n{text}");
    write_text(&out.join("resolved_config.toml"), &text)
}

fn prepare_stage(args: &StageArgs) -> Result<(RunConfig, Prepared)> {
    let cfg = args.config.resolve()?;
    ensure_dir(&args.out)?;
    write_resolved_config(&args.out, &cfg)?;
    let corpus = load_corpus(&args.data, &cfg)?;
    let prep = prepare(corpus, &cfg)?;
    Ok((cfg, prep))
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    ensure_dir(&args.out)?;
    let (raw, report) = match (&args.input, &args.synthetic) {
        (Some(path), None) => ingest(path)?,
        (None, Some(spec_path)) => {
            let text = fs::read_to_string(spec_path).map_err(|e| {
                Error::Data(format!("cannot read {}: {e}", spec_path.display()))
            })?;
            let spec: SyntheticSpec = serde_json::from_str(&text)
                .map_err(|e| Error::Data(format!("bad synthetic spec {}: {e}", spec_path.display())))?;
            let (raw, _) = generate_synthetic(&spec)?;
            let resolved = serde_json::to_string_pretty(&spec)?;
            write_text(&args.out.join("synthetic_spec.json"), &resolved)?;
            let report = crate::data::IngestReport {
                lines: raw.len(),
                parsed: raw.len(),
                malformed: 0,
                samples: Vec::new(),
            };
            (raw, report)
        }
        // clap's arg group guarantees exactly one source.
        _ => unreachable!("argument group enforces exactly one of --input/--synthetic"),
    };
    write_text(&args.out.join("events.tsv"), &to_tsv(&raw))?;

    let corpus = {
        let min_ts = raw
            .iter()
            .map(|e| e.ts)
            .min()
            .ok_or_else(|| Error::Data("the input holds no events".into()))?;
        let day0 = min_ts.div_euclid(DAY) * DAY;
        let cutoff = day0 + DAY * (cfg.graph_days + cfg.train_days) as i64;
        preprocess(&raw, &Stopwords::norwegian(), cutoff)?
    };
    let stats = serde_json::json!({
        "lines": report.lines,
        "parsed": report.parsed,
        "malformed": report.malformed,
        "users": corpus.stats.users,
        "news": corpus.stats.news,
        "events": corpus.stats.events,
        "vocabulary": corpus.stats.vocabulary,
        "entity_types": corpus.stats.entity_types,
        "avg_words_per_title": corpus.stats.avg_words_per_title,
        "avg_entities_per_news": corpus.stats.avg_entities_per_news,
    });
    let stats_text = serde_json::to_string_pretty(&stats)?;
    write_text(&args.out.join("stats.json"), &stats_text)?;
    println!("{stats_text}");
    Ok(())
}

fn graph_stats_json(graph: &crate::hetgraph::HetGraph) -> serde_json::Value {
    let s = graph.stats();
    serde_json::json!({
        "users": s.users,
        "news": s.news,
        "topics": s.topics,
        "click_edges": s.click_edges,
        "topic_edges": s.topic_edges,
    })
}

fn cmd_build_graph(args: StageArgs) -> Result<()> {
    let (_, prep) = prepare_stage(&args)?;
    for (name, graph) in [
        ("train_graph.tsv", &prep.train_graph),
        ("eval_graph.tsv", &prep.eval_graph),
    ] {
        let mut bytes = Vec::new();
        graph.write_edges(&mut bytes)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::contract("graph edge dump is not UTF-8"))?;
        write_text(&args.out.join(name), &text)?;
    }
    let stats = serde_json::json!({
        "train": graph_stats_json(&prep.train_graph),
        "eval": graph_stats_json(&prep.eval_graph),
    });
    let text = serde_json::to_string_pretty(&stats)?;
    write_text(&args.out.join("graph_stats.json"), &text)?;
    println!("{text}");
    Ok(())
}

fn cmd_infer_topics(args: StageArgs) -> Result<()> {
    let (_, prep) = prepare_stage(&args)?;
    prep.lda.save_to_path(&args.out.join("lda_model.bin"))?;
    let mut lines = String::from("news\ttopic\tsource\n");
    for (d, topic) in prep.assignments.iter().enumerate() {
        let source = if d < prep.fitted_docs { "fitted" } else { "folded-in" };
        lines.push_str(&format!("{}\t{topic}\t{source}\n", prep.corpus.news_names[d]));
    }
    write_text(&args.out.join("topics.tsv"), &lines)?;
    println!(
        "assigned {} articles across {} topics ({} fitted, {} folded in)",
        prep.assignments.len(),
        prep.lda.topics(),
        prep.fitted_docs,
        prep.assignments.len() - prep.fitted_docs,
    );
    Ok(())
}

fn cmd_train(args: StageArgs) -> Result<()> {
    let (cfg, prep) = prepare_stage(&args)?;
    let model = Model::from_config(
        &cfg,
        prep.corpus.words.len(),
        prep.corpus.entities.len(),
        prep.corpus.types.len(),
    )?;
    println!(
        "training on {} positives ({} graph events, {} validation / {} test samples)",
        prep.train_positives.len(),
        prep.splits.graph.len(),
        prep.val_samples.len(),
        prep.test_samples.len(),
    );
    println!("{}", LogRow::HEADER);
    let outcome = train_model(&prep, &model, &cfg, &mut |row| println!("{}", row.to_csv()))?;
    if let Some(reason) = &outcome.aborted {
        eprintln!("warning: {reason}");
    }

    let mut log_text = String::from(LogRow::HEADER);
    log_text.push('\n');
    for row in &outcome.log {
        log_text.push_str(&row.to_csv());
        log_text.push('\n');
    }
    write_text(&args.out.join("training_log.csv"), &log_text)?;
    outcome.store.save_to_path(&args.out.join("params.bin"))?;

    let metrics = evaluate(&model, &outcome.store, &prep, &cfg)?;
    write_metrics(&args.out, &metrics)?;
    if let (Some(epoch), Some(auc)) = (outcome.best_epoch, outcome.best_auc) {
        println!("best epoch {epoch} (validation AUC {auc:.6})");
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    if !args.params.exists() {
        return Err(Error::Data(format!(
            "no checkpoint at {}",
            args.params.display()
        )));
    }
    let store = ParameterStore::load_from_path(&args.params)?;
    let corpus = load_corpus(&args.data, &cfg)?;
    let model = Model::from_config(
        &cfg,
        corpus.words.len(),
        corpus.entities.len(),
        corpus.types.len(),
    )?;
    let prep = prepare(corpus, &cfg)?;
    ensure_dir(&args.out)?;
    write_resolved_config(&args.out, &cfg)?;
    let metrics = evaluate(&model, &store, &prep, &cfg)?;
    write_metrics(&args.out, &metrics)?;
    Ok(())
}

fn write_metrics(out: &Path, metrics: &[MetricsRow]) -> Result<()> {
    let mut text = String::from(MetricsRow::HEADER);
    text.push('\n');
    println!("{}", MetricsRow::HEADER);
    for row in metrics {
        text.push_str(&row.to_csv());
        text.push('\n');
        println!("{}", row.to_csv());
    }
    write_text(&out.join("metrics.csv"), &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 3\nlayers = 1\nthreshold = 0.7\n").unwrap();
        let args = ConfigArgs {
            config: Some(path),
            seed: Some(9),
            layers: None,
            threshold: None,
            max_epochs: Some(4),
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.seed, 9, "flag beats file");
        assert_eq!(cfg.layers, 1, "file beats default");
        assert_eq!(cfg.threshold, 0.7);
        assert_eq!(cfg.max_epochs, 4);
        assert_eq!(cfg.feature_dim, 128, "untouched keys keep defaults");
    }

    #[test]
    fn invalid_override_is_rejected() {
        let args = ConfigArgs {
            layers: Some(4),
            ..ConfigArgs::default()
        };
        let err = args.resolve().unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn missing_event_file_error_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_corpus(dir.path(), &RunConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("events.tsv"));
    }
}
