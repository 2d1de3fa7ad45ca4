use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use emocause::checkpoint::{Checkpoint, CHECKPOINT_FILE};
use emocause::dataset::{filter_labels, generate_synthetic, load_corpus, save_corpus, split, Splits, TemplateBank};
use emocause::knowledge::{
    write_cache, KnowledgeProvider, KnowledgeRequest, KnowledgeSource, LexiconProvider, Relations,
};
use emocause::labels::Emotion;
use emocause::metrics::{EvalReport, CSV_HEADER};
use emocause::model::span_text;
use emocause::train::{
    encode_examples, evaluate, history_csv, knowledge_text, prepare_data, random_search, run_seeds, summarize,
    train, CometRelations, MetricSummary, SearchSpace, TargetMetric, TrainConfig,
};
use emocause::Error;
use serde::{Deserialize, Serialize};

use crate::manifest::{now_unix, write_text, RunManifest};
use crate::{
    CacheArgs, Cli, Command, ConfigArgs, EvalArgs, PredictArgs, ReplayArgs, SearchArgs, SearchTarget, SplitName,
    SynthArgs, TrainArgs,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Core(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// 2 for bad input (usage, config, data, files), 1 for internal failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(Error::Shape { .. } | Error::NonFinite(_) | Error::Graph(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let root = cli.root;
    match cli.command {
        Command::Train(a) => cmd_train(&root, a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Search(a) => cmd_search(&root, a),
        Command::Analyze(a) => crate::analyze::cmd_analyze(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Cache(a) => cmd_cache(a),
        Command::Replay(a) => cmd_replay(a),
    }
}

fn resolve_config(args: &ConfigArgs) -> CliResult<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($flag:ident => $field:ident) => {
            if let Some(v) = args.$flag.clone() {
                cfg.$field = v;
            }
        };
    }
    set!(variant => variant);
    set!(pooler => pooler);
    set!(lr => lr);
    set!(lambda => lambda);
    set!(dropout => dropout_p);
    set!(max_epochs => max_epochs);
    set!(patience => patience);
    set!(batch_size => batch_size);
    set!(d_model => d_model);
    set!(layers => n_layers);
    if let Some(c) = args.clip_norm {
        cfg.clip_norm = Some(c);
    }
    if let Some(k) = &args.knowledge {
        cfg.knowledge = k.clone();
        if *k != KnowledgeSource::None && args.relations.is_none() && cfg.comet_relations == CometRelations::None {
            cfg.comet_relations = CometRelations::Both;
        }
    }
    set!(relations => comet_relations);
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub path: String,
    pub loaded: usize,
    pub skipped_without_span: usize,
    pub dropped_labels: Vec<(String, usize)>,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

fn load_splits(path: &Path, split_seed: u64) -> CliResult<(Splits, DataSummary)> {
    if !path.exists() {
        return Err(CliError::Usage(format!("data file {} does not exist", path.display())));
    }
    let corpus = load_corpus(path)?;
    let loaded = corpus.examples.len();
    let (kept, report) = filter_labels(corpus.examples);
    for (label, n) in &report.dropped {
        log::warn!("dropped {n} examples labelled {label:?}");
    }
    let splits = split(&kept, split_seed)?;
    let summary = DataSummary {
        path: path.display().to_string(),
        loaded,
        skipped_without_span: corpus.skipped_without_span,
        dropped_labels: report.dropped,
        train: splits.train.len(),
        dev: splits.dev.len(),
        test: splits.test.len(),
    };
    Ok((splits, summary))
}

type Provider = Box<dyn KnowledgeProvider + Send + Sync>;

fn open_provider(cfg: &TrainConfig) -> CliResult<Option<Provider>> {
    if !cfg.uses_knowledge() {
        return Ok(None);
    }
    Ok(cfg.knowledge.open()?)
}

fn as_dyn(p: &Option<Provider>) -> Option<&dyn KnowledgeProvider> {
    p.as_deref().map(|p| p as &dyn KnowledgeProvider)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub dev: EvalReport,
    pub test: EvalReport,
}

/// Top-level `report.json` of a training run. Holds no paths or times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: String,
    pub comet_relations: String,
    pub target_metric: TargetMetric,
    pub seeds: Vec<u64>,
    pub runs: Vec<SeedRun>,
    pub dev: Vec<MetricSummary>,
    pub test: Vec<MetricSummary>,
}

fn cmd_train(root: &Path, args: TrainArgs) -> CliResult<()> {
    let started = now_unix();
    let mut cfg = resolve_config(&args.cfg)?;
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    if cfg.seeds.is_empty() {
        return Err(CliError::Usage("no seeds configured".into()));
    }
    let out = args
        .out
        .unwrap_or_else(|| root.join(format!("train-{}-{}", cfg.variant, cfg.comet_relations)));
    let (splits, data_summary) = load_splits(&args.cfg.data, cfg.split_seed)?;
    let provider = open_provider(&cfg)?;
    let data = prepare_data(&cfg, &splits, as_dyn(&provider))?;
    log::info!("{} train / {} dev / {} test", data.train.len(), data.dev.len(), data.test.len());

    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let outcome = train(&data, &cfg, seed)?;
        let model = outcome.model()?;
        let test = evaluate(&model, &outcome.store, &data.test)?;
        let dir = out.join(format!("seed-{seed}"));
        Checkpoint {
            train_config: TrainConfig {
                seeds: vec![seed],
                ..cfg.clone()
            },
            model_config: outcome.model_config.clone(),
            store: outcome.store.clone(),
            vocab: data.vocab.clone(),
        }
        .save(&dir.join("checkpoint"))?;
        write_text(&dir.join("history.csv"), &history_csv(&outcome.history))?;
        let run = SeedRun {
            seed,
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.history.len(),
            dev: outcome.best_dev,
            test,
        };
        write_text(&dir.join("report.json"), &serde_json::to_string_pretty(&run)?)?;
        println!(
            "seed {seed}: best epoch {} of {}, dev {}",
            run.best_epoch,
            run.epochs_run,
            describe(&run.dev)
        );
        runs.push(run);
    }
    let dev = summarize(&cfg.seeds, runs.iter().map(|r| r.dev.clone()).collect())?.metrics;
    let test = summarize(&cfg.seeds, runs.iter().map(|r| r.test.clone()).collect())?.metrics;
    for m in &test {
        println!("test {}: {}", m.metric, m.formatted);
    }
    let report = TrainReport {
        variant: cfg.variant.to_string(),
        comet_relations: cfg.comet_relations.to_string(),
        target_metric: cfg.target(),
        seeds: cfg.seeds.clone(),
        runs,
        dev,
        test,
    };
    write_text(&out.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
    write_text(&out.join("config.json"), &serde_json::to_string_pretty(&cfg)?)?;
    write_text(&out.join("data.json"), &serde_json::to_string_pretty(&data_summary)?)?;
    RunManifest::new("train", args.cfg.config.as_deref(), serde_json::to_value(&cfg)?, started).write(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn describe(r: &EvalReport) -> String {
    r.scalars()
        .iter()
        .map(|(n, v)| format!("{n}={:.4}", v))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Accepts a checkpoint directory or a run directory containing one.
fn checkpoint_dir(path: &Path) -> CliResult<PathBuf> {
    for candidate in [path.to_path_buf(), path.join("checkpoint")] {
        if candidate.join(CHECKPOINT_FILE).is_file() {
            return Ok(candidate);
        }
    }
    Err(CliError::Usage(format!("no {CHECKPOINT_FILE} under {}", path.display())))
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let started = now_unix();
    let ck = Checkpoint::load(&checkpoint_dir(&args.checkpoint)?)?;
    let cfg = &ck.train_config;
    let (splits, _) = load_splits(&args.data, cfg.split_seed)?;
    let examples = match args.split {
        SplitName::Train => &splits.train,
        SplitName::Dev => &splits.dev,
        SplitName::Test => &splits.test,
    };
    let provider = open_provider(cfg)?;
    let instances = encode_examples(cfg, examples, as_dyn(&provider), &ck.vocab)?;
    let report = evaluate(&ck.model()?, &ck.store, &instances)?;
    if args.csv {
        println!("{CSV_HEADER}\n{}", report.csv_row());
    } else {
        println!("{}", report.to_json()?);
    }
    if let Some(out) = args.out {
        write_text(&out.join("report.json"), &report.to_json()?)?;
        write_text(&out.join("report.csv"), &format!("{CSV_HEADER}\n{}\n", report.csv_row()))?;
        write_text(&out.join("per_emotion.csv"), &crate::analyze::per_emotion_csv(&[("eval", &report)]))?;
        RunManifest::new("eval", None, serde_json::to_value(cfg)?, started).write(&out)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct PredictOutput {
    headline: String,
    knowledge: Option<String>,
    emotion: Option<Emotion>,
    probabilities: Option<Vec<(Emotion, f64)>>,
    cause_spans: Option<Vec<String>>,
    word_tags: Option<Vec<String>>,
}

fn cmd_predict(args: PredictArgs) -> CliResult<()> {
    let headline = args.headline.trim();
    if headline.is_empty() {
        return Err(CliError::Usage("--headline must not be empty".into()));
    }
    let ck = Checkpoint::load(&checkpoint_dir(&args.checkpoint)?)?;
    let mut cfg = ck.train_config.clone();
    if let Some(k) = args.knowledge {
        cfg.knowledge = k;
    }
    let provider = open_provider(&cfg)?;
    let knowledge = knowledge_text(&cfg, as_dyn(&provider), "predict", headline)?;
    let model = ck.model()?;
    let pred = model.predict_text(&ck.store, &ck.vocab, headline, knowledge.as_deref(), cfg.effective_max_len())?;
    let out = PredictOutput {
        headline: headline.to_string(),
        knowledge,
        emotion: pred.emotion,
        probabilities: pred
            .emotion_probs
            .as_ref()
            .map(|p| Emotion::ALL.iter().copied().zip(p.iter().copied()).collect()),
        cause_spans: pred
            .spans
            .as_ref()
            .map(|s| s.iter().map(|&sp| span_text(headline, sp)).collect()),
        word_tags: pred
            .word_tags
            .as_ref()
            .map(|t| t.iter().map(|t| t.as_str().to_string()).collect()),
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&out)?);
        return Ok(());
    }
    println!("Headline: {}", out.headline);
    if let (Some(e), Some(p)) = (out.emotion, &out.probabilities) {
        println!("Emotion:  {} ({:.3})", e, p[e.index()].1);
        let all: Vec<String> = p.iter().map(|(e, v)| format!("{e} {v:.3}")).collect();
        println!("          {}", all.join(", "));
    }
    if let Some(spans) = &out.cause_spans {
        let text = if spans.is_empty() { "-".to_string() } else { spans.join(" | ") };
        println!("Cause:    {text}");
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SearchReport<'a> {
    target: TargetMetric,
    budget: usize,
    seed: u64,
    space: &'a SearchSpace,
    outcome: &'a emocause::train::SearchOutcome,
}

fn cmd_search(root: &Path, args: SearchArgs) -> CliResult<()> {
    let started = now_unix();
    let mut cfg = resolve_config(&args.cfg)?;
    let target = match args.target {
        SearchTarget::Emotion => TargetMetric::EmotionMacroF1,
        SearchTarget::Cause => TargetMetric::CauseSpanF1,
    };
    let supported = match target {
        TargetMetric::EmotionMacroF1 => cfg.variant.has_emotion(),
        _ => cfg.variant.has_cause(),
    };
    if !supported {
        return Err(CliError::Usage(format!("variant {} has no {:?} output", cfg.variant, args.target)));
    }
    cfg.target_metric = Some(target);
    let mut space: SearchSpace = match &args.space {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => SearchSpace::default(),
    };
    if cfg.knowledge == KnowledgeSource::None && space.comet_relations.iter().any(|r| *r != CometRelations::None) {
        log::warn!("no knowledge source; searching without knowledge relations");
        space.comet_relations = vec![CometRelations::None];
    }
    let out = args
        .out
        .unwrap_or_else(|| root.join(format!("search-{}-{:?}", cfg.variant, args.target).to_lowercase()));
    let (splits, _) = load_splits(&args.cfg.data, cfg.split_seed)?;
    let provider = cfg.knowledge.open()?;
    let outcome = random_search(&space, args.budget, args.seed, |i, sample| {
        let trial = sample.apply(&cfg);
        trial.validate()?;
        let provider = if trial.uses_knowledge() { as_dyn(&provider) } else { None };
        let data = prepare_data(&trial, &splits, provider)?;
        let summary = run_seeds(&trial.seeds, |s| Ok(train(&data, &trial, s)?.best_dev))?;
        let values: Vec<f64> = summary
            .reports
            .iter()
            .map(|r| target.value(r))
            .collect::<emocause::Result<_>>()?;
        let score = values.iter().sum::<f64>() / values.len() as f64;
        log::info!("trial {i}: {score:.4}");
        Ok(score)
    })?;
    let best = outcome.best_trial();
    let best_cfg = best.sample.apply(&cfg);
    write_text(&out.join("trials.csv"), &outcome.trials_csv())?;
    write_text(&out.join("best_config.json"), &serde_json::to_string_pretty(&best_cfg)?)?;
    write_text(&out.join("config.json"), &serde_json::to_string_pretty(&cfg)?)?;
    let report = SearchReport {
        target,
        budget: args.budget,
        seed: args.seed,
        space: &space,
        outcome: &outcome,
    };
    write_text(&out.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
    RunManifest::new("search", args.cfg.config.as_deref(), serde_json::to_value(&cfg)?, started).write(&out)?;
    println!(
        "best trial {} score {:.4} (lr {:e}, dropout {:.3}, lambda {:.3}, pooler {}, relations {})",
        best.iteration,
        best.score,
        best.sample.lr,
        best.sample.dropout_p,
        best.sample.lambda,
        best.sample.pooler,
        best.sample.comet_relations
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> CliResult<()> {
    let bank = match &args.templates {
        Some(p) => TemplateBank::load(p)?,
        None => TemplateBank::builtin(),
    };
    let examples = generate_synthetic(args.n, args.seed, &bank);
    save_corpus(&args.out, &examples)?;
    println!("wrote {} examples to {}", examples.len(), args.out.display());
    Ok(())
}

fn cmd_cache(args: CacheArgs) -> CliResult<()> {
    if args.top_k == 0 {
        return Err(CliError::Usage("--top-k must be at least 1".into()));
    }
    let lexicon = match &args.lexicon {
        Some(p) => LexiconProvider::load(p)?,
        None => LexiconProvider::builtin(),
    };
    let corpus = load_corpus(&args.data)?;
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for ex in &corpus.examples {
        if !seen.insert(ex.headline.clone()) {
            continue;
        }
        let mut req = KnowledgeRequest::new(&ex.id, &ex.headline, Relations::Both);
        req.top_k = args.top_k;
        entries.push((ex.headline.clone(), lexicon.provide(&req)?));
    }
    write_cache(&args.out, &entries)?;
    println!("wrote {} cache entries to {}", entries.len(), args.out.display());
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> CliResult<()> {
    let manifest = RunManifest::read(&args.manifest)?;
    let cli = Cli::try_parse_from(&manifest.args)
        .map_err(|e| CliError::Usage(format!("manifest arguments do not parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Usage("a replay manifest cannot point at another replay".into()));
    }
    run(cli)
}
