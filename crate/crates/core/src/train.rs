//! Optimisation and experiment protocol: Adam, the early-stopped epoch
//! loop, multi-seed aggregation, random hyperparameter search and the paired
//! t-test used to compare seed-matched runs.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{Example, Splits};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::heads::{HeadConfig, Variant};
use crate::knowledge::{render_template, KnowledgeProvider, KnowledgeRequest, KnowledgeSource, Relations};
use crate::metrics::EvalReport;
use crate::model::{Instance, Model, ModelConfig};
use crate::rng_from_seed;
use crate::tensor::{Activation, Gradients, Graph, ParamStore, PoolMode};
use crate::text::{train_vocab, Vocab, DEFAULT_PAIR_MAX_LEN, DEFAULT_SINGLE_MAX_LEN};

/// The five seeds used for every multi-seed report.
pub const DEFAULT_SEEDS: [u64; 5] = [13, 42, 137, 2024, 31337];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMetric {
    EmotionMacroF1,
    CauseSpanF1,
    /// Mean of the two; the default for multi-task variants.
    Joint,
}

impl TargetMetric {
    pub fn default_for(variant: Variant) -> TargetMetric {
        match variant {
            Variant::SingleEmotion => TargetMetric::EmotionMacroF1,
            Variant::SingleCause => TargetMetric::CauseSpanF1,
            _ => TargetMetric::Joint,
        }
    }

    pub fn value(self, report: &EvalReport) -> Result<f64> {
        let emo = || {
            report
                .emotion_macro_f1
                .ok_or_else(|| Error::config("target metric needs emotion predictions"))
        };
        let cause = || {
            report
                .cause_span
                .map(|s| s.f1)
                .ok_or_else(|| Error::config("target metric needs cause predictions"))
        };
        match self {
            TargetMetric::EmotionMacroF1 => emo(),
            TargetMetric::CauseSpanF1 => cause(),
            TargetMetric::Joint => Ok((emo()? + cause()?) / 2.0),
        }
    }
}

impl FromStr for TargetMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emotion" | "emotion_macro_f1" => Ok(TargetMetric::EmotionMacroF1),
            "cause" | "cause_span_f1" => Ok(TargetMetric::CauseSpanF1),
            "joint" => Ok(TargetMetric::Joint),
            _ => Err(Error::config(format!("unknown target metric {s:?}"))),
        }
    }
}

/// Knowledge relations fed to the pair encoder, or `none` for single inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CometRelations {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "xReact")]
    XReact,
    #[serde(rename = "oReact")]
    OReact,
    #[serde(rename = "both")]
    Both,
}

impl CometRelations {
    pub const ALL: [CometRelations; 4] = [
        CometRelations::XReact,
        CometRelations::OReact,
        CometRelations::Both,
        CometRelations::None,
    ];

    pub fn relations(self) -> Option<Relations> {
        match self {
            CometRelations::None => None,
            CometRelations::XReact => Some(Relations::XReact),
            CometRelations::OReact => Some(Relations::OReact),
            CometRelations::Both => Some(Relations::Both),
        }
    }
}

impl FromStr for CometRelations {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CometRelations::None),
            other => other.parse::<Relations>().map(|r| match r {
                Relations::XReact => CometRelations::XReact,
                Relations::OReact => CometRelations::OReact,
                Relations::Both => CometRelations::Both,
            }),
        }
    }
}

impl fmt::Display for CometRelations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CometRelations::None => "none",
            CometRelations::XReact => "xReact",
            CometRelations::OReact => "oReact",
            CometRelations::Both => "both",
        })
    }
}

/// Every setting of one training run. Serialised flat; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub lr: f64,
    pub dropout_p: f64,
    /// Emotion weight; ignored by single-task variants.
    pub lambda: f64,
    pub pooler: PoolMode,
    pub comet_relations: CometRelations,
    pub knowledge: KnowledgeSource,
    pub top_k: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
    /// Defaults by variant when absent.
    pub target_metric: Option<TargetMetric>,
    /// Global-norm gradient clipping; off unless set.
    pub clip_norm: Option<f64>,
    pub teacher_forcing: bool,
    pub hard_cause_attention: bool,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub activation: Activation,
    pub emotion_dim: usize,
    pub vocab_size: usize,
    /// Defaults to 64 for single inputs and 128 for pairs.
    pub max_len: Option<usize>,
    pub init_scale: f64,
    pub split_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Multi,
            lr: 1e-3,
            dropout_p: 0.1,
            lambda: 0.5,
            pooler: PoolMode::Attention,
            comet_relations: CometRelations::None,
            knowledge: KnowledgeSource::None,
            top_k: 2,
            batch_size: 32,
            max_epochs: 20,
            patience: 5,
            seeds: DEFAULT_SEEDS.to_vec(),
            target_metric: None,
            clip_norm: None,
            teacher_forcing: true,
            hard_cause_attention: false,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            activation: Activation::Gelu,
            emotion_dim: crate::heads::DEFAULT_EMOTION_DIM,
            vocab_size: 2000,
            max_len: None,
            init_scale: 0.07,
            split_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be at least 1"));
        }
        if self.top_k == 0 {
            return Err(Error::config("top_k must be at least 1"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config(format!("clip_norm {c} must be positive")));
            }
        }
        if self.uses_knowledge() && self.knowledge == KnowledgeSource::None {
            return Err(Error::config(format!(
                "comet_relations = {} needs a knowledge source",
                self.comet_relations
            )));
        }
        self.model_config(self.vocab_size).validate()
    }

    pub fn target(&self) -> TargetMetric {
        self.target_metric.unwrap_or_else(|| TargetMetric::default_for(self.variant))
    }

    /// Knowledge is used when both a relation set and a source are chosen.
    pub fn uses_knowledge(&self) -> bool {
        self.comet_relations != CometRelations::None
    }

    pub fn effective_max_len(&self) -> usize {
        self.max_len.unwrap_or(if self.uses_knowledge() {
            DEFAULT_PAIR_MAX_LEN
        } else {
            DEFAULT_SINGLE_MAX_LEN
        })
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let mut heads = HeadConfig::new(self.variant);
        heads.pooler = self.pooler;
        heads.lambda = self.variant.is_multi().then_some(self.lambda);
        heads.emotion_dim = self.emotion_dim;
        heads.dropout_p = self.dropout_p;
        heads.teacher_forcing = self.teacher_forcing;
        heads.hard_cause_attention = self.hard_cause_attention;
        ModelConfig {
            encoder: EncoderConfig {
                d_model: self.d_model,
                n_layers: self.n_layers,
                n_heads: self.n_heads,
                d_ff: self.d_ff,
                max_positions: self.effective_max_len(),
                vocab_size,
                dropout_p: self.dropout_p,
                activation: self.activation,
            },
            heads,
            init_scale: self.init_scale,
        }
    }
}

/// Knowledge sentence for one example, or `None` when knowledge is off.
pub fn knowledge_text(
    cfg: &TrainConfig,
    provider: Option<&dyn KnowledgeProvider>,
    id: &str,
    headline: &str,
) -> Result<Option<String>> {
    let Some(relations) = cfg.comet_relations.relations() else {
        return Ok(None);
    };
    let provider = provider.ok_or_else(|| Error::config("knowledge requested but no provider is open"))?;
    let mut req = KnowledgeRequest::new(id, headline, relations);
    req.top_k = cfg.top_k;
    let result = provider.provide(&req)?;
    Ok(Some(render_template(&result, relations)))
}

/// Encoded splits sharing one vocabulary learned from the training split.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub vocab: Vocab,
    pub train: Vec<Instance>,
    pub dev: Vec<Instance>,
    pub test: Vec<Instance>,
}

fn instances(
    examples: &[Example],
    knowledge: &[Option<String>],
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<Instance>> {
    examples
        .iter()
        .zip(knowledge)
        .map(|(ex, k)| {
            let emotion = ex
                .gold_emotion()
                .ok_or_else(|| Error::data(&ex.id, format!("label {:?} is not a target emotion", ex.emotion)))?;
            Instance::prepare(
                &ex.id,
                &ex.headline,
                emotion,
                ex.cause_span,
                &ex.annotator_emotions,
                k.as_deref(),
                vocab,
                max_len,
            )
        })
        .collect()
}

fn knowledge_texts(
    cfg: &TrainConfig,
    examples: &[Example],
    provider: Option<&dyn KnowledgeProvider>,
) -> Result<Vec<Option<String>>> {
    examples
        .iter()
        .map(|ex| knowledge_text(cfg, provider, &ex.id, &ex.headline))
        .collect()
}

/// Encodes examples against an existing vocabulary, e.g. a checkpoint's.
pub fn encode_examples(
    cfg: &TrainConfig,
    examples: &[Example],
    provider: Option<&dyn KnowledgeProvider>,
    vocab: &Vocab,
) -> Result<Vec<Instance>> {
    let k = knowledge_texts(cfg, examples, provider)?;
    instances(examples, &k, vocab, cfg.effective_max_len())
}

/// Looks up knowledge, trains the vocabulary on training headlines and
/// knowledge sentences, and encodes every split.
pub fn prepare_data(cfg: &TrainConfig, splits: &Splits, provider: Option<&dyn KnowledgeProvider>) -> Result<PreparedData> {
    let k_train = knowledge_texts(cfg, &splits.train, provider)?;
    let k_dev = knowledge_texts(cfg, &splits.dev, provider)?;
    let k_test = knowledge_texts(cfg, &splits.test, provider)?;
    let mut corpus: Vec<&str> = splits.train.iter().map(|e| e.headline.as_str()).collect();
    corpus.extend(k_train.iter().flatten().map(String::as_str));
    let vocab = train_vocab(&corpus, cfg.vocab_size)?;
    let max_len = cfg.effective_max_len();
    Ok(PreparedData {
        train: instances(&splits.train, &k_train, &vocab, max_len)?,
        dev: instances(&splits.dev, &k_dev, &vocab, max_len)?,
        test: instances(&splits.test, &k_test, &vocab, max_len)?,
        vocab,
    })
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Adam {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            v: zeros.clone(),
            m: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter. A non-finite gradient aborts before
    /// anything is modified and names the parameter.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::config("optimizer state does not match the parameter store"));
        }
        for id in store.ids() {
            if grads.get(id).iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", store.name(id))));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for id in store.ids().collect::<Vec<_>>() {
            let g = grads.get(id);
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for (i, w) in store.get_mut(id).data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Predictions for every instance, then metrics.
pub fn evaluate(model: &Model, store: &ParamStore, data: &[Instance]) -> Result<EvalReport> {
    let preds = data
        .iter()
        .map(|inst| model.predict(store, inst))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_predictions(data, &preds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_emotion_macro_f1: Option<f64>,
    pub dev_emotion_accuracy: Option<f64>,
    pub dev_cause_span_f1: Option<f64>,
    pub dev_target: f64,
}

pub const HISTORY_HEADER: &str =
    "epoch,train_loss,dev_emotion_macro_f1,dev_emotion_accuracy,dev_cause_span_f1,dev_target";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{:.6},{},{},{},{:.6}",
            self.epoch,
            self.train_loss,
            f(self.dev_emotion_macro_f1),
            f(self.dev_emotion_accuracy),
            f(self.dev_cause_span_f1),
            self.dev_target
        )
    }
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in history {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model_config: ModelConfig,
    /// Parameters from the best dev epoch.
    pub store: ParamStore,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev: EvalReport,
}

impl TrainOutcome {
    pub fn model(&self) -> Result<Model> {
        Model::bind(&self.model_config, &self.store)
    }
}

/// Shuffled minibatches, dev evaluation after every epoch, best-epoch
/// parameters kept. Stops after `max_epochs` or once the dev target has not
/// improved for more than `patience` consecutive epochs.
pub fn train(data: &PreparedData, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    if data.dev.is_empty() {
        return Err(Error::config("dev split is empty"));
    }
    let model_config = cfg.model_config(data.vocab.len());
    let mut rng = rng_from_seed(seed);
    let (model, mut store) = Model::init(&model_config, &mut rng)?;
    let mut adam = Adam::new(&store);
    let target = cfg.target();

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParamStore, EvalReport)> = None;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &data.train[i]).collect();
            let mut g = Graph::new();
            let loss = model.batch_loss(&mut g, &store, &batch, true, &mut rng)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            let mut grads = g.backward(loss)?;
            if let Some(max) = cfg.clip_norm {
                let norm = grads.global_norm();
                if norm > max {
                    grads.scale(max / norm);
                }
            }
            adam.step(&mut store, &grads, cfg.lr)?;
            loss_sum += value;
            batches += 1;
        }
        let dev = evaluate(&model, &store, &data.dev)?;
        let score = target.value(&dev)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            dev_emotion_macro_f1: dev.emotion_macro_f1,
            dev_emotion_accuracy: dev.emotion_accuracy,
            dev_cause_span_f1: dev.cause_span.map(|s| s.f1),
            dev_target: score,
        });
        log::info!("epoch {epoch}: loss {:.4} dev {score:.4}", loss_sum / batches as f64);
        if best.as_ref().map_or(true, |b| score > b.0) {
            best = Some((score, epoch, store.clone(), dev));
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }
    let (_, best_epoch, store, best_dev) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model_config,
        store,
        history,
        best_epoch,
        best_dev,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        if values.is_empty() {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }

    /// Percentages as `"xx.xx ± y.yy"`.
    pub fn percent(&self) -> String {
        format!("{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub formatted: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub reports: Vec<EvalReport>,
    pub metrics: Vec<MetricSummary>,
}

impl SeedSummary {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

/// Runs `run` once per seed, in order, and aggregates every scalar metric.
pub fn run_seeds<F>(seeds: &[u64], mut run: F) -> Result<SeedSummary>
where
    F: FnMut(u64) -> Result<EvalReport>,
{
    if seeds.is_empty() {
        return Err(Error::config("no seeds given"));
    }
    let reports = seeds.iter().map(|&s| run(s)).collect::<Result<Vec<_>>>()?;
    summarize(seeds, reports)
}

/// Mean and population std of every scalar metric over per-seed reports.
pub fn summarize(seeds: &[u64], reports: Vec<EvalReport>) -> Result<SeedSummary> {
    if reports.is_empty() || reports.len() != seeds.len() {
        return Err(Error::config("need exactly one report per seed"));
    }
    let names: Vec<&'static str> = reports[0].scalars().into_iter().map(|(n, _)| n).collect();
    let metrics = names
        .into_iter()
        .map(|name| {
            let values: Vec<f64> = reports
                .iter()
                .map(|r| {
                    r.scalars()
                        .into_iter()
                        .find(|(n, _)| *n == name)
                        .map(|(_, v)| v)
                        .ok_or_else(|| Error::config(format!("metric {name} missing from a seed's report")))
                })
                .collect::<Result<_>>()?;
            let ms = MeanStd::of(&values);
            Ok(MetricSummary {
                metric: name.to_string(),
                mean: ms.mean,
                std: ms.std,
                formatted: ms.percent(),
                values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedSummary {
        seeds: seeds.to_vec(),
        reports,
        metrics,
    })
}

/// Hyperparameter ranges. Learning rate is sampled log-uniformly, dropout
/// and λ uniformly, the categorical axes uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub lr: [f64; 2],
    pub dropout_p: [f64; 2],
    pub lambda: [f64; 2],
    pub pooler: Vec<PoolMode>,
    pub comet_relations: Vec<CometRelations>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            lr: [1e-6, 1e-4],
            dropout_p: [0.0, 0.9],
            lambda: [0.1, 0.9],
            pooler: PoolMode::ALL.to_vec(),
            comet_relations: CometRelations::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub lr: f64,
    pub dropout_p: f64,
    pub lambda: f64,
    pub pooler: PoolMode,
    pub comet_relations: CometRelations,
}

impl Sample {
    /// `base` with the sampled values substituted.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            dropout_p: self.dropout_p,
            lambda: self.lambda,
            pooler: self.pooler,
            comet_relations: self.comet_relations,
            ..base.clone()
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, r: [f64; 2], lo: f64| {
            if !(r[0] >= lo && r[0] <= r[1] && r[1].is_finite()) {
                return Err(Error::config(format!("search range {name} {r:?} is invalid")));
            }
            Ok(())
        };
        range("lr", self.lr, f64::MIN_POSITIVE)?;
        range("dropout_p", self.dropout_p, 0.0)?;
        range("lambda", self.lambda, 0.0)?;
        if self.dropout_p[1] >= 1.0 || self.lambda[1] > 1.0 {
            return Err(Error::config("dropout must stay below 1 and lambda at most 1"));
        }
        if self.pooler.is_empty() || self.comet_relations.is_empty() {
            return Err(Error::config("categorical search axes need at least one value"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        let uniform = |rng: &mut R, r: [f64; 2]| if r[0] == r[1] { r[0] } else { rng.gen_range(r[0]..=r[1]) };
        let log_lr = uniform(rng, [self.lr[0].ln(), self.lr[1].ln()]);
        Sample {
            lr: log_lr.exp().clamp(self.lr[0], self.lr[1]),
            dropout_p: uniform(rng, self.dropout_p),
            lambda: uniform(rng, self.lambda),
            pooler: self.pooler[rng.gen_range(0..self.pooler.len())],
            comet_relations: self.comet_relations[rng.gen_range(0..self.comet_relations.len())],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub iteration: usize,
    pub sample: Sample,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub trials: Vec<Trial>,
    /// Index of the best trial; the earliest wins ties.
    pub best: usize,
}

pub const TRIALS_HEADER: &str = "iteration,lr,dropout_p,lambda,pooler,comet_relations,score";

impl SearchOutcome {
    pub fn best_trial(&self) -> &Trial {
        &self.trials[self.best]
    }

    pub fn trials_csv(&self) -> String {
        let mut s = format!("{TRIALS_HEADER}\n");
        for t in &self.trials {
            s.push_str(&format!(
                "{},{:e},{:.6},{:.6},{},{},{:.6}\n",
                t.iteration, t.sample.lr, t.sample.dropout_p, t.sample.lambda, t.sample.pooler, t.sample.comet_relations, t.score
            ));
        }
        s
    }
}

/// Draws `budget` samples (all drawn before any evaluation, so the sequence
/// depends only on `seed`) and scores each with `objective`.
pub fn random_search<F>(space: &SearchSpace, budget: usize, seed: u64, mut objective: F) -> Result<SearchOutcome>
where
    F: FnMut(usize, &Sample) -> Result<f64>,
{
    if budget < 1 {
        return Err(Error::config("search budget must be at least 1"));
    }
    space.validate()?;
    let mut rng = rng_from_seed(seed);
    let samples: Vec<Sample> = (0..budget).map(|_| space.sample(&mut rng)).collect();
    let mut trials = Vec::with_capacity(budget);
    let mut best = 0;
    for (iteration, sample) in samples.into_iter().enumerate() {
        let score = objective(iteration, &sample)?;
        if score > trials.get(best).map_or(f64::NEG_INFINITY, |t: &Trial| t.score) {
            best = iteration;
        }
        trials.push(Trial {
            iteration,
            sample,
            score,
        });
    }
    Ok(SearchOutcome { trials, best })
}

/// Two-sided paired t-test p-value. When every difference is identical the
/// statistic is undefined; the result is 0 if the means differ and 1 otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::config("paired t-test needs samples of equal length"));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::config("paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(if mean == 0.0 { 1.0 } else { 0.0 });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::config(e.to_string()))?;
    Ok((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}

/// The paired t statistic itself, for reporting.
pub fn paired_t_statistic(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var > 0.0).then(|| mean / (var / n).sqrt())
}
