//! Emotion and cause heads, their losses, and the three multi-task couplings.
//!
//! * `multi`: both heads read the same hidden states.
//! * `multi_c2e`: per-token cause probability `1 − P(O)` is softmaxed over the
//!   headline and used as pooling attention for the emotion head. Under
//!   teacher forcing the gold span supplies 0/1 scores instead.
//! * `multi_e2c`: the emotion distribution mixes a learned emotion embedding
//!   table into a vector `M`, which is appended to every token state before
//!   tagging. Under teacher forcing `M` is the gold emotion's row.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{CauseTag, Emotion};
use crate::tensor::{pool, Graph, ParamId, ParamStore, PoolMode, Tensor, Var};
use crate::text::decode_iob;

pub const W_A: &str = "W_a";
pub const B_A: &str = "b_a";
pub const W_E: &str = "W_e";
pub const B_E: &str = "b_e";
pub const W_C: &str = "W_c";
pub const B_C: &str = "b_c";
pub const W_C2: &str = "W_c'";
pub const B_C2: &str = "b_c'";
pub const EMOTION_EMB: &str = "E";

pub const DEFAULT_EMOTION_DIM: usize = 300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    SingleEmotion,
    SingleCause,
    Multi,
    MultiC2e,
    MultiE2c,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::SingleEmotion,
        Variant::SingleCause,
        Variant::Multi,
        Variant::MultiC2e,
        Variant::MultiE2c,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::SingleEmotion => "single_emotion",
            Variant::SingleCause => "single_cause",
            Variant::Multi => "multi",
            Variant::MultiC2e => "multi_c2e",
            Variant::MultiE2c => "multi_e2c",
        }
    }

    pub fn has_emotion(self) -> bool {
        self != Variant::SingleCause
    }

    pub fn has_cause(self) -> bool {
        self != Variant::SingleEmotion
    }

    pub fn is_multi(self) -> bool {
        matches!(self, Variant::Multi | Variant::MultiC2e | Variant::MultiE2c)
    }

    /// Head parameters owned by this variant.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Variant::SingleEmotion => &[W_A, B_A, W_E, B_E],
            Variant::SingleCause => &[W_C, B_C],
            Variant::Multi => &[W_A, B_A, W_E, B_E, W_C, B_C],
            Variant::MultiC2e => &[W_C, B_C, W_E, B_E],
            Variant::MultiE2c => &[W_A, B_A, W_E, B_E, W_C2, B_C2, EMOTION_EMB],
        }
    }

    /// Parameters that only the emotion loss can reach, and those only the
    /// cause loss can reach. Cross-task couplings remove a parameter from
    /// the exclusive set when it feeds the other task.
    pub fn exclusive_params(self, teacher_forced: bool) -> (Vec<&'static str>, Vec<&'static str>) {
        match (self, teacher_forced) {
            (Variant::SingleEmotion, _) => (vec![W_A, B_A, W_E, B_E], vec![]),
            (Variant::SingleCause, _) => (vec![], vec![W_C, B_C]),
            (Variant::Multi, _) => (vec![W_A, B_A, W_E, B_E], vec![W_C, B_C]),
            (Variant::MultiC2e, true) => (vec![W_E, B_E], vec![W_C, B_C]),
            (Variant::MultiC2e, false) => (vec![W_E, B_E], vec![]),
            (Variant::MultiE2c, true) => (vec![W_A, B_A, W_E, B_E], vec![W_C2, B_C2, EMOTION_EMB]),
            (Variant::MultiE2c, false) => (vec![], vec![W_C2, B_C2, EMOTION_EMB]),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub variant: Variant,
    pub pooler: PoolMode,
    /// Emotion weight in the joint loss; present exactly for multi-task variants.
    pub lambda: Option<f64>,
    pub emotion_dim: usize,
    /// Dropout on the input of every dense head layer.
    pub dropout_p: f64,
    /// Feed gold spans / gold emotions downstream during training.
    pub teacher_forcing: bool,
    /// `multi_c2e` inference: attend over the decoded span (0/1 scores)
    /// instead of soft cause probabilities.
    pub hard_cause_attention: bool,
}

impl HeadConfig {
    pub fn new(variant: Variant) -> Self {
        HeadConfig {
            variant,
            pooler: PoolMode::Attention,
            lambda: variant.is_multi().then_some(0.5),
            emotion_dim: DEFAULT_EMOTION_DIM,
            dropout_p: 0.1,
            teacher_forcing: true,
            hard_cause_attention: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.variant.is_multi(), self.lambda) {
            (true, None) => return Err(Error::config(format!("{} needs lambda", self.variant))),
            (false, Some(_)) => {
                return Err(Error::config(format!("{} takes no lambda", self.variant)))
            }
            (true, Some(l)) if !(0.0..=1.0).contains(&l) => {
                return Err(Error::config(format!("lambda {l} outside [0,1]")))
            }
            _ => {}
        }
        if self.emotion_dim == 0 {
            return Err(Error::config("emotion embedding dimension must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config(format!("head dropout {} outside [0,1)", self.dropout_p)));
        }
        Ok(())
    }
}

/// Head parameter slots; absent heads are `None`.
#[derive(Clone, Debug)]
pub struct Heads {
    config: HeadConfig,
    w_a: Option<ParamId>,
    b_a: Option<ParamId>,
    w_e: Option<ParamId>,
    b_e: Option<ParamId>,
    w_c: Option<ParamId>,
    b_c: Option<ParamId>,
    w_c2: Option<ParamId>,
    b_c2: Option<ParamId>,
    emb: Option<ParamId>,
}

fn head_shape(name: &str, d: usize, d_e: usize) -> Vec<usize> {
    match name {
        W_A => vec![1, d],
        B_A => vec![1],
        W_E => vec![Emotion::COUNT, d],
        B_E => vec![Emotion::COUNT],
        W_C => vec![CauseTag::COUNT, d],
        B_C => vec![CauseTag::COUNT],
        W_C2 => vec![CauseTag::COUNT, d + d_e],
        B_C2 => vec![CauseTag::COUNT],
        EMOTION_EMB => vec![Emotion::COUNT, d_e],
        _ => unreachable!("unknown head parameter {name}"),
    }
}

/// Inputs a head needs besides the hidden states.
pub struct HeadInput<'a> {
    pub hidden: Var,
    /// Rows of `hidden` holding headline pieces.
    pub content: &'a [usize],
    /// Gold tag per position, when known.
    pub gold_tags: Option<&'a [Option<CauseTag>]>,
    pub gold_emotion: Option<Emotion>,
    /// `(position, word)` of first subwords, for hard span decoding.
    pub first_subwords: &'a [(usize, usize)],
}

/// Graph nodes produced for one example.
#[derive(Clone, Debug, Default)]
pub struct HeadOutput {
    /// Emotion log-probabilities `[1 × 7]`.
    pub emotion_logp: Option<Var>,
    /// Per-position tag log-probabilities `[len × 3]`.
    pub cause_logp: Option<Var>,
    /// `multi_c2e` pooling weights over content tokens `[1 × n]`.
    pub cause_attention: Option<Var>,
    /// `multi_e2c` emotion vector `M` `[1 × d_e]`.
    pub emotion_memory: Option<Var>,
}

impl Heads {
    /// Registers this variant's head parameters: weights `U[-scale, scale]`, biases 0.
    pub fn init_params<R: Rng + ?Sized>(
        config: &HeadConfig,
        d_model: usize,
        store: &mut ParamStore,
        rng: &mut R,
        scale: f64,
    ) -> Result<Heads> {
        config.validate()?;
        for &name in config.variant.param_names() {
            let shape = head_shape(name, d_model, config.emotion_dim);
            let n = shape.iter().product();
            let data = if name.starts_with('b') {
                vec![0.0; n]
            } else {
                (0..n).map(|_| rng.gen_range(-scale..=scale)).collect()
            };
            store.insert(name, Tensor::new(shape, data)?)?;
        }
        Heads::bind(config, d_model, store)
    }

    pub fn bind(config: &HeadConfig, d_model: usize, store: &ParamStore) -> Result<Heads> {
        config.validate()?;
        let mut heads = Heads {
            config: config.clone(),
            w_a: None,
            b_a: None,
            w_e: None,
            b_e: None,
            w_c: None,
            b_c: None,
            w_c2: None,
            b_c2: None,
            emb: None,
        };
        for &name in config.variant.param_names() {
            let id = store.expect_id(name)?;
            let expected = head_shape(name, d_model, config.emotion_dim);
            if store.get(id).shape() != expected.as_slice() {
                return Err(Error::Shape {
                    op: "head parameter",
                    lhs: expected,
                    rhs: store.get(id).shape().to_vec(),
                });
            }
            let slot = match name {
                W_A => &mut heads.w_a,
                B_A => &mut heads.b_a,
                W_E => &mut heads.w_e,
                B_E => &mut heads.b_e,
                W_C => &mut heads.w_c,
                B_C => &mut heads.b_c,
                W_C2 => &mut heads.w_c2,
                B_C2 => &mut heads.b_c2,
                _ => &mut heads.emb,
            };
            *slot = Some(id);
        }
        Ok(heads)
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    fn p(g: &mut Graph, store: &ParamStore, id: Option<ParamId>, name: &str) -> Result<Var> {
        let id = id.ok_or_else(|| Error::config(format!("head parameter {name} not initialised")))?;
        Ok(g.param(store, id))
    }

    fn pooled(&self, g: &mut Graph, store: &ParamStore, input: &HeadInput) -> Result<Var> {
        let attn = if self.config.pooler == PoolMode::Attention {
            Some((
                Self::p(g, store, self.w_a, W_A)?,
                Self::p(g, store, self.b_a, B_A)?,
            ))
        } else {
            None
        };
        pool(g, input.hidden, self.config.pooler, input.content, attn)
    }

    /// Emotion logits from a pooled vector, with dropout on the layer input.
    fn emotion_logits<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        h_f: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let h = g.dropout(h_f, self.config.dropout_p, training, rng)?;
        let (w, b) = (Self::p(g, store, self.w_e, W_E)?, Self::p(g, store, self.b_e, B_E)?);
        g.linear(h, w, b)
    }

    fn cause_logits<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        hidden: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let h = g.dropout(hidden, self.config.dropout_p, training, rng)?;
        let (w, b) = (Self::p(g, store, self.w_c, W_C)?, Self::p(g, store, self.b_c, B_C)?);
        g.linear(h, w, b)
    }

    /// Runs the variant's heads on one example's hidden states.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: &HeadInput,
        training: bool,
        rng: &mut R,
    ) -> Result<HeadOutput> {
        let forced = training && self.config.teacher_forcing;
        match self.config.variant {
            Variant::SingleEmotion => {
                let h_f = self.pooled(g, store, input)?;
                let logits = self.emotion_logits(g, store, h_f, training, rng)?;
                Ok(HeadOutput {
                    emotion_logp: Some(g.log_softmax(logits, 1)?),
                    ..Default::default()
                })
            }
            Variant::SingleCause => {
                let logits = self.cause_logits(g, store, input.hidden, training, rng)?;
                Ok(HeadOutput {
                    cause_logp: Some(g.log_softmax(logits, 1)?),
                    ..Default::default()
                })
            }
            Variant::Multi => self.forward_multi(g, store, input, training, rng),
            Variant::MultiC2e => self.forward_c2e(g, store, input, forced, training, rng),
            Variant::MultiE2c => self.forward_e2c(g, store, input, forced, training, rng),
        }
    }

    /// Both heads on the same hidden states.
    pub fn forward_multi<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: &HeadInput,
        training: bool,
        rng: &mut R,
    ) -> Result<HeadOutput> {
        let h_f = self.pooled(g, store, input)?;
        let e = self.emotion_logits(g, store, h_f, training, rng)?;
        let c = self.cause_logits(g, store, input.hidden, training, rng)?;
        Ok(HeadOutput {
            emotion_logp: Some(g.log_softmax(e, 1)?),
            cause_logp: Some(g.log_softmax(c, 1)?),
            ..Default::default()
        })
    }

    /// Cause probabilities become the pooling attention of the emotion head.
    pub fn forward_c2e<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: &HeadInput,
        teacher_forced: bool,
        training: bool,
        rng: &mut R,
    ) -> Result<HeadOutput> {
        if input.content.is_empty() {
            return Err(Error::config("cause attention needs at least one content token"));
        }
        let c_logits = self.cause_logits(g, store, input.hidden, training, rng)?;
        let cause_logp = g.log_softmax(c_logits, 1)?;

        let scores = if teacher_forced {
            let tags = input
                .gold_tags
                .ok_or_else(|| Error::config("teacher-forced multi_c2e training needs a gold span"))?;
            let pattern = input
                .content
                .iter()
                .map(|&p| match tags.get(p).copied().flatten() {
                    Some(t) => Ok(if t.is_cause() { 1.0 } else { 0.0 }),
                    None => Err(Error::config("gold span missing on a content token")),
                })
                .collect::<Result<Vec<f64>>>()?;
            g.constant(Tensor::row(&pattern))
        } else if self.config.hard_cause_attention {
            let pattern = hard_cause_pattern(g.value(cause_logp), input);
            g.constant(Tensor::row(&pattern))
        } else {
            // P(cause) = P(B) + P(I) = 1 − P(O)
            let probs = g.exp(cause_logp);
            let rows = g.gather_rows(probs, input.content)?;
            let p_out = g.slice_cols(rows, CauseTag::Outside.index(), 1)?;
            let p_cause = g.scale(p_out, -1.0);
            let p_cause = g.add_scalar(p_cause, 1.0);
            g.transpose(p_cause)?
        };
        let alpha = g.softmax(scores, 1)?;
        let content = g.gather_rows(input.hidden, input.content)?;
        let h_f = g.matmul(alpha, content)?;
        let e = self.emotion_logits(g, store, h_f, training, rng)?;
        Ok(HeadOutput {
            emotion_logp: Some(g.log_softmax(e, 1)?),
            cause_logp: Some(cause_logp),
            cause_attention: Some(alpha),
            ..Default::default()
        })
    }

    /// The emotion distribution conditions the tagger through `M = Σ eᵢ E[i]`.
    pub fn forward_e2c<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: &HeadInput,
        teacher_forced: bool,
        training: bool,
        rng: &mut R,
    ) -> Result<HeadOutput> {
        let h_f = self.pooled(g, store, input)?;
        let e = self.emotion_logits(g, store, h_f, training, rng)?;
        let emotion_logp = g.log_softmax(e, 1)?;
        let table = Self::p(g, store, self.emb, EMOTION_EMB)?;
        let memory = if teacher_forced {
            let gold = input
                .gold_emotion
                .ok_or_else(|| Error::config("teacher-forced multi_e2c training needs a gold emotion"))?;
            g.gather_rows(table, &[gold.index()])?
        } else {
            let probs = g.exp(emotion_logp);
            g.matmul(probs, table)?
        };
        let len = g.shape(input.hidden)[0];
        let tiled = g.repeat_rows(memory, len)?;
        let joined = g.concat_cols(&[input.hidden, tiled])?;
        let joined = g.dropout(joined, self.config.dropout_p, training, rng)?;
        let (w, b) = (Self::p(g, store, self.w_c2, W_C2)?, Self::p(g, store, self.b_c2, B_C2)?);
        let c = g.linear(joined, w, b)?;
        Ok(HeadOutput {
            emotion_logp: Some(emotion_logp),
            cause_logp: Some(g.log_softmax(c, 1)?),
            emotion_memory: Some(memory),
            ..Default::default()
        })
    }
}

/// 0/1 attention scores from the decoded predicted span.
fn hard_cause_pattern(cause_logp: &Tensor, input: &HeadInput) -> Vec<f64> {
    let word_tags: Vec<CauseTag> = input
        .first_subwords
        .iter()
        .map(|&(p, _)| argmax_tag(cause_logp.row_slice(p)))
        .collect();
    let words: Vec<usize> = input.first_subwords.iter().map(|&(_, w)| w).collect();
    let spans = decode_iob(&word_tags);
    let in_span = |word: usize| {
        words
            .iter()
            .position(|&w| w == word)
            .map(|k| spans.iter().any(|s| s.contains(k)))
            .unwrap_or(false)
    };
    // continuation pieces inherit their word through the nearest first subword
    let mut current_word = None;
    input
        .content
        .iter()
        .map(|&p| {
            if let Some(&(_, w)) = input.first_subwords.iter().find(|&&(fp, _)| fp == p) {
                current_word = Some(w);
            }
            match current_word {
                Some(w) if in_span(w) => 1.0,
                _ => 0.0,
            }
        })
        .collect()
}

pub(crate) fn argmax_tag(row: &[f64]) -> CauseTag {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    CauseTag::from_index(best).expect("three tag columns")
}

/// `e = softmax(W_e h_f + b_e)`.
pub fn emotion_scores(g: &mut Graph, h_f: Var, w_e: Var, b_e: Var) -> Result<Var> {
    let logits = g.linear(h_f, w_e, b_e)?;
    g.softmax(logits, 1)
}

/// `c_i = softmax(W_c h_i + b_c)` for every row of `hidden`.
pub fn cause_scores(g: &mut Graph, hidden: Var, w_c: Var, b_c: Var) -> Result<Var> {
    let logits = g.linear(hidden, w_c, b_c)?;
    g.softmax(logits, 1)
}

/// `−(1/b) Σⱼ log e_{j, gold(j)}` from per-example `[1 × 7]` log-probabilities.
pub fn nll_emotion(g: &mut Graph, log_probs: &[Var], gold: &[Emotion]) -> Result<Var> {
    if log_probs.is_empty() {
        return Err(Error::config("emotion loss over an empty batch"));
    }
    if log_probs.len() != gold.len() {
        return Err(Error::config("emotion loss: predictions and labels differ in length"));
    }
    let picked = log_probs
        .iter()
        .zip(gold)
        .map(|(&lp, e)| g.pick(lp, &[(0, e.index())]))
        .collect::<Result<Vec<_>>>()?;
    let total = g.sum(&picked)?;
    let total = g.sum_all(total);
    Ok(g.scale(total, -1.0 / log_probs.len() as f64))
}

/// `−(1/b) Σⱼ Σᵢ log c_{i, j, gold(i, j)}` over scored positions only.
///
/// Each item is one sentence: its `[len × 3]` log-probabilities and the
/// `(position, gold tag)` pairs that are scored. The token sum is divided by
/// the number of sentences, not the number of tokens.
pub fn nll_cause(g: &mut Graph, sentences: &[(Var, Vec<(usize, CauseTag)>)]) -> Result<Var> {
    if sentences.is_empty() {
        return Err(Error::config("cause loss over an empty batch"));
    }
    let mut terms = Vec::new();
    for (lp, scored) in sentences {
        if scored.is_empty() {
            continue;
        }
        let entries: Vec<(usize, usize)> = scored.iter().map(|&(p, t)| (p, t.index())).collect();
        let picked = g.pick(*lp, &entries)?;
        terms.push(g.sum_all(picked));
    }
    if terms.is_empty() {
        return Err(Error::config("cause loss: every token is ignored"));
    }
    let total = g.sum(&terms)?;
    Ok(g.scale(total, -1.0 / sentences.len() as f64))
}

/// `λ·NLL_emo + (1 − λ)·NLL_cause`; a zero-weighted term is left off the graph.
pub fn combine_losses(g: &mut Graph, nll_e: Var, nll_c: Var, lambda: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config(format!("lambda {lambda} outside [0,1]")));
    }
    if lambda == 1.0 {
        return Ok(nll_e);
    }
    if lambda == 0.0 {
        return Ok(nll_c);
    }
    let a = g.scale(nll_e, lambda);
    let b = g.scale(nll_c, 1.0 - lambda);
    g.add(a, b)
}
