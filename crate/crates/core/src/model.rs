//! Encoder plus heads, and the per-example data they consume.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::heads::{combine_losses, nll_cause, nll_emotion, HeadConfig, HeadInput, Heads};
use crate::labels::{CauseTag, Emotion};
use crate::tensor::{Graph, ParamId, ParamStore, Var};
use crate::text::{
    align_span_to_iob, decode_iob, encode_pair, encode_single, tokenize, CharSpan, EncodedInput, Vocab, WordSpan,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub heads: HeadConfig,
    /// Half-width of the uniform weight initialisation.
    pub init_scale: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.heads.validate()?;
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config(format!("init scale {} must be positive", self.init_scale)));
        }
        Ok(())
    }
}

/// One example ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: String,
    pub headline: String,
    /// Unpadded encoder input with gold tags attached.
    pub input: EncodedInput,
    pub emotion: Emotion,
    pub word_tags: Vec<CauseTag>,
    pub gold_spans: Vec<WordSpan>,
    pub annotator_emotions: Vec<String>,
}

impl Instance {
    /// Tokenizes, aligns the cause span and encodes as a single sequence or,
    /// with `knowledge`, as a headline/knowledge pair.
    #[allow(clippy::too_many_arguments)]
    pub fn prepare(
        id: &str,
        headline: &str,
        emotion: Emotion,
        span: CharSpan,
        annotator_emotions: &[String],
        knowledge: Option<&str>,
        vocab: &Vocab,
        max_len: usize,
    ) -> Result<Instance> {
        let tok = tokenize(headline, vocab);
        let aligned = align_span_to_iob(id, headline, span, &tok)?;
        let mut input = match knowledge {
            Some(k) => encode_pair(headline, k, vocab, max_len)?,
            None => encode_single(headline, vocab, max_len)?,
        };
        input.attach_word_tags(&aligned.word_tags)?;
        Ok(Instance {
            id: id.to_string(),
            headline: headline.to_string(),
            input: input.trimmed(),
            emotion,
            gold_spans: decode_iob(&aligned.word_tags),
            word_tags: aligned.word_tags,
            annotator_emotions: annotator_emotions.to_vec(),
        })
    }
}

/// Model outputs for one example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub emotion: Option<Emotion>,
    /// Probabilities in label order.
    pub emotion_probs: Option<Vec<f64>>,
    /// One tag per headline word; words lost to truncation are `O`.
    pub word_tags: Option<Vec<CauseTag>>,
    pub spans: Option<Vec<WordSpan>>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    encoder: Encoder,
    heads: Heads,
}

impl Model {
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<(Model, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let encoder = Encoder::init_params(&config.encoder, &mut store, rng, config.init_scale)?;
        let heads = Heads::init_params(&config.heads, config.encoder.d_model, &mut store, rng, config.init_scale)?;
        Ok((
            Model {
                config: config.clone(),
                encoder,
                heads,
            },
            store,
        ))
    }

    pub fn bind(config: &ModelConfig, store: &ParamStore) -> Result<Model> {
        config.validate()?;
        Ok(Model {
            config: config.clone(),
            encoder: Encoder::bind(&config.encoder, store)?,
            heads: Heads::bind(&config.heads, config.encoder.d_model, store)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn heads(&self) -> &Heads {
        &self.heads
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// Parameters whose gradient is identically zero because a softmax
    /// cancels them: the attention pooler bias and every attention key bias.
    pub fn shift_invariant_params(&self, store: &ParamStore) -> Vec<ParamId> {
        store
            .iter()
            .filter(|(_, name, _)| *name == crate::heads::B_A || name.ends_with(".attn.bk"))
            .map(|(id, _, _)| id)
            .collect()
    }

    /// Every parameter not listed by [`Model::shift_invariant_params`].
    pub fn gradient_check_params(&self, store: &ParamStore) -> Vec<ParamId> {
        let skip = self.shift_invariant_params(store);
        store.ids().filter(|id| !skip.contains(id)).collect()
    }

    fn forward_one<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        encoded: &EncodedInput,
        gold_emotion: Option<Emotion>,
        training: bool,
        rng: &mut R,
    ) -> Result<crate::heads::HeadOutput> {
        let hidden = self.encoder.encode(g, store, encoded, training, rng)?;
        let content = encoded.content_positions();
        let first = encoded.first_subword_positions();
        let input = HeadInput {
            hidden,
            content: &content,
            gold_tags: encoded.iob_tags.as_deref(),
            gold_emotion,
            first_subwords: &first,
        };
        self.heads.forward(g, store, &input, training, rng)
    }

    /// Training loss of a minibatch:
    /// `λ·NLL_emo + (1 − λ)·NLL_cause` for multi-task variants, the single
    /// task's NLL otherwise.
    pub fn batch_loss<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &[&Instance],
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::config("empty minibatch"));
        }
        let variant = self.config.heads.variant;
        let mut emo = Vec::new();
        let mut cause = Vec::new();
        for inst in batch {
            let out = self.forward_one(g, store, &inst.input, Some(inst.emotion), training, rng)?;
            if let Some(lp) = out.emotion_logp {
                emo.push(lp);
            }
            if let Some(lp) = out.cause_logp {
                cause.push((lp, inst.input.scored_positions()));
            }
        }
        let golds: Vec<Emotion> = batch.iter().map(|i| i.emotion).collect();
        let nll_e = if variant.has_emotion() {
            Some(nll_emotion(g, &emo, &golds)?)
        } else {
            None
        };
        let nll_c = if variant.has_cause() {
            Some(nll_cause(g, &cause)?)
        } else {
            None
        };
        match (nll_e, nll_c) {
            (Some(e), Some(c)) => {
                let lambda = self.config.heads.lambda.expect("validated multi-task config");
                combine_losses(g, e, c, lambda)
            }
            (Some(e), None) => Ok(e),
            (None, Some(c)) => Ok(c),
            (None, None) => unreachable!("every variant has a task"),
        }
    }

    /// Inference without dropout or teacher forcing.
    pub fn predict(&self, store: &ParamStore, inst: &Instance) -> Result<Prediction> {
        self.predict_encoded(store, &inst.input)
    }

    /// Prediction for an unlabeled headline, optionally paired with knowledge.
    pub fn predict_text(
        &self,
        store: &ParamStore,
        vocab: &Vocab,
        headline: &str,
        knowledge: Option<&str>,
        max_len: usize,
    ) -> Result<Prediction> {
        let input = match knowledge {
            Some(k) => encode_pair(headline, k, vocab, max_len)?,
            None => encode_single(headline, vocab, max_len)?,
        };
        self.predict_encoded(store, &input.trimmed())
    }

    fn predict_encoded(&self, store: &ParamStore, encoded: &EncodedInput) -> Result<Prediction> {
        let mut g = Graph::new();
        let mut rng = crate::rng_from_seed(0);
        let out = self.forward_one(&mut g, store, encoded, None, false, &mut rng)?;
        let mut pred = Prediction {
            emotion: None,
            emotion_probs: None,
            word_tags: None,
            spans: None,
        };
        if let Some(lp) = out.emotion_logp {
            let probs: Vec<f64> = g.value(lp).data().iter().map(|x| x.exp()).collect();
            let mut best = 0;
            for (k, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = k;
                }
            }
            pred.emotion = Emotion::from_index(best);
            pred.emotion_probs = Some(probs);
        }
        if let Some(lp) = out.cause_logp {
            let values = g.value(lp);
            let mut tags = vec![CauseTag::Outside; encoded.headline_words];
            for (p, w) in encoded.first_subword_positions() {
                tags[w] = crate::heads::argmax_tag(values.row_slice(p));
            }
            pred.spans = Some(decode_iob(&tags));
            pred.word_tags = Some(tags);
        }
        Ok(pred)
    }
}

/// Lowercased text of a word span, words joined by single spaces.
pub fn span_text(headline: &str, span: WordSpan) -> String {
    let words = crate::text::split_words(headline);
    words
        .get(span.start..=span.end.min(words.len().saturating_sub(1)))
        .map(|ws| ws.iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" "))
        .unwrap_or_default()
}
