//! Corpus records, JSON-lines loading, label filtering, splitting and the
//! synthetic headline generator.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Emotion;
use crate::rng_from_seed;
use crate::text::CharSpan;

const BUILTIN_TEMPLATES: &str = include_str!("../resources/templates.txt");

/// Probability that a synthetic record carries one non-gold annotator label.
pub const DISTRACTOR_RATE: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub headline: String,
    /// Raw label string; see [`Example::gold_emotion`].
    pub emotion: String,
    /// Character offsets `[start, end)`.
    #[serde(with = "span_pair")]
    pub cause_span: CharSpan,
    #[serde(default)]
    pub annotator_emotions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<String>,
}

mod span_pair {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::text::CharSpan;

    pub fn serialize<S: Serializer>(span: &CharSpan, s: S) -> Result<S::Ok, S::Error> {
        [span.start, span.end].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CharSpan, D::Error> {
        let [start, end] = <[usize; 2]>::deserialize(d)?;
        Ok(CharSpan { start, end })
    }
}

impl Example {
    pub fn gold_emotion(&self) -> Option<Emotion> {
        Emotion::parse_label(&self.emotion)
    }

    fn validate(&self) -> Result<()> {
        let n = self.headline.chars().count();
        let s = self.cause_span;
        if s.start >= s.end || s.end > n {
            return Err(Error::data(
                &self.id,
                format!("cause span [{}, {}) invalid for a headline of {n} characters", s.start, s.end),
            ));
        }
        Ok(())
    }

    /// Text covered by the cause span.
    pub fn cause_text(&self) -> String {
        self.headline
            .chars()
            .skip(self.cause_span.start)
            .take(self.cause_span.end - self.cause_span.start)
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadedCorpus {
    pub examples: Vec<Example>,
    /// Records dropped for lacking a cause span.
    pub skipped_without_span: usize,
}

/// Reads one JSON record per line. Records without `cause_span` (absent or
/// null) are skipped and counted; everything else must parse and pass the
/// span bounds check.
pub fn load_corpus(path: &Path) -> Result<LoadedCorpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, path)
}

pub fn parse_corpus(text: &str, path: &Path) -> Result<LoadedCorpus> {
    let mut out = LoadedCorpus::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let Some(obj) = value.as_object() else {
            return Err(parse_err("record is not a JSON object".into()));
        };
        if obj.get("cause_span").map_or(true, |v| v.is_null()) {
            out.skipped_without_span += 1;
            continue;
        }
        let ex: Example = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        ex.validate().map_err(|e| parse_err(e.to_string()))?;
        out.examples.push(ex);
    }
    Ok(out)
}

/// JSON lines in the loader's schema.
pub fn to_jsonl(examples: &[Example]) -> Result<String> {
    let mut s = String::new();
    for ex in examples {
        s.push_str(&serde_json::to_string(ex)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn save_corpus(path: &Path, examples: &[Example]) -> Result<()> {
    fs::write(path, to_jsonl(examples)?).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FilterReport {
    pub kept: usize,
    /// `(label, count)` of dropped records, sorted by label.
    pub dropped: Vec<(String, usize)>,
}

/// Keeps records whose label is one of the seven target emotions and
/// rewrites the label to its canonical spelling.
pub fn filter_labels(examples: Vec<Example>) -> (Vec<Example>, FilterReport) {
    let mut report = FilterReport::default();
    let mut dropped = std::collections::BTreeMap::<String, usize>::new();
    let kept: Vec<Example> = examples
        .into_iter()
        .filter_map(|mut ex| match ex.gold_emotion() {
            Some(e) => {
                ex.emotion = e.as_str().to_string();
                Some(ex)
            }
            None => {
                *dropped.entry(ex.emotion.clone()).or_default() += 1;
                None
            }
        })
        .collect();
    report.kept = kept.len();
    report.dropped = dropped.into_iter().collect();
    (kept, report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

/// Seeded shuffle into `⌊0.8n⌋ / ⌊0.1n⌋ / rest`.
pub fn split(examples: &[Example], seed: u64) -> Result<Splits> {
    let n = examples.len();
    if n < 10 {
        return Err(Error::config(format!("need at least 10 examples to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let n_train = n * 8 / 10;
    let n_dev = n / 10;
    let take = |r: std::ops::Range<usize>| order[r].iter().map(|&i| examples[i].clone()).collect();
    Ok(Splits {
        train: take(0..n_train),
        dev: take(n_train..n_train + n_dev),
        test: take(n_train + n_dev..n),
    })
}

/// Emotion-keyed headline templates with a `{X}` cause slot, plus a shared
/// pool of cause phrases.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateBank {
    templates: Vec<Vec<String>>,
    causes: Vec<String>,
}

pub const SLOT: &str = "{X}";

impl TemplateBank {
    /// Lines `emotion | template` or `cause | phrase`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<TemplateBank> {
        let mut templates = vec![Vec::new(); Emotion::COUNT];
        let mut causes = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: String| Error::Parse {
                path: "<templates>".into(),
                line: i + 1,
                message: m,
            };
            let (key, body) = line
                .split_once('|')
                .map(|(k, b)| (k.trim(), b.trim()))
                .ok_or_else(|| bad("expected `label | text`".into()))?;
            if body.is_empty() {
                return Err(bad("empty text".into()));
            }
            if key == "cause" {
                causes.push(body.to_string());
            } else {
                let e = Emotion::parse_label(key).ok_or_else(|| bad(format!("unknown emotion {key:?}")))?;
                if body.matches(SLOT).count() != 1 {
                    return Err(bad(format!("template must contain {SLOT} exactly once")));
                }
                templates[e.index()].push(body.to_string());
            }
        }
        if causes.is_empty() {
            return Err(Error::config("template bank has no cause phrases"));
        }
        if templates.iter().all(Vec::is_empty) {
            return Err(Error::config("template bank has no headline templates"));
        }
        Ok(TemplateBank { templates, causes })
    }

    pub fn builtin() -> TemplateBank {
        TemplateBank::parse(BUILTIN_TEMPLATES).expect("bundled template bank parses")
    }

    pub fn load(path: &Path) -> Result<TemplateBank> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TemplateBank::parse(&text)
    }

    pub fn templates(&self, emotion: Emotion) -> &[String] {
        &self.templates[emotion.index()]
    }

    pub fn causes(&self) -> &[String] {
        &self.causes
    }

    /// Emotions with at least one template, in label order.
    pub fn emotions(&self) -> Vec<Emotion> {
        Emotion::ALL
            .into_iter()
            .filter(|e| !self.templates[e.index()].is_empty())
            .collect()
    }
}

/// `n` headlines cycling through the bank's emotions in label order, so class
/// counts differ by at most one. The cause span covers exactly the
/// substituted phrase. Annotators always include the gold label twice and,
/// with probability [`DISTRACTOR_RATE`], one other emotion.
pub fn generate_synthetic(n: usize, seed: u64, bank: &TemplateBank) -> Vec<Example> {
    let mut rng = rng_from_seed(seed);
    let emotions = bank.emotions();
    (0..n)
        .map(|i| {
            let emotion = emotions[i % emotions.len()];
            let templates = bank.templates(emotion);
            let template = &templates[rng.gen_range(0..templates.len())];
            let cause = &bank.causes[rng.gen_range(0..bank.causes.len())];
            let (pre, post) = template.split_once(SLOT).expect("validated template");
            let mut headline = String::from(pre);
            let start = headline.chars().count();
            headline.push_str(cause);
            let end = headline.chars().count();
            headline.push_str(post);
            if let Some(first) = headline.chars().next() {
                let upper: String = first.to_uppercase().collect();
                headline.replace_range(..first.len_utf8(), &upper);
            }
            let mut annotators = vec![emotion.as_str().to_string(); 2];
            if rng.gen_bool(DISTRACTOR_RATE) {
                let other = (emotion.index() + rng.gen_range(1..Emotion::COUNT)) % Emotion::COUNT;
                annotators.push(Emotion::ALL[other].as_str().to_string());
            }
            Example {
                id: format!("syn-{i:05}"),
                headline,
                emotion: emotion.as_str().to_string(),
                cause_span: CharSpan::new(start, end),
                annotator_emotions: annotators,
                knowledge: None,
            }
        })
        .collect()
}
