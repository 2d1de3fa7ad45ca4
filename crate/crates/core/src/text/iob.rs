use serde::{Deserialize, Serialize};

use super::Tokenization;
use crate::error::{Error, Result};
use crate::labels::CauseTag;

/// Character offsets `[start, end)` into a headline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn new(start: usize, end: usize) -> Self {
        CharSpan { start, end }
    }
}

/// Inclusive word-index span `start..=end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WordSpan {
    pub start: usize,
    pub end: usize,
}

impl WordSpan {
    pub fn new(start: usize, end: usize) -> Self {
        WordSpan { start, end }
    }

    pub fn contains(&self, word: usize) -> bool {
        self.start <= word && word <= self.end
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IobAlignment {
    pub word_tags: Vec<CauseTag>,
    /// One tag per subword piece; continuation pieces copy their word's tag.
    pub token_tags: Vec<CauseTag>,
}

/// Tags every word overlapping `span`: the first gets `B`, the rest `I`.
/// Partially covered words are included whole.
pub fn align_span_to_iob(
    id: &str,
    headline: &str,
    span: CharSpan,
    tokens: &Tokenization,
) -> Result<IobAlignment> {
    let n_chars = headline.chars().count();
    if span.start >= span.end {
        return Err(Error::data(id, format!("inverted or empty cause span [{}, {})", span.start, span.end)));
    }
    if span.end > n_chars {
        return Err(Error::data(
            id,
            format!("cause span [{}, {}) exceeds headline length {n_chars}", span.start, span.end),
        ));
    }
    let mut word_tags = vec![CauseTag::Outside; tokens.words.len()];
    let mut opened = false;
    for (tag, w) in word_tags.iter_mut().zip(&tokens.words) {
        if w.start < span.end && span.start < w.end {
            *tag = if opened { CauseTag::Inside } else { CauseTag::Begin };
            opened = true;
        }
    }
    if !opened {
        return Err(Error::data(id, "cause span covers no word"));
    }
    let token_tags = tokens.word_index.iter().map(|&w| word_tags[w]).collect();
    Ok(IobAlignment { word_tags, token_tags })
}

/// Maximal `B I*` runs. An `I` after `O` or at the start opens a span.
pub fn decode_iob(tags: &[CauseTag]) -> Vec<WordSpan> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &t) in tags.iter().enumerate() {
        match t {
            CauseTag::Outside => {
                if let Some(s) = open.take() {
                    spans.push(WordSpan::new(s, i - 1));
                }
            }
            CauseTag::Begin => {
                if let Some(s) = open.replace(i) {
                    spans.push(WordSpan::new(s, i - 1));
                }
            }
            CauseTag::Inside => {
                open.get_or_insert(i);
            }
        }
    }
    if let Some(s) = open {
        spans.push(WordSpan::new(s, tags.len() - 1));
    }
    spans
}
