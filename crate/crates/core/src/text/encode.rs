use super::{tokenize, Tokenization, Vocab};
use crate::error::{Error, Result};
use crate::labels::CauseTag;

pub const DEFAULT_SINGLE_MAX_LEN: usize = 64;
pub const DEFAULT_PAIR_MAX_LEN: usize = 128;

/// Encoder-ready token sequence.
///
/// Layout is `[CLS] x… [SEP]` or `[CLS] x… [SEP] z… [SEP]`, followed by
/// `[PAD]` up to the requested length. All per-token vectors have equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedInput {
    pub token_ids: Vec<u32>,
    /// 0 for the headline segment, 1 for the knowledge segment.
    pub segment_ids: Vec<u8>,
    /// Headline word of each token; `None` for specials, knowledge and padding.
    pub word_index: Vec<Option<usize>>,
    pub is_first_subword: Vec<bool>,
    /// Gold tag per token; `None` marks positions ignored by the tagger.
    pub iob_tags: Option<Vec<Option<CauseTag>>>,
    pub attention_mask: Vec<bool>,
    /// Headline pieces kept after truncation.
    pub headline_tokens: usize,
    /// Knowledge pieces kept after truncation.
    pub knowledge_tokens: usize,
    /// Number of headline words in the source text.
    pub headline_words: usize,
}

impl EncodedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn unpadded_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m).count()
    }

    /// Positions of headline pieces, `1..=n`.
    pub fn content_positions(&self) -> Vec<usize> {
        (1..=self.headline_tokens).collect()
    }

    /// `(position, word)` for each headline word whose first piece survived truncation.
    pub fn first_subword_positions(&self) -> Vec<(usize, usize)> {
        (1..=self.headline_tokens)
            .filter(|&p| self.is_first_subword[p])
            .filter_map(|p| self.word_index[p].map(|w| (p, w)))
            .collect()
    }

    /// Words whose first piece survived truncation.
    pub fn visible_words(&self) -> usize {
        self.first_subword_positions().len()
    }

    /// Positions scored by the tagging loss: first pieces of headline words.
    pub fn scored_positions(&self) -> Vec<(usize, CauseTag)> {
        let Some(tags) = &self.iob_tags else { return Vec::new() };
        self.first_subword_positions()
            .into_iter()
            .filter_map(|(p, _)| tags[p].map(|t| (p, t)))
            .collect()
    }

    /// Copies word-level tags onto every headline piece.
    pub fn attach_word_tags(&mut self, word_tags: &[CauseTag]) -> Result<()> {
        if word_tags.len() != self.headline_words {
            return Err(Error::config(format!(
                "{} word tags for {} headline words",
                word_tags.len(),
                self.headline_words
            )));
        }
        let tags = (0..self.len())
            .map(|p| {
                if self.segment_ids[p] == 0 && self.attention_mask[p] {
                    self.word_index[p].map(|w| word_tags[w])
                } else {
                    None
                }
            })
            .collect();
        self.iob_tags = Some(tags);
        Ok(())
    }

    /// Drops trailing padding.
    pub fn trimmed(&self) -> EncodedInput {
        let n = self.unpadded_len();
        EncodedInput {
            token_ids: self.token_ids[..n].to_vec(),
            segment_ids: self.segment_ids[..n].to_vec(),
            word_index: self.word_index[..n].to_vec(),
            is_first_subword: self.is_first_subword[..n].to_vec(),
            iob_tags: self.iob_tags.as_ref().map(|t| t[..n].to_vec()),
            attention_mask: self.attention_mask[..n].to_vec(),
            headline_tokens: self.headline_tokens,
            knowledge_tokens: self.knowledge_tokens,
            headline_words: self.headline_words,
        }
    }
}

fn check_max_len(max_len: usize) -> Result<()> {
    if max_len < 3 {
        return Err(Error::config(format!("max_len must be at least 3, got {max_len}")));
    }
    Ok(())
}

struct Builder<'v> {
    vocab: &'v Vocab,
    enc: EncodedInput,
}

impl<'v> Builder<'v> {
    fn new(vocab: &'v Vocab, headline_words: usize) -> Self {
        Builder {
            vocab,
            enc: EncodedInput {
                token_ids: Vec::new(),
                segment_ids: Vec::new(),
                word_index: Vec::new(),
                is_first_subword: Vec::new(),
                iob_tags: None,
                attention_mask: Vec::new(),
                headline_tokens: 0,
                knowledge_tokens: 0,
                headline_words,
            },
        }
    }

    fn special(&mut self, id: u32, segment: u8) {
        self.push(id, segment, None, false, true);
    }

    fn push(&mut self, id: u32, segment: u8, word: Option<usize>, first: bool, mask: bool) {
        let e = &mut self.enc;
        e.token_ids.push(id);
        e.segment_ids.push(segment);
        e.word_index.push(word);
        e.is_first_subword.push(first);
        e.attention_mask.push(mask);
    }

    fn pieces(&mut self, tok: &Tokenization, take: usize, segment: u8) {
        for i in 0..take {
            let word = (segment == 0).then_some(tok.word_index[i]);
            self.push(tok.ids[i], segment, word, tok.is_first_subword[i], true);
        }
    }

    fn finish(mut self, max_len: usize) -> EncodedInput {
        let pad = self.vocab.pad_id();
        while self.enc.len() < max_len {
            self.push(pad, 0, None, false, false);
        }
        self.enc
    }
}

/// `[CLS] x₁…xₙ [SEP]` padded to `max_len`; headline pieces are truncated so
/// `[SEP]` always stays the last unmasked position.
pub fn encode_single(headline: &str, vocab: &Vocab, max_len: usize) -> Result<EncodedInput> {
    check_max_len(max_len)?;
    let tok = tokenize(headline, vocab);
    let n = tok.len().min(max_len - 2);
    let mut b = Builder::new(vocab, tok.words.len());
    b.special(vocab.cls_id(), 0);
    b.pieces(&tok, n, 0);
    b.special(vocab.sep_id(), 0);
    b.enc.headline_tokens = n;
    Ok(b.finish(max_len))
}

/// `[CLS] x₁…xₙ [SEP] z₁…zₘ [SEP]` padded to `max_len`. Knowledge pieces are
/// dropped before any headline piece.
pub fn encode_pair(headline: &str, knowledge: &str, vocab: &Vocab, max_len: usize) -> Result<EncodedInput> {
    check_max_len(max_len)?;
    let x = tokenize(headline, vocab);
    let z = tokenize(knowledge, vocab);
    let budget = max_len - 3;
    let n = x.len().min(budget);
    let m = z.len().min(budget - n);
    let mut b = Builder::new(vocab, x.words.len());
    b.special(vocab.cls_id(), 0);
    b.pieces(&x, n, 0);
    b.special(vocab.sep_id(), 0);
    b.pieces(&z, m, 1);
    b.special(vocab.sep_id(), 1);
    b.enc.headline_tokens = n;
    b.enc.knowledge_tokens = m;
    Ok(b.finish(max_len))
}
