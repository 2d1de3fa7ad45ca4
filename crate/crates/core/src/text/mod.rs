//! Headline preprocessing: word splitting, subword tokenization, special-token
//! framing, and character-span to IOB alignment.

mod encode;
mod iob;
mod vocab;

pub use encode::{encode_pair, encode_single, EncodedInput, DEFAULT_PAIR_MAX_LEN, DEFAULT_SINGLE_MAX_LEN};
pub use iob::{align_span_to_iob, decode_iob, CharSpan, IobAlignment, WordSpan};
pub use vocab::{train_vocab, Vocab, CLS, CONTINUATION, PAD, SEP, UNK};

/// A lowercased word with its character offsets `[start, end)` in the source text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Splits on whitespace; every punctuation character becomes its own word.
/// Offsets count Unicode scalar values.
pub fn split_words(text: &str) -> Vec<Word> {
    let mut words = Vec::new();
    let mut current: Option<(usize, String)> = None;
    let flush = |current: &mut Option<(usize, String)>, end: usize, words: &mut Vec<Word>| {
        if let Some((start, raw)) = current.take() {
            words.push(Word {
                text: raw.to_lowercase(),
                start,
                end,
            });
        }
    };
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            flush(&mut current, i, &mut words);
        } else if is_punct(c) {
            flush(&mut current, i, &mut words);
            words.push(Word {
                text: c.to_lowercase().collect(),
                start: i,
                end: i + 1,
            });
        } else {
            current.get_or_insert_with(|| (i, String::new())).1.push(c);
        }
    }
    let n = text.chars().count();
    flush(&mut current, n, &mut words);
    words
}

/// Subword decomposition of one text.
#[derive(Clone, Debug, PartialEq)]
pub struct Tokenization {
    pub words: Vec<Word>,
    pub pieces: Vec<String>,
    pub ids: Vec<u32>,
    /// Source word of each piece.
    pub word_index: Vec<usize>,
    pub is_first_subword: Vec<bool>,
}

impl Tokenization {
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }
}

/// Greedy longest-match-first decomposition of each lowercased word.
/// A residue with no matching piece becomes a single `[UNK]`.
pub fn tokenize(text: &str, vocab: &Vocab) -> Tokenization {
    let words = split_words(text);
    let mut out = Tokenization {
        words: Vec::new(),
        pieces: Vec::new(),
        ids: Vec::new(),
        word_index: Vec::new(),
        is_first_subword: Vec::new(),
    };
    for (wi, word) in words.iter().enumerate() {
        let chars: Vec<char> = word.text.chars().collect();
        let mut start = 0;
        let mut first = true;
        while start < chars.len() {
            let mut matched = None;
            for end in (start + 1..=chars.len()).rev() {
                let mut cand: String = chars[start..end].iter().collect();
                if start > 0 {
                    cand.insert_str(0, CONTINUATION);
                }
                if let Some(id) = vocab.id(&cand) {
                    matched = Some((cand, id, end));
                    break;
                }
            }
            let (piece, id, next) = match matched {
                Some(m) => m,
                None => (UNK.to_string(), vocab.unk_id(), chars.len()),
            };
            out.pieces.push(piece);
            out.ids.push(id);
            out.word_index.push(wi);
            out.is_first_subword.push(first);
            first = false;
            start = next;
        }
    }
    out.words = words;
    out
}
