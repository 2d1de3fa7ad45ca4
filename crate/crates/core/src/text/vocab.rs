use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use super::split_words;
use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
/// Prefix marking a word-internal piece.
pub const CONTINUATION: &str = "##";

const SPECIALS: [&str; 4] = [PAD, UNK, CLS, SEP];

/// Bijective token ↔ id map. Ids are line numbers of the vocabulary file.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    pad: u32,
    unk: u32,
    cls: u32,
    sep: u32,
}

impl Vocab {
    /// Builds a vocabulary from tokens in id order. All four special tokens
    /// must be present.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::config(format!("empty vocabulary entry at id {i}")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::config(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        let find = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| Error::config(format!("vocabulary lacks {s}")))
        };
        Ok(Vocab {
            pad: find(PAD)?,
            unk: find(UNK)?,
            cls: find(CLS)?,
            sep: find(SEP)?,
            tokens,
            index,
        })
    }

    /// Specials at ids 0..4 followed by `tokens`.
    pub fn with_specials<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens.into_iter().map(Into::into));
        Vocab::from_tokens(all)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad_id(&self) -> u32 {
        self.pad
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn cls_id(&self) -> u32 {
        self.cls
    }

    pub fn sep_id(&self) -> u32 {
        self.sep
    }

    /// One token per line, UTF-8, in id order.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Vocab::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::from_text(&text)
    }
}

/// Learns a merge-based subword vocabulary of at most `max_size` entries.
///
/// Every character seen in the corpus is present both as a word-initial
/// piece and as a `##` continuation, so corpus words never map to `[UNK]`.
/// Merges are applied greedily by pair frequency; ties go to the
/// lexicographically smallest pair.
pub fn train_vocab<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::config("cannot train a vocabulary on an empty corpus"));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for line in corpus {
        for w in split_words(line.as_ref()) {
            *counts.entry(w.text).or_default() += 1;
        }
    }

    let mut alphabet = BTreeSet::new();
    for word in counts.keys() {
        for c in word.chars() {
            alphabet.insert(c.to_string());
            alphabet.insert(format!("{CONTINUATION}{c}"));
        }
    }
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet.iter().cloned());
    if tokens.len() > max_size {
        return Err(Error::config(format!(
            "max vocabulary size {max_size} is below the {} specials and alphabet entries",
            tokens.len()
        )));
    }
    let mut known: BTreeSet<String> = tokens.iter().cloned().collect();

    let mut words: Vec<(Vec<String>, usize)> = counts
        .into_iter()
        .map(|(w, n)| {
            let symbols = w
                .chars()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        c.to_string()
                    } else {
                        format!("{CONTINUATION}{c}")
                    }
                })
                .collect();
            (symbols, n)
        })
        .collect();

    while tokens.len() < max_size {
        let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
        for (symbols, n) in &words {
            for w in symbols.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += n;
            }
        }
        let Some(((a, b), _)) = pairs
            .into_iter()
            .max_by(|(p1, c1), (p2, c2)| c1.cmp(c2).then_with(|| p2.cmp(p1)))
        else {
            break;
        };
        let (a, b) = (a.to_string(), b.to_string());
        let merged = format!("{a}{}", b.strip_prefix(CONTINUATION).unwrap_or(&b));
        for (symbols, _) in &mut words {
            let mut i = 0;
            while i + 1 < symbols.len() {
                if symbols[i] == a && symbols[i + 1] == b {
                    symbols[i] = merged.clone();
                    symbols.remove(i + 1);
                }
                i += 1;
            }
        }
        if known.insert(merged.clone()) {
            tokens.push(merged);
        }
    }
    Vocab::from_tokens(tokens)
}
