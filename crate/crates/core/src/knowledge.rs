//! Common-sense reaction phrases for a headline, and their rendering as a
//! second input segment.
//!
//! Two providers ship: a JSON-lines cache keyed on the normalised headline
//! (so externally generated outputs can be dropped in) and a keyword lexicon
//! for synthetic data.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::split_words;

pub const DEFAULT_TOP_K: usize = 2;
/// Emitted for both relations when no lexicon keyword matches.
pub const FALLBACK_PHRASE: &str = "unsure";

const BUILTIN_LEXICON: &str = include_str!("../resources/lexicon.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relations {
    #[serde(rename = "xReact")]
    XReact,
    #[serde(rename = "oReact")]
    OReact,
    #[serde(rename = "both")]
    Both,
}

impl Relations {
    pub const ALL: [Relations; 3] = [Relations::XReact, Relations::OReact, Relations::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            Relations::XReact => "xReact",
            Relations::OReact => "oReact",
            Relations::Both => "both",
        }
    }

    pub fn wants_x(self) -> bool {
        self != Relations::OReact
    }

    pub fn wants_o(self) -> bool {
        self != Relations::XReact
    }
}

impl fmt::Display for Relations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relations {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Relations::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown relation set {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeRequest {
    pub id: String,
    pub headline: String,
    pub relations: Relations,
    /// Phrases kept per relation.
    pub top_k: usize,
}

impl KnowledgeRequest {
    pub fn new(id: impl Into<String>, headline: impl Into<String>, relations: Relations) -> Self {
        KnowledgeRequest {
            id: id.into(),
            headline: headline.into(),
            relations,
            top_k: DEFAULT_TOP_K,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeResult {
    #[serde(rename = "xReact", default)]
    pub x_react: Vec<String>,
    #[serde(rename = "oReact", default)]
    pub o_react: Vec<String>,
}

impl KnowledgeResult {
    fn restricted(&self, relations: Relations, top_k: usize) -> KnowledgeResult {
        let take = |v: &Vec<String>, on: bool| {
            if on {
                v.iter().take(top_k).cloned().collect()
            } else {
                Vec::new()
            }
        };
        KnowledgeResult {
            x_react: take(&self.x_react, relations.wants_x()),
            o_react: take(&self.o_react, relations.wants_o()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.x_react.is_empty() && self.o_react.is_empty()
    }
}

pub trait KnowledgeProvider {
    /// Deterministic for a given provider and request.
    fn provide(&self, request: &KnowledgeRequest) -> Result<KnowledgeResult>;
}

fn check_request(request: &KnowledgeRequest) -> Result<()> {
    if request.top_k == 0 {
        return Err(Error::Knowledge {
            id: request.id.clone(),
            message: "top_k must be at least 1".into(),
        });
    }
    Ok(())
}

fn join_phrases(phrases: &[String]) -> String {
    match phrases {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// `"This person feels A and B. Others feel C."`, restricted to `relations`.
pub fn render_template(result: &KnowledgeResult, relations: Relations) -> String {
    let mut parts = Vec::new();
    if relations.wants_x() && !result.x_react.is_empty() {
        parts.push(format!("This person feels {}.", join_phrases(&result.x_react)));
    }
    if relations.wants_o() && !result.o_react.is_empty() {
        parts.push(format!("Others feel {}.", join_phrases(&result.o_react)));
    }
    parts.join(" ")
}

/// Cache key: trimmed and lowercased.
pub fn normalize_headline(headline: &str) -> String {
    headline.trim().to_lowercase()
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    headline: String,
    #[serde(rename = "xReact", default)]
    x_react: Vec<String>,
    #[serde(rename = "oReact", default)]
    o_react: Vec<String>,
}

/// Exact-match lookup over a JSON-lines cache.
#[derive(Clone, Debug, Default)]
pub struct FileProvider {
    path: PathBuf,
    entries: HashMap<String, KnowledgeResult>,
    warnings: Vec<String>,
}

impl FileProvider {
    /// Reads `{"headline", "xReact", "oReact"}` objects, one per line. Blank
    /// lines are skipped; on duplicate headlines the last line wins and a
    /// warning is recorded.
    pub fn load(path: &Path) -> Result<FileProvider> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut provider = FileProvider {
            path: path.to_path_buf(),
            ..Default::default()
        };
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CacheLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            let phrases = parsed.x_react.iter().chain(&parsed.o_react);
            if phrases.clone().any(|p| p.trim().is_empty()) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "empty phrase".into(),
                });
            }
            let key = normalize_headline(&parsed.headline);
            let result = KnowledgeResult {
                x_react: parsed.x_react,
                o_react: parsed.o_react,
            };
            if provider.entries.insert(key.clone(), result).is_some() {
                let w = format!("{}:{}: duplicate headline {key:?}, keeping the later entry", path.display(), i + 1);
                log::warn!("{w}");
                provider.warnings.push(w);
            }
        }
        Ok(provider)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

impl KnowledgeProvider for FileProvider {
    fn provide(&self, request: &KnowledgeRequest) -> Result<KnowledgeResult> {
        check_request(request)?;
        self.entries
            .get(&normalize_headline(&request.headline))
            .map(|r| r.restricted(request.relations, request.top_k))
            .ok_or_else(|| Error::KnowledgeMiss(request.headline.clone()))
    }
}

/// Writes a cache readable by [`FileProvider::load`], one line per entry in the given order.
pub fn write_cache(path: &Path, entries: &[(String, KnowledgeResult)]) -> Result<()> {
    let mut out = Vec::new();
    for (headline, r) in entries {
        let line = CacheLine {
            headline: headline.clone(),
            x_react: r.x_react.clone(),
            o_react: r.o_react.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct LexiconEntry {
    keyword: String,
    x_react: Vec<String>,
    o_react: Vec<String>,
}

/// Keyword-triggered reactions. Phrases of every keyword found in the
/// headline are collected in word order, deduplicated, and cut to `top_k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LexiconProvider {
    entries: Vec<LexiconEntry>,
}

impl LexiconProvider {
    /// Parses lines `keyword | x1, x2 | o1, o2`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<LexiconProvider> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('|').map(str::trim).collect();
            let bad = |m: &str| Error::Parse {
                path: PathBuf::from("<lexicon>"),
                line: i + 1,
                message: m.to_string(),
            };
            if fields.len() != 3 || fields[0].is_empty() {
                return Err(bad("expected `keyword | xReact phrases | oReact phrases`"));
            }
            let list = |s: &str| -> Vec<String> {
                s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(String::from).collect()
            };
            entries.push(LexiconEntry {
                keyword: fields[0].to_lowercase(),
                x_react: list(fields[1]),
                o_react: list(fields[2]),
            });
        }
        Ok(LexiconProvider { entries })
    }

    pub fn builtin() -> LexiconProvider {
        LexiconProvider::parse(BUILTIN_LEXICON).expect("bundled lexicon parses")
    }

    pub fn load(path: &Path) -> Result<LexiconProvider> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        LexiconProvider::parse(&text)
    }
}

impl KnowledgeProvider for LexiconProvider {
    fn provide(&self, request: &KnowledgeRequest) -> Result<KnowledgeResult> {
        check_request(request)?;
        let mut full = KnowledgeResult::default();
        for word in split_words(&request.headline) {
            for e in self.entries.iter().filter(|e| e.keyword == word.text) {
                for p in &e.x_react {
                    if !full.x_react.contains(p) {
                        full.x_react.push(p.clone());
                    }
                }
                for p in &e.o_react {
                    if !full.o_react.contains(p) {
                        full.o_react.push(p.clone());
                    }
                }
            }
        }
        if full.x_react.is_empty() && full.o_react.is_empty() {
            full.x_react.push(FALLBACK_PHRASE.into());
            full.o_react.push(FALLBACK_PHRASE.into());
        }
        Ok(full.restricted(request.relations, request.top_k))
    }
}

/// Provider choice as written on the command line: `lexicon`, `file:PATH`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum KnowledgeSource {
    None,
    Lexicon,
    File(PathBuf),
}

impl KnowledgeSource {
    pub fn open(&self) -> Result<Option<Box<dyn KnowledgeProvider + Send + Sync>>> {
        Ok(match self {
            KnowledgeSource::None => None,
            KnowledgeSource::Lexicon => Some(Box::new(LexiconProvider::builtin())),
            KnowledgeSource::File(p) => Some(Box::new(FileProvider::load(p)?)),
        })
    }
}

impl fmt::Display for KnowledgeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KnowledgeSource::None => f.write_str("none"),
            KnowledgeSource::Lexicon => f.write_str("lexicon"),
            KnowledgeSource::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl FromStr for KnowledgeSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(KnowledgeSource::None),
            "lexicon" => Ok(KnowledgeSource::Lexicon),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(KnowledgeSource::File(PathBuf::from(p))),
                _ => Err(Error::config(format!("knowledge source must be none, lexicon or file:PATH, got {s:?}"))),
            },
        }
    }
}

impl From<KnowledgeSource> for String {
    fn from(k: KnowledgeSource) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for KnowledgeSource {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}
