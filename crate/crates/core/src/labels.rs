use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The seven emotion classes; declaration order fixes the class index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Emotion {
    #[serde(rename = "anger")]
    Anger,
    #[serde(rename = "disgust")]
    Disgust,
    #[serde(rename = "fear")]
    Fear,
    #[serde(rename = "joy")]
    Joy,
    #[serde(rename = "sadness")]
    Sadness,
    #[serde(rename = "negative surprise")]
    NegativeSurprise,
    #[serde(rename = "positive surprise")]
    PositiveSurprise,
}

impl Emotion {
    pub const COUNT: usize = 7;
    pub const ALL: [Emotion; 7] = [
        Emotion::Anger,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Joy,
        Emotion::Sadness,
        Emotion::NegativeSurprise,
        Emotion::PositiveSurprise,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Emotion> {
        Emotion::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Anger => "anger",
            Emotion::Disgust => "disgust",
            Emotion::Fear => "fear",
            Emotion::Joy => "joy",
            Emotion::Sadness => "sadness",
            Emotion::NegativeSurprise => "negative surprise",
            Emotion::PositiveSurprise => "positive surprise",
        }
    }

    /// Parses a raw annotation label. Returns `None` for labels outside the
    /// seven-class set (e.g. `shame`, `optimism`, plain `surprise`).
    pub fn parse_label(raw: &str) -> Option<Emotion> {
        let norm = raw.trim().to_lowercase().replace(['_', '-'], " ");
        Emotion::ALL.into_iter().find(|e| e.as_str() == norm)
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Emotion::parse_label(s).ok_or_else(|| Error::config(format!("unknown emotion {s:?}")))
    }
}

/// Cause tags in the fixed order `{I-cause, O, B-cause}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CauseTag {
    Inside,
    Outside,
    Begin,
}

impl CauseTag {
    pub const COUNT: usize = 3;
    pub const ALL: [CauseTag; 3] = [CauseTag::Inside, CauseTag::Outside, CauseTag::Begin];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<CauseTag> {
        CauseTag::ALL.get(i).copied()
    }

    pub fn is_cause(self) -> bool {
        self != CauseTag::Outside
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CauseTag::Inside => "I-cause",
            CauseTag::Outside => "O",
            CauseTag::Begin => "B-cause",
        }
    }
}
