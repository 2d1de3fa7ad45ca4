use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Graph, Var};
use crate::error::{Error, Result};

/// How per-token states are reduced to one sentence vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Cls,
    Mean,
    Max,
    #[default]
    Attention,
}

impl PoolMode {
    pub const ALL: [PoolMode; 4] = [PoolMode::Cls, PoolMode::Mean, PoolMode::Max, PoolMode::Attention];

    pub fn as_str(self) -> &'static str {
        match self {
            PoolMode::Cls => "cls",
            PoolMode::Mean => "mean",
            PoolMode::Max => "max",
            PoolMode::Attention => "attention",
        }
    }
}

impl fmt::Display for PoolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PoolMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown pooler {s:?}")))
    }
}

/// Reduces `hidden[len × d]` to `[1 × d]`.
///
/// `content` lists the rows that count as content tokens; `Cls` ignores it and
/// takes row 0. `attn` is `(W_a[1×d], b_a[1])` and is required for attention.
pub fn pool(
    g: &mut Graph,
    hidden: Var,
    mode: PoolMode,
    content: &[usize],
    attn: Option<(Var, Var)>,
) -> Result<Var> {
    if mode == PoolMode::Cls {
        return g.gather_rows(hidden, &[0]);
    }
    if content.is_empty() {
        return Err(Error::config(format!("{mode} pooling needs at least one content token")));
    }
    let rows = g.gather_rows(hidden, content)?;
    match mode {
        PoolMode::Mean => Ok(g.mean_rows(rows)),
        PoolMode::Max => Ok(g.max_rows(rows)),
        PoolMode::Attention => {
            let (w, b) = attn.ok_or_else(|| Error::config("attention pooling requires W_a and b_a"))?;
            let scores = g.linear(rows, w, b)?; // [n×1]
            let scores = g.transpose(scores)?; // [1×n]
            let alpha = g.softmax(scores, 1)?;
            g.matmul(alpha, rows)
        }
        PoolMode::Cls => unreachable!(),
    }
}

/// Attention weights α over `content` rows, exposed for inspection.
pub fn attention_weights(g: &mut Graph, hidden: Var, content: &[usize], w: Var, b: Var) -> Result<Var> {
    let rows = g.gather_rows(hidden, content)?;
    let scores = g.linear(rows, w, b)?;
    let scores = g.transpose(scores)?;
    g.softmax(scores, 1)
}
