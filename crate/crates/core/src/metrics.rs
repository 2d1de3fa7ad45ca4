//! Emotion macro F1 and accuracy, exact span F1, per-emotion breakdowns and
//! non-gold annotator agreement.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Emotion;
use crate::model::{Instance, Prediction};
use crate::text::WordSpan;

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::config(format!("{what}: {a} predictions for {b} gold labels")));
    }
    Ok(())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// F1 of each label in label order; a label never predicted nor gold scores 0.
pub fn per_label_f1(preds: &[Emotion], golds: &[Emotion]) -> Result<Vec<f64>> {
    check_len(preds.len(), golds.len(), "macro F1")?;
    let mut tp = [0usize; Emotion::COUNT];
    let mut fp = [0usize; Emotion::COUNT];
    let mut fn_ = [0usize; Emotion::COUNT];
    for (p, g) in preds.iter().zip(golds) {
        if p == g {
            tp[p.index()] += 1;
        } else {
            fp[p.index()] += 1;
            fn_[g.index()] += 1;
        }
    }
    Ok((0..Emotion::COUNT)
        .map(|k| f1(ratio(tp[k], tp[k] + fp[k]), ratio(tp[k], tp[k] + fn_[k])))
        .collect())
}

/// Unweighted mean of the seven per-label F1 scores.
pub fn macro_f1(preds: &[Emotion], golds: &[Emotion]) -> Result<f64> {
    let per = per_label_f1(preds, golds)?;
    Ok(per.iter().sum::<f64>() / Emotion::COUNT as f64)
}

pub fn accuracy(preds: &[Emotion], golds: &[Emotion]) -> Result<f64> {
    check_len(preds.len(), golds.len(), "accuracy")?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(ratio(hits, preds.len()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpanScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl SpanScores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        SpanScores {
            precision,
            recall,
            f1: f1(precision, recall),
            tp,
            fp,
            fn_,
        }
    }
}

/// Exact-boundary micro P/R/F1 over all examples.
pub fn span_f1(preds: &[Vec<WordSpan>], golds: &[Vec<WordSpan>]) -> Result<SpanScores> {
    check_len(preds.len(), golds.len(), "span F1")?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, g) in preds.iter().zip(golds) {
        let p: HashSet<&WordSpan> = p.iter().collect();
        let g: HashSet<&WordSpan> = g.iter().collect();
        let hit = p.intersection(&g).count();
        tp += hit;
        fp += p.len() - hit;
        fn_ += g.len() - hit;
    }
    Ok(SpanScores::from_counts(tp, fp, fn_))
}

/// Fraction of examples whose prediction is an annotator label (restricted
/// to the seven emotions) other than the gold one. Each example counts once.
pub fn not_gold_accuracy(preds: &[Emotion], golds: &[Emotion], annotators: &[Vec<String>]) -> Result<f64> {
    check_len(preds.len(), golds.len(), "non-gold accuracy")?;
    check_len(preds.len(), annotators.len(), "non-gold accuracy")?;
    if annotators.iter().any(Vec::is_empty) {
        return Err(Error::config("non-gold accuracy needs annotator labels for every example"));
    }
    let hits = preds
        .iter()
        .zip(golds)
        .zip(annotators)
        .filter(|((p, g), a)| p != g && a.iter().filter_map(|l| Emotion::parse_label(l)).any(|l| l == **p))
        .count();
    Ok(ratio(hits, preds.len()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmotionBreakdown {
    pub emotion: Emotion,
    /// Examples with this gold emotion; zero marks the label as absent.
    pub support: usize,
    /// Correct emotion predictions among them.
    pub correct: usize,
    pub accuracy: Option<f64>,
    /// F1 of this label over the whole set.
    pub f1: Option<f64>,
    /// Span scores restricted to these examples.
    pub cause_span: Option<SpanScores>,
}

/// Metrics restricted to each gold emotion.
pub fn per_emotion_breakdown(
    preds: Option<&[Emotion]>,
    golds: &[Emotion],
    pred_spans: Option<&[Vec<WordSpan>]>,
    gold_spans: &[Vec<WordSpan>],
) -> Result<Vec<EmotionBreakdown>> {
    let per_f1 = match preds {
        Some(p) => Some(per_label_f1(p, golds)?),
        None => None,
    };
    if let Some(s) = pred_spans {
        check_len(s.len(), gold_spans.len(), "span breakdown")?;
    }
    Emotion::ALL
        .into_iter()
        .map(|e| {
            let idx: Vec<usize> = (0..golds.len()).filter(|&i| golds[i] == e).collect();
            let support = idx.len();
            let correct = preds.map_or(0, |p| idx.iter().filter(|&&i| p[i] == e).count());
            let cause_span = match pred_spans {
                Some(ps) if support > 0 => {
                    let p: Vec<_> = idx.iter().map(|&i| ps[i].clone()).collect();
                    let g: Vec<_> = idx.iter().map(|&i| gold_spans[i].clone()).collect();
                    Some(span_f1(&p, &g)?)
                }
                _ => None,
            };
            Ok(EmotionBreakdown {
                emotion: e,
                support,
                correct,
                accuracy: (preds.is_some() && support > 0).then(|| ratio(correct, support)),
                f1: per_f1.as_ref().filter(|_| support > 0).map(|f| f[e.index()]),
                cause_span,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub emotion_macro_f1: Option<f64>,
    pub emotion_accuracy: Option<f64>,
    /// Per-label F1 in label order.
    pub emotion_f1_per_label: Option<Vec<f64>>,
    pub cause_span: Option<SpanScores>,
    /// Same as `emotion_accuracy`; kept for the gold/non-gold comparison.
    pub gold_acc: Option<f64>,
    /// `None` when some example lacks annotator labels.
    pub not_gold_acc: Option<f64>,
    pub per_emotion: Vec<EmotionBreakdown>,
}

/// Columns of [`EvalReport::csv_row`].
pub const CSV_HEADER: &str =
    "n,emotion_macro_f1,emotion_accuracy,cause_span_precision,cause_span_recall,cause_span_f1,span_tp,span_fp,span_fn,gold_acc,not_gold_acc";

impl EvalReport {
    pub fn from_predictions(instances: &[Instance], preds: &[Prediction]) -> Result<EvalReport> {
        check_len(preds.len(), instances.len(), "evaluation")?;
        let golds: Vec<Emotion> = instances.iter().map(|i| i.emotion).collect();
        let emo: Option<Vec<Emotion>> = preds.iter().map(|p| p.emotion).collect();
        let spans: Option<Vec<Vec<WordSpan>>> = preds.iter().map(|p| p.spans.clone()).collect();
        let gold_spans: Vec<Vec<WordSpan>> = instances.iter().map(|i| i.gold_spans.clone()).collect();
        let annotators: Vec<Vec<String>> = instances.iter().map(|i| i.annotator_emotions.clone()).collect();

        let (macro_, acc, per, not_gold) = match &emo {
            Some(p) if !p.is_empty() => {
                let not_gold = match not_gold_accuracy(p, &golds, &annotators) {
                    Ok(v) => Some(v),
                    Err(_) => {
                        log::warn!("annotator labels missing; non-gold accuracy left empty");
                        None
                    }
                };
                (
                    Some(macro_f1(p, &golds)?),
                    Some(accuracy(p, &golds)?),
                    Some(per_label_f1(p, &golds)?),
                    not_gold,
                )
            }
            _ => (None, None, None, None),
        };
        let cause_span = match &spans {
            Some(s) if !s.is_empty() => Some(span_f1(s, &gold_spans)?),
            _ => None,
        };
        Ok(EvalReport {
            n: instances.len(),
            emotion_macro_f1: macro_,
            emotion_accuracy: acc,
            emotion_f1_per_label: per,
            cause_span,
            gold_acc: acc,
            not_gold_acc: not_gold,
            per_emotion: per_emotion_breakdown(emo.as_deref(), &golds, spans.as_deref(), &gold_spans)?,
        })
    }

    /// Headline metrics as `(name, value)` pairs in a fixed order.
    pub fn scalars(&self) -> Vec<(&'static str, f64)> {
        let mut out = Vec::new();
        if let Some(v) = self.emotion_macro_f1 {
            out.push(("emotion_macro_f1", v));
        }
        if let Some(v) = self.emotion_accuracy {
            out.push(("emotion_accuracy", v));
        }
        if let Some(s) = self.cause_span {
            out.push(("cause_span_f1", s.f1));
        }
        if let Some(v) = self.not_gold_acc {
            out.push(("not_gold_acc", v));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row matching [`CSV_HEADER`]; missing values are empty cells.
    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let u = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        let s = self.cause_span;
        [
            self.n.to_string(),
            f(self.emotion_macro_f1),
            f(self.emotion_accuracy),
            f(s.map(|s| s.precision)),
            f(s.map(|s| s.recall)),
            f(s.map(|s| s.f1)),
            u(s.map(|s| s.tp)),
            u(s.map(|s| s.fp)),
            u(s.map(|s| s.fn_)),
            f(self.gold_acc),
            f(self.not_gold_acc),
        ]
        .join(",")
    }
}
