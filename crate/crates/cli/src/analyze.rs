use std::fs;
use std::path::Path;

use emocause::metrics::EvalReport;
use emocause::train::MeanStd;
use serde::Deserialize;

use crate::commands::{CliError, CliResult, TrainReport};
use crate::manifest::write_text;
use crate::AnalyzeArgs;

#[derive(Deserialize)]
#[serde(untagged)]
enum AnyReport {
    Train(TrainReport),
    Eval(EvalReport),
}

struct Loaded {
    name: String,
    variant: String,
    /// Test reports, one per seed (a single entry for eval reports).
    reports: Vec<(Option<u64>, EvalReport)>,
}

fn load(dir: &Path) -> CliResult<Loaded> {
    let path = dir.join("report.json");
    if !path.is_file() {
        return Err(CliError::Usage(format!("missing report: {}", path.display())));
    }
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let parsed: AnyReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{} is not a train or eval report: {e}", path.display())))?;
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(match parsed {
        AnyReport::Train(t) => Loaded {
            name,
            variant: t.variant,
            reports: t.runs.into_iter().map(|r| (Some(r.seed), r.test)).collect(),
        },
        AnyReport::Eval(e) => Loaded {
            name,
            variant: String::new(),
            reports: vec![(None, e)],
        },
    })
}

/// Columns of the gold / non-gold comparison table.
pub const COMPARISON_HEADER: &str =
    "report,variant,seeds,gold_acc,gold_acc_std,not_gold_acc,not_gold_acc_std,emotion_macro_f1,cause_span_f1";

fn stat<F: Fn(&EvalReport) -> Option<f64>>(reports: &[(Option<u64>, EvalReport)], f: F) -> Option<MeanStd> {
    let values: Option<Vec<f64>> = reports.iter().map(|(_, r)| f(r)).collect();
    values.filter(|v| !v.is_empty()).map(|v| MeanStd::of(&v))
}

fn comparison_row(l: &Loaded) -> String {
    let cell = |m: Option<MeanStd>| m.map(|m| format!("{:.6}", m.mean)).unwrap_or_default();
    let std = |m: Option<MeanStd>| m.map(|m| format!("{:.6}", m.std)).unwrap_or_default();
    let gold = stat(&l.reports, |r| r.gold_acc);
    let not_gold = stat(&l.reports, |r| r.not_gold_acc);
    format!(
        "{},{},{},{},{},{},{},{},{}",
        l.name,
        l.variant,
        l.reports.len(),
        cell(gold),
        std(gold),
        cell(not_gold),
        std(not_gold),
        cell(stat(&l.reports, |r| r.emotion_macro_f1)),
        cell(stat(&l.reports, |r| r.cause_span.map(|s| s.f1))),
    )
}

pub const PER_EMOTION_HEADER: &str = "report,seed,emotion,support,correct,accuracy,f1,cause_span_f1";

pub fn per_emotion_csv(reports: &[(&str, &EvalReport)]) -> String {
    per_emotion_rows(reports.iter().map(|(n, r)| (*n, None, *r)))
}

fn per_emotion_rows<'a>(rows: impl Iterator<Item = (&'a str, Option<u64>, &'a EvalReport)>) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut s = format!("{PER_EMOTION_HEADER}\n");
    for (name, seed, r) in rows {
        for b in &r.per_emotion {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                name,
                seed.map(|s| s.to_string()).unwrap_or_default(),
                b.emotion,
                b.support,
                b.correct,
                f(b.accuracy),
                f(b.f1),
                f(b.cause_span.map(|c| c.f1)),
            ));
        }
    }
    s
}

pub fn cmd_analyze(args: AnalyzeArgs) -> CliResult<()> {
    let loaded = args.reports.iter().map(|d| load(d)).collect::<CliResult<Vec<_>>>()?;
    let mut table = format!("{COMPARISON_HEADER}\n");
    for l in &loaded {
        table.push_str(&comparison_row(l));
        table.push('\n');
    }
    let per_emotion = per_emotion_rows(
        loaded
            .iter()
            .flat_map(|l| l.reports.iter().map(move |(s, r)| (l.name.as_str(), *s, r))),
    );
    print!("{table}");
    for l in &loaded {
        if l.reports.iter().any(|(_, r)| r.not_gold_acc.is_none()) {
            log::warn!("{}: annotator labels missing, non-gold accuracy left empty", l.name);
        }
    }
    if let Some(out) = args.out {
        write_text(&out.join("comparison.csv"), &table)?;
        write_text(&out.join("per_emotion.csv"), &per_emotion)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}
