//! Pass@k and ExactMatch@k over merged predictions.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FixSample, Flavor};
use crate::merge::merge_back;
use crate::oracle::{does_fix, no_new_issues, Analyzer, AnalyzerHandle, Report, RuleCategory};
use crate::source::SourceText;
use crate::syntax::{Grammar, LineMapping};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionForm {
    /// Predictions rewrite the flavor's `pre` (reduced code or a window).
    #[default]
    Reduced,
    Full,
}

/// Ranked model outputs for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub sample_id: String,
    pub predictions: Vec<String>,
    #[serde(default)]
    pub form: PredictionForm,
}

/// The part of a sample a model saw, when it was not the full file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReducedView {
    pub pre: SourceText,
    pub post: SourceText,
    pub mapping: LineMapping,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSample {
    pub id: String,
    pub rule: String,
    pub category: RuleCategory,
    pub message: String,
    /// Report line in `original`.
    pub line: u32,
    pub original: SourceText,
    pub gold: SourceText,
    pub reduced: Option<ReducedView>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    NoSamples,
    #[error("sample {0} has no FullOriginal record")]
    MissingOriginal(String),
    #[error("k values must be positive")]
    BadK,
}

impl EvalSample {
    pub fn target(&self) -> Report {
        Report::new(&self.rule, self.category, self.message.clone(), self.line)
    }

    /// Pair FullOriginal records with the records of one other flavor (or
    /// none when predictions are full files).
    pub fn assemble(samples: &[FixSample], view: Option<Flavor>) -> Result<Vec<EvalSample>, EvalError> {
        let mut views: HashMap<&str, &FixSample> = HashMap::new();
        if let Some(flavor) = view {
            for s in samples.iter().filter(|s| s.flavor == flavor) {
                views.insert(&s.id, s);
            }
        }
        let mut out = Vec::new();
        for full in samples.iter().filter(|s| s.flavor == Flavor::FullOriginal) {
            let reduced = views.get(full.id.as_str()).map(|v| ReducedView {
                pre: v.pre.clone(),
                post: v.post.clone(),
                mapping: v.mapping.clone().expect("non-full flavors carry a mapping"),
                line: v.line,
            });
            out.push(EvalSample {
                id: full.id.clone(),
                rule: full.rule.clone(),
                category: full.category,
                message: full.message.clone(),
                line: full.line,
                original: full.pre.clone(),
                gold: full.post.clone(),
                reduced,
            });
        }
        if let Some(missing) = views.keys().find(|id| !out.iter().any(|s| s.id == **id)) {
            return Err(EvalError::MissingOriginal((*missing).to_owned()));
        }
        Ok(out)
    }
}

/// Trailing whitespace stripped per line, LF endings, trailing blank lines
/// dropped.
pub fn normalize(text: &str) -> String {
    let unified = text.replace("\r\n", "\n");
    let mut lines: Vec<&str> = unified.split('\n').map(str::trim_end).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Score reduced predictions against the reduced pair without merging.
    pub pre_merge: bool,
    pub grammar: Grammar,
}

/// Per-prediction outcomes, in rank order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub category: RuleCategory,
    pub pass: Vec<bool>,
    pub exact: Vec<bool>,
}

impl SampleScore {
    pub fn pass_at(&self, k: usize) -> bool {
        self.pass.iter().take(k).any(|&b| b)
    }

    pub fn exact_at(&self, k: usize) -> bool {
        self.exact.iter().take(k).any(|&b| b)
    }
}

/// What a prediction is compared against, after merging if needed.
struct Scoring<'a> {
    candidate: Option<SourceText>,
    original: &'a SourceText,
    gold: &'a SourceText,
    target: Report,
}

fn prepare<'a>(sample: &'a EvalSample, form: PredictionForm, raw: &str, opts: &EvalOptions) -> Scoring<'a> {
    let p = SourceText::new(raw);
    match (form, &sample.reduced) {
        (PredictionForm::Reduced, Some(view)) if opts.pre_merge => {
            let mut target = sample.target();
            target.line = view.line;
            Scoring {
                candidate: Some(p),
                original: &view.pre,
                gold: &view.post,
                target,
            }
        }
        (PredictionForm::Reduced, Some(view)) => {
            let merged = merge_back(&sample.original, &view.pre, &p, &view.mapping)
                .map_err(|e| log::warn!("{}: merge failed: {e}", sample.id))
                .ok();
            Scoring {
                candidate: merged,
                original: &sample.original,
                gold: &sample.gold,
                target: sample.target(),
            }
        }
        _ => Scoring {
            candidate: Some(p),
            original: &sample.original,
            gold: &sample.gold,
            target: sample.target(),
        },
    }
}

/// Exact-match flags of the first `k` predictions.
pub fn exact_flags(sample: &EvalSample, preds: Option<&PredictionSet>, k: usize, opts: &EvalOptions) -> Vec<bool> {
    let Some(preds) = preds else { return Vec::new() };
    preds
        .predictions
        .iter()
        .take(k)
        .map(|raw| {
            let s = prepare(sample, preds.form, raw, opts);
            s.candidate
                .is_some_and(|c| normalize(&c.text()) == normalize(&s.gold.text()))
        })
        .collect()
}

/// `DoesFix ∧ NoNewIssues` flags of the first `k` predictions. Analyzer
/// failures count as a failed prediction.
pub fn pass_flags(
    sample: &EvalSample,
    preds: Option<&PredictionSet>,
    analyzer: &mut Analyzer,
    k: usize,
    opts: &EvalOptions,
) -> Vec<bool> {
    let Some(preds) = preds else { return Vec::new() };
    preds
        .predictions
        .iter()
        .take(k)
        .map(|raw| {
            let s = prepare(sample, preds.form, raw, opts);
            let Some(candidate) = s.candidate else { return false };
            let verdict = does_fix(analyzer, &candidate, s.original, &s.target, opts.grammar)
                .and_then(|fixed| Ok(fixed && no_new_issues(analyzer, &candidate, s.original)?));
            verdict.unwrap_or_else(|e| {
                log::warn!("{}: analyzer failed: {e}", sample.id);
                false
            })
        })
        .collect()
}

pub fn score_sample(
    sample: &EvalSample,
    preds: Option<&PredictionSet>,
    analyzer: &mut Analyzer,
    k: usize,
    opts: &EvalOptions,
) -> SampleScore {
    SampleScore {
        sample_id: sample.id.clone(),
        category: sample.category,
        pass: pass_flags(sample, preds, analyzer, k, opts),
        exact: exact_flags(sample, preds, k, opts),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub samples: usize,
    /// k → fraction; `None` for an empty group.
    pub pass_at: BTreeMap<usize, Option<f64>>,
    pub exact_match_at: BTreeMap<usize, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ks: Vec<usize>,
    pub categories: BTreeMap<RuleCategory, Metrics>,
    pub overall: Metrics,
    pub per_sample: Vec<SampleScore>,
}

fn metrics<'a>(scores: impl Iterator<Item = &'a SampleScore> + Clone, ks: &[usize]) -> Metrics {
    let n = scores.clone().count();
    let frac = |hit: &dyn Fn(&SampleScore) -> bool| {
        if n == 0 {
            None
        } else {
            Some(scores.clone().filter(|s| hit(s)).count() as f64 / n as f64)
        }
    };
    Metrics {
        samples: n,
        pass_at: ks.iter().map(|&k| (k, frac(&|s| s.pass_at(k)))).collect(),
        exact_match_at: ks.iter().map(|&k| (k, frac(&|s| s.exact_at(k)))).collect(),
    }
}

pub fn aggregate(per_sample: Vec<SampleScore>, ks: &[usize]) -> EvalResult {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let categories = RuleCategory::ALL
        .into_iter()
        .map(|c| (c, metrics(per_sample.iter().filter(move |s| s.category == c), &ks)))
        .collect();
    let overall = metrics(per_sample.iter(), &ks);
    EvalResult {
        ks,
        categories,
        overall,
        per_sample,
    }
}

/// Score every sample sequentially with one analyzer session.
pub fn evaluate(
    samples: &[EvalSample],
    predictions: &[PredictionSet],
    analyzer: &AnalyzerHandle,
    ks: &[usize],
    opts: &EvalOptions,
) -> Result<EvalResult, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::NoSamples);
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(EvalError::BadK);
    }
    let k = *ks.iter().max().expect("non-empty");
    let by_id: HashMap<&str, &PredictionSet> = predictions.iter().map(|p| (p.sample_id.as_str(), p)).collect();
    let mut session = analyzer.session();
    let scores = samples
        .iter()
        .map(|s| score_sample(s, by_id.get(s.id.as_str()).copied(), &mut session, k, opts))
        .collect();
    Ok(aggregate(scores, ks))
}

/// Pass@k alone.
pub fn pass_at_k(
    samples: &[EvalSample],
    predictions: &[PredictionSet],
    analyzer: &AnalyzerHandle,
    k: usize,
    opts: &EvalOptions,
) -> Result<f64, EvalError> {
    let r = evaluate(samples, predictions, analyzer, &[k], opts)?;
    Ok(r.overall.pass_at[&k].unwrap_or(0.0))
}

/// ExactMatch@k alone; needs no analyzer.
pub fn exact_match_at_k(
    samples: &[EvalSample],
    predictions: &[PredictionSet],
    k: usize,
    opts: &EvalOptions,
) -> Result<f64, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::NoSamples);
    }
    if k == 0 {
        return Err(EvalError::BadK);
    }
    let by_id: HashMap<&str, &PredictionSet> = predictions.iter().map(|p| (p.sample_id.as_str(), p)).collect();
    let hits = samples
        .iter()
        .filter(|s| exact_flags(s, by_id.get(s.id.as_str()).copied(), k, opts).contains(&true))
        .count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Aligned text table: one row per category plus the overall row.
pub fn render_table(result: &EvalResult) -> String {
    let mut header = format!("{:<14} {:>7}", "Category", "Samples");
    for k in &result.ks {
        header.push_str(&format!(" {:>8}", format!("Pass@{k}")));
    }
    for k in &result.ks {
        header.push_str(&format!(" {:>8}", format!("EM@{k}")));
    }
    let mut out = header;
    out.push('\n');
    let row = |out: &mut String, name: &str, m: &Metrics| {
        let cell = |v: Option<f64>| v.map_or("-".to_owned(), |x| format!("{:.2}", 100.0 * x));
        let _ = write!(out, "{:<14} {:>7}", name, m.samples);
        for k in &result.ks {
            let _ = write!(out, " {:>8}", cell(m.pass_at[k]));
        }
        for k in &result.ks {
            let _ = write!(out, " {:>8}", cell(m.exact_match_at[k]));
        }
        out.push('\n');
    };
    for (c, m) in &result.categories {
        row(&mut out, c.as_str(), m);
    }
    row(&mut out, "Overall", &result.overall);
    out
}
