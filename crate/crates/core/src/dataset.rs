//! Fix-pair mining and the four dataset flavors (full file, reduced, and two
//! line windows), with JSONL import/export.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{diff_lines, LineDiff};
use crate::oracle::{does_fix, report_exists, Analyzer, AnalyzerError, Report, RuleCategory};
use crate::reduce::{code_reduce, ReduceError, ReductionConfig};
use crate::source::SourceText;
use crate::syntax::{parse, Grammar, LineMapping, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Flavor {
    FullOriginal,
    CodeReduced,
    Window3,
    LongContext,
}

impl Flavor {
    pub const ALL: [Flavor; 4] = [Flavor::FullOriginal, Flavor::CodeReduced, Flavor::Window3, Flavor::LongContext];

    pub fn as_str(self) -> &'static str {
        match self {
            Flavor::FullOriginal => "FullOriginal",
            Flavor::CodeReduced => "CodeReduced",
            Flavor::Window3 => "Window3",
            Flavor::LongContext => "LongContext",
        }
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Flavor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace(['-', '_', '@'], "");
        Self::ALL
            .into_iter()
            .find(|f| f.as_str().to_ascii_lowercase() == norm)
            .ok_or_else(|| format!("unknown flavor `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LicenseClass {
    Permissive,
    Restrictive,
}

impl LicenseClass {
    /// Restrictively licensed repositories form the test set.
    pub fn split(self) -> Split {
        match self {
            LicenseClass::Permissive => Split::Train,
            LicenseClass::Restrictive => Split::Test,
        }
    }
}

/// One dataset record. `line` is the report line within `pre`; `mapping`
/// maps lines of `pre` to the full pre-file (absent for FullOriginal).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixSample {
    pub id: String,
    pub repo: String,
    pub license_class: LicenseClass,
    pub split: Split,
    pub rule: String,
    pub category: RuleCategory,
    pub message: String,
    pub line: u32,
    pub flavor: Flavor,
    pub pre: SourceText,
    pub post: SourceText,
    pub mapping: Option<LineMapping>,
}

impl FixSample {
    /// The target report, located in `pre`.
    pub fn report(&self) -> Report {
        Report::new(&self.rule, self.category, self.message.clone(), self.line)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    PostUnparseable,
    ReportSurvives,
    NoOverlappingHunks,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::PostUnparseable => "post_unparseable",
            RejectReason::ReportSurvives => "report_survives",
            RejectReason::NoOverlappingHunks => "no_overlapping_hunks",
        })
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{which} file does not parse: {source}")]
    Unparseable {
        which: &'static str,
        #[source]
        source: ParseError,
    },
    #[error("sample rejected: {reason}")]
    RejectedSample { reason: RejectReason },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("invalid sample {id}: {message}")]
    Invalid { id: String, message: String },
    #[error(transparent)]
    Analyzer(#[from] AnalyzerError),
    #[error(transparent)]
    Reduce(#[from] ReduceError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Where a pre-version report ended up in the post-version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    /// Post line the report line was kept as, if it survived unchanged.
    pub tracked_line: Option<u32>,
    /// The report line itself was edited, so its location is a guess (the
    /// enclosing hunk).
    pub ambiguous: bool,
}

/// Reports of `pre` that are gone from the corresponding place in `post`.
pub fn mine_candidates(
    pre: &SourceText,
    post: &SourceText,
    analyzer: &mut Analyzer,
    grammar: Grammar,
) -> Result<Vec<(Report, Evidence)>, DatasetError> {
    parse(pre, grammar).map_err(|source| DatasetError::Unparseable { which: "pre", source })?;
    parse(post, grammar).map_err(|source| DatasetError::Unparseable { which: "post", source })?;
    let before = analyzer.analyze(pre)?;
    let after = analyzer.analyze(post)?;
    let diff = diff_lines(pre.lines(), post.lines());
    let mut out = Vec::new();
    for r in before {
        let same_rule = |l: u32| after.iter().any(|a| a.rule == r.rule && a.line == l);
        match diff.track(r.line) {
            Some(t) => {
                if !same_rule(t) {
                    out.push((r, Evidence { tracked_line: Some(t), ambiguous: false }));
                }
            }
            None => {
                let hunk = diff.hunk_of(r.line).expect("untracked lines lie in a hunk");
                if !hunk.new.clone().any(same_rule) {
                    out.push((r, Evidence { tracked_line: None, ambiguous: true }));
                }
            }
        }
    }
    Ok(out)
}

/// Indices of hunks whose pre-side lines touch `kept` (original lines) or lie
/// at distance 1 from one of them. A pure insertion before line `p` touches
/// lines `p - 1` and `p`.
pub fn relevant_hunks(diff: &LineDiff, kept: &BTreeSet<u32>) -> Vec<usize> {
    let near = |l: u32| kept.contains(&l) || kept.contains(&(l + 1)) || (l > 1 && kept.contains(&(l - 1)));
    diff.hunks
        .iter()
        .enumerate()
        .filter(|(_, h)| {
            if h.old.is_empty() {
                let p = h.old.start;
                kept.contains(&p) || (p > 1 && kept.contains(&(p - 1)))
            } else {
                h.old.clone().any(near)
            }
        })
        .map(|(i, _)| i)
        .collect()
}

/// The `kept` lines of `pre` with the selected hunks of `pre → post` applied.
pub fn project_hunks(
    pre: &SourceText,
    post: &SourceText,
    diff: &LineDiff,
    kept: &BTreeSet<u32>,
    hunks: &[usize],
) -> SourceText {
    let mut out = Vec::new();
    let mut line = 1u32;
    let emit_until = |until: u32, line: &mut u32, out: &mut Vec<String>| {
        while *line < until {
            if kept.contains(line) {
                out.push(pre.lines()[*line as usize - 1].clone());
            }
            *line += 1;
        }
    };
    for &i in hunks {
        let h = &diff.hunks[i];
        emit_until(h.old.start, &mut line, &mut out);
        out.extend(h.new.clone().map(|l| post.lines()[l as usize - 1].clone()));
        line = h.old.end;
    }
    emit_until(pre.len() as u32 + 1, &mut line, &mut out);
    SourceText::from_lines_like(out, pre)
}

/// A reduced fix pair: `(c, c′, l_{c→C})` plus the hunks of `C → C′` that
/// were projected onto `c`.
#[derive(Debug, Clone)]
pub struct ReducedPair {
    pub pre: SourceText,
    pub post: SourceText,
    pub mapping: LineMapping,
    pub hunks: Vec<usize>,
}

/// Reduce `pre` for `target` and project the relevant part of the human fix.
pub fn build_reduced_pair(
    pre: &SourceText,
    post: &SourceText,
    target: &Report,
    analyzer: &mut Analyzer,
    cfg: &ReductionConfig,
) -> Result<ReducedPair, DatasetError> {
    let outcome = code_reduce(pre, target, analyzer, cfg)?;
    let kept: BTreeSet<u32> = outcome.mapping.originals().collect();
    let diff = diff_lines(pre.lines(), post.lines());
    let hunks = relevant_hunks(&diff, &kept);
    if hunks.is_empty() {
        return Err(DatasetError::RejectedSample {
            reason: RejectReason::NoOverlappingHunks,
        });
    }
    let reduced_post = project_hunks(pre, post, &diff, &kept, &hunks);
    if parse(&reduced_post, cfg.grammar).is_err() {
        return Err(DatasetError::RejectedSample {
            reason: RejectReason::PostUnparseable,
        });
    }
    let mut local = target.clone();
    local.line = outcome.mapping.reduced_of(target.line).expect("reductions keep the report line");
    if !does_fix(analyzer, &reduced_post, &outcome.reduced, &local, cfg.grammar)? {
        return Err(DatasetError::RejectedSample {
            reason: RejectReason::ReportSurvives,
        });
    }
    Ok(ReducedPair {
        pre: outcome.reduced,
        post: reduced_post,
        mapping: outcome.mapping,
        hunks,
    })
}

/// Lines `max(1, ℓ−radius) ..= min(len, ℓ+radius)` with their mapping.
pub fn extract_window(code: &SourceText, line: u32, radius: u32) -> (SourceText, LineMapping) {
    let len = code.len() as u32;
    if len == 0 {
        return (SourceText::from_lines_like(Vec::<String>::new(), code), LineMapping::identity(0));
    }
    let line = line.clamp(1, len);
    let start = line.saturating_sub(radius).max(1);
    let end = line.saturating_add(radius).min(len);
    let lines = (start..=end).map(|l| code.lines()[l as usize - 1].clone());
    let mapping = LineMapping::from_originals((start..=end).collect()).expect("window lines increase");
    (SourceText::from_lines_like(lines, code), mapping)
}

/// Input manifest entry. Code comes inline or from files relative to the
/// manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub repo: String,
    pub license_class: LicenseClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_path: Option<PathBuf>,
}

impl ManifestEntry {
    pub fn load(&self, base: &Path) -> Result<(SourceText, SourceText), DatasetError> {
        let get = |inline: &Option<String>, path: &Option<PathBuf>, which: &str| -> Result<SourceText, DatasetError> {
            match (inline, path) {
                (Some(s), _) => Ok(SourceText::new(s)),
                (None, Some(p)) => Ok(SourceText::new(&fs::read_to_string(base.join(p))?)),
                (None, None) => Err(DatasetError::Invalid {
                    id: self.id.clone(),
                    message: format!("neither `{which}` nor `{which}_path` given"),
                }),
            }
        };
        Ok((get(&self.pre, &self.pre_path, "pre")?, get(&self.post, &self.post_path, "post")?))
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    read_jsonl(BufReader::new(fs::File::open(path)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlavorConfig {
    pub window_radius: u32,
    pub long_context_radius: u32,
    pub reduction: ReductionConfig,
}

impl Default for FlavorConfig {
    fn default() -> Self {
        Self {
            window_radius: 3,
            long_context_radius: 50,
            reduction: ReductionConfig::default(),
        }
    }
}

/// A mined pair that could not become samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub rule: String,
    pub line: u32,
    pub reason: String,
}

/// Mine one manifest entry and build every requested flavor for each
/// candidate report.
pub fn build_samples(
    entry: &ManifestEntry,
    pre: &SourceText,
    post: &SourceText,
    analyzer: &mut Analyzer,
    flavors: &[Flavor],
    cfg: &FlavorConfig,
) -> Result<(Vec<FixSample>, Vec<Rejection>), DatasetError> {
    let mut samples = Vec::new();
    let mut rejected = Vec::new();
    for (report, evidence) in mine_candidates(pre, post, analyzer, cfg.reduction.grammar)? {
        if evidence.ambiguous {
            log::info!("{}: {} at line {} has an ambiguous post location", entry.id, report.rule, report.line);
        }
        let id = format!("{}/{}@{}", entry.id, report.rule, report.line);
        let pair = match build_reduced_pair(pre, post, &report, analyzer, &cfg.reduction) {
            Ok(p) => p,
            Err(DatasetError::RejectedSample { reason }) => {
                rejected.push(Rejection {
                    id,
                    rule: report.rule.clone(),
                    line: report.line,
                    reason: reason.to_string(),
                });
                continue;
            }
            Err(DatasetError::Reduce(e)) => {
                rejected.push(Rejection {
                    id,
                    rule: report.rule.clone(),
                    line: report.line,
                    reason: e.to_string(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let diff = diff_lines(pre.lines(), post.lines());
        let make = |flavor, pre: SourceText, post: SourceText, line, mapping| FixSample {
            id: id.clone(),
            repo: entry.repo.clone(),
            license_class: entry.license_class,
            split: entry.license_class.split(),
            rule: report.rule.clone(),
            category: report.category,
            message: report.message.clone(),
            line,
            flavor,
            pre,
            post,
            mapping,
        };
        for &flavor in flavors {
            let sample = match flavor {
                Flavor::CodeReduced => {
                    let line = pair.mapping.reduced_of(report.line).expect("report line kept");
                    make(flavor, pair.pre.clone(), pair.post.clone(), line, Some(pair.mapping.clone()))
                }
                Flavor::FullOriginal => {
                    let all: BTreeSet<u32> = (1..=pre.len() as u32).collect();
                    let full_post = project_hunks(pre, post, &diff, &all, &pair.hunks);
                    make(flavor, pre.clone(), full_post, report.line, None)
                }
                Flavor::Window3 | Flavor::LongContext => {
                    let radius = if flavor == Flavor::Window3 {
                        cfg.window_radius
                    } else {
                        cfg.long_context_radius
                    };
                    let (window, mapping) = extract_window(pre, report.line, radius);
                    let kept: BTreeSet<u32> = mapping.originals().collect();
                    let inside = relevant_hunks(&diff, &kept);
                    let hunks: Vec<usize> = pair.hunks.iter().copied().filter(|h| inside.contains(h)).collect();
                    let window_post = project_hunks(pre, post, &diff, &kept, &hunks);
                    let line = mapping.reduced_of(report.line).expect("window holds its center");
                    make(flavor, window, window_post, line, Some(mapping))
                }
            };
            samples.push(sample);
        }
    }
    Ok((samples, rejected))
}

/// Structural invariants of a sample; with an analyzer, also the report
/// invariants of CodeReduced samples.
pub fn validate_sample(sample: &FixSample, analyzer: Option<&mut Analyzer>) -> Result<(), DatasetError> {
    let invalid = |message: String| DatasetError::Invalid {
        id: sample.id.clone(),
        message,
    };
    if sample.split != sample.license_class.split() {
        return Err(invalid("split does not follow the license class".into()));
    }
    if sample.line == 0 || sample.line as usize > sample.pre.len() {
        return Err(invalid(format!("line {} outside the pre-file", sample.line)));
    }
    if let Some(m) = &sample.mapping {
        if m.len() != sample.pre.len() {
            return Err(invalid("mapping length differs from the pre-file".into()));
        }
    }
    if let (Flavor::CodeReduced, Some(analyzer)) = (sample.flavor, analyzer) {
        let grammar = Grammar::MiniJs;
        let target = sample.report();
        let identity = LineMapping::identity(sample.pre.len());
        if parse(&sample.pre, grammar).is_err() || !report_exists(analyzer, &sample.pre, &target, &identity)? {
            return Err(invalid("reduced pre-file lost its report".into()));
        }
        if !does_fix(analyzer, &sample.post, &sample.pre, &target, grammar)? {
            return Err(invalid("reduced post-file does not fix the report".into()));
        }
    }
    Ok(())
}

/// No repository may feed both splits.
pub fn check_split_purity(samples: &[FixSample]) -> Result<(), DatasetError> {
    let mut seen: HashMap<&str, Split> = HashMap::new();
    for s in samples {
        if let Some(prev) = seen.insert(&s.repo, s.split) {
            if prev != s.split {
                return Err(DatasetError::Invalid {
                    id: s.id.clone(),
                    message: format!("repository {} appears in both splits", s.repo),
                });
            }
        }
    }
    Ok(())
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut w: W) -> Result<(), DatasetError> {
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parse one object per non-empty line; errors carry the 1-based line number.
pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(r: R) -> Result<Vec<T>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| DatasetError::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Validate (structurally, and semantically when an analyzer is given) and
/// write samples.
pub fn export_jsonl(samples: &[FixSample], path: &Path, mut analyzer: Option<&mut Analyzer>) -> Result<(), DatasetError> {
    for s in samples {
        validate_sample(s, analyzer.as_deref_mut())?;
    }
    check_split_purity(samples)?;
    write_jsonl(samples, BufWriter::new(fs::File::create(path)?))
}

pub fn import_jsonl(path: &Path) -> Result<Vec<FixSample>, DatasetError> {
    let samples: Vec<FixSample> = read_jsonl(BufReader::new(fs::File::open(path)?))?;
    for (i, s) in samples.iter().enumerate() {
        if s.split != s.license_class.split() {
            return Err(DatasetError::Schema {
                line: i + 1,
                message: format!("sample {}: split does not follow the license class", s.id),
            });
        }
    }
    Ok(samples)
}
