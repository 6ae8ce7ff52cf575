//! Static analyzers behind one interface: the builtin toy rules or an
//! external process speaking JSON lines. Also the predicates built on top of
//! them (report survival, provenance nodes, fix and regression checks).

pub mod builtin;
mod external;
mod taint;
mod walk;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use builtin::{RuleSet, PARSE_RULE};

use crate::diff::diff_lines;
use crate::source::SourceText;
use crate::syntax::{parse_ast, parses, Grammar, LineMapping, SyntaxNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleCategory {
    #[serde(rename = "AST")]
    Ast,
    Local,
    FileWide,
    SecurityLocal,
    SecurityFlow,
}

impl RuleCategory {
    pub const ALL: [RuleCategory; 5] = [
        RuleCategory::Ast,
        RuleCategory::Local,
        RuleCategory::FileWide,
        RuleCategory::SecurityLocal,
        RuleCategory::SecurityFlow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleCategory::Ast => "AST",
            RuleCategory::Local => "Local",
            RuleCategory::FileWide => "FileWide",
            RuleCategory::SecurityLocal => "SecurityLocal",
            RuleCategory::SecurityFlow => "SecurityFlow",
        }
    }
}

impl fmt::Display for RuleCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RuleCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown rule category `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub rule: String,
    pub category: RuleCategory,
    pub message: String,
    pub line: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance_lines: Option<BTreeSet<u32>>,
}

impl Report {
    pub fn new(rule: &str, category: RuleCategory, message: String, line: u32) -> Self {
        Self {
            rule: rule.to_owned(),
            category,
            message,
            line,
            provenance_lines: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error("failed to start analyzer `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("analyzer did not answer within {0:?}")]
    Timeout(Duration),
    #[error("malformed analyzer response: {0}")]
    Malformed(String),
    #[error("analyzer exited: {0}")]
    Exited(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnalyzerKind {
    Builtin(RuleSet),
    External { command: String, args: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalyzerConfig {
    pub timeout: Duration,
    pub max_restarts: u32,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            max_restarts: 2,
        }
    }
}

/// Which analyzer to run and how. Cheap to clone; every worker opens its
/// own [`Analyzer`] session from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalyzerHandle {
    pub kind: AnalyzerKind,
    pub config: AnalyzerConfig,
}

impl AnalyzerHandle {
    pub fn builtin(rules: RuleSet) -> Self {
        Self {
            kind: AnalyzerKind::Builtin(rules),
            config: AnalyzerConfig::default(),
        }
    }

    pub fn external(command: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            kind: AnalyzerKind::External {
                command: command.into(),
                args,
            },
            config: AnalyzerConfig::default(),
        }
    }

    pub fn with_config(mut self, config: AnalyzerConfig) -> Self {
        assert!(!config.timeout.is_zero(), "analyzer timeout must be positive");
        self.config = config;
        self
    }

    pub fn session(&self) -> Analyzer {
        Analyzer {
            handle: self.clone(),
            calls: 0,
            process: None,
        }
    }
}

impl Default for AnalyzerHandle {
    fn default() -> Self {
        Self::builtin(RuleSet::all())
    }
}

/// `builtin`, `builtin:<rules>` or `exec:<command> [args...]` (`external:`
/// is accepted as an alias).
impl FromStr for AnalyzerHandle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "builtin" => Ok(Self::builtin(rest.parse()?)),
            "exec" | "external" => {
                let mut words = rest.split_whitespace().map(str::to_owned);
                let command = words.next().ok_or("external analyzer needs a command")?;
                Ok(Self::external(command, words.collect()))
            }
            other => Err(format!("unknown analyzer kind `{other}` (expected builtin or external)")),
        }
    }
}

impl fmt::Display for AnalyzerHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            AnalyzerKind::Builtin(r) => write!(f, "builtin:{r}"),
            AnalyzerKind::External { command, args } => {
                write!(f, "exec:{command}")?;
                for a in args {
                    write!(f, " {a}")?;
                }
                Ok(())
            }
        }
    }
}

/// One analyzer session. Counts every `analyze` call; owns the child
/// process of an external analyzer.
pub struct Analyzer {
    handle: AnalyzerHandle,
    calls: u64,
    process: Option<external::Process>,
}

impl Analyzer {
    pub fn handle(&self) -> &AnalyzerHandle {
        &self.handle
    }

    /// Number of `analyze` invocations so far.
    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn reset_calls(&mut self) {
        self.calls = 0;
    }

    /// Health check; starts the child process of an external analyzer.
    pub fn ping(&mut self) -> Result<(), AnalyzerError> {
        match &self.handle.kind {
            AnalyzerKind::Builtin(_) => Ok(()),
            AnalyzerKind::External { command, args } => {
                external::ping(&mut self.process, command, args, &self.handle.config)
            }
        }
    }

    /// Reports sorted by `(line, rule)`.
    pub fn analyze(&mut self, code: &SourceText) -> Result<Vec<Report>, AnalyzerError> {
        self.calls += 1;
        match &self.handle.kind {
            AnalyzerKind::Builtin(rules) => Ok(builtin::run(rules, code)),
            AnalyzerKind::External { command, args } => {
                let reports = external::analyze(
                    &mut self.process,
                    command,
                    args,
                    &self.handle.config,
                    &code.text(),
                )?;
                Ok(builtin::finalize(reports))
            }
        }
    }
}

impl fmt::Debug for Analyzer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Analyzer")
            .field("handle", &self.handle)
            .field("calls", &self.calls)
            .finish()
    }
}

/// Does a report of `target.rule` exist whose line maps back to `target.line`?
pub fn report_exists(
    analyzer: &mut Analyzer,
    code: &SourceText,
    target: &Report,
    mapping: &LineMapping,
) -> Result<bool, AnalyzerError> {
    let reports = analyzer.analyze(code)?;
    Ok(reports
        .iter()
        .any(|r| r.rule == target.rule && mapping.original_of(r.line) == Some(target.line)))
}

/// Candidates with at least one line (mapped back to the original file) in
/// the target's provenance; all candidates when provenance is unknown.
pub fn approx_provenance_nodes<'t>(
    candidates: &[&'t SyntaxNode],
    target: &Report,
    mapping: &LineMapping,
) -> Vec<&'t SyntaxNode> {
    let Some(prov) = &target.provenance_lines else {
        return candidates.to_vec();
    };
    candidates
        .iter()
        .copied()
        .filter(|n| {
            n.span
                .lines()
                .any(|l| mapping.original_of(l).is_some_and(|o| prov.contains(&o)))
        })
        .collect()
}

/// Does `prediction` remove the `target` issue of `original`?
///
/// The report line is tracked through the line diff. If the line itself was
/// rewritten, the innermost enclosing function (if both its ends survive) is
/// searched instead, and failing that the whole file.
pub fn does_fix(
    analyzer: &mut Analyzer,
    prediction: &SourceText,
    original: &SourceText,
    target: &Report,
    grammar: Grammar,
) -> Result<bool, AnalyzerError> {
    if !parses(prediction, grammar) {
        return Ok(false);
    }
    let diff = diff_lines(original.lines(), prediction.lines());
    let reports = analyzer.analyze(prediction)?;
    let same_rule = reports.iter().filter(|r| r.rule == target.rule);
    if let Some(t) = diff.track(target.line) {
        return Ok(!same_rule.clone().any(|r| r.line == t));
    }
    let region = enclosing_function(original, target.line)
        .and_then(|(s, e)| Some((diff.track(s)?, diff.track(e)?)));
    Ok(match region {
        Some((s, e)) => !same_rule.clone().any(|r| s <= r.line && r.line <= e),
        None => same_rule.clone().next().is_none(),
    })
}

fn enclosing_function(code: &SourceText, line: u32) -> Option<(u32, u32)> {
    let program = parse_ast(code).ok()?;
    walk::functions(&program)[1..]
        .iter()
        .filter(|f| f.start <= line && line <= f.end)
        .max_by_key(|f| f.start)
        .map(|f| (f.start, f.end))
}

/// Per-rule report counts.
pub fn rule_counts(reports: &[Report]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for r in reports {
        *m.entry(r.rule.as_str()).or_insert(0) += 1;
    }
    m
}

/// True iff no rule reports more issues on `prediction` than on `original`.
pub fn no_new_issues(
    analyzer: &mut Analyzer,
    prediction: &SourceText,
    original: &SourceText,
) -> Result<bool, AnalyzerError> {
    let before = analyzer.analyze(original)?;
    let after = analyzer.analyze(prediction)?;
    let before = rule_counts(&before);
    let after = rule_counts(&after);
    Ok(after
        .iter()
        .all(|(rule, n)| *n <= before.get(rule).copied().unwrap_or(0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{get_nodes, parse};

    const FIG2A: &str = "const fs = require('fs');
const path = require('path');
function doUnrelated() {
  doAAA();
  doBBB();
  doCCC();
}
function uploadFile(fileName) {
  doDDD();

  dest = path.join(\"www\", fileName);
  fs.createWriteStream(dest);
}
function serverHandler(request, reply) {
  doUnrelated();
  uploadFile(request.payload.fileName);
}
";

    fn pt_target(code: &SourceText) -> Report {
        let mut a = AnalyzerHandle::default().session();
        a.analyze(code).unwrap().into_iter().find(|r| r.rule == "PT").unwrap()
    }

    #[test]
    fn counts_every_call() {
        let mut a = AnalyzerHandle::default().session();
        assert!(a.analyze(&SourceText::new("")).unwrap().is_empty());
        a.analyze(&SourceText::new("x();\n")).unwrap();
        assert_eq!(a.calls(), 2);
    }

    #[test]
    fn provenance_nodes_of_figure2() {
        let code = SourceText::new(FIG2A);
        let target = pt_target(&code);
        let tree = parse(&code, Grammar::MiniJs).unwrap();
        let l1 = get_nodes(&tree, 1);
        let kept = approx_provenance_nodes(&l1, &target, &LineMapping::identity(code.len()));
        let starts: Vec<u32> = kept.iter().map(|n| n.span.start).collect();
        assert_eq!(starts, vec![1, 2, 8, 14]);
        let mut no_prov = target.clone();
        no_prov.provenance_lines = None;
        assert_eq!(
            approx_provenance_nodes(&l1, &no_prov, &LineMapping::identity(code.len())).len(),
            l1.len()
        );
    }

    #[test]
    fn fix_predicates() {
        let code = SourceText::new(FIG2A);
        let target = pt_target(&code);
        let mut a = AnalyzerHandle::default().session();
        assert!(!does_fix(&mut a, &code, &code, &target, Grammar::MiniJs).unwrap());
        assert!(no_new_issues(&mut a, &code, &code).unwrap());

        let fixed = SourceText::new(&FIG2A.replace("\n\n", "\n  fileName = path.basename(fileName);\n"));
        assert!(does_fix(&mut a, &fixed, &code, &target, Grammar::MiniJs).unwrap());
        assert!(no_new_issues(&mut a, &fixed, &code).unwrap());

        let evil = SourceText::new(&format!("{FIG2A}eval(x);\n"));
        assert!(!no_new_issues(&mut a, &evil, &code).unwrap());

        let broken = SourceText::new("function (");
        assert!(!does_fix(&mut a, &broken, &code, &target, Grammar::MiniJs).unwrap());
    }

    #[test]
    fn rewritten_report_line_falls_back_to_enclosing_function() {
        let code = SourceText::new(FIG2A);
        let target = pt_target(&code);
        let mut a = AnalyzerHandle::default().session();
        // the sink line is rewritten but still vulnerable
        let still = SourceText::new(&FIG2A.replace("fs.createWriteStream(dest);", "fs.createWriteStream(dest, {});"));
        assert!(!does_fix(&mut a, &still, &code, &target, Grammar::MiniJs).unwrap());
        let gone = SourceText::new(&FIG2A.replace("  fs.createWriteStream(dest);\n", ""));
        assert!(does_fix(&mut a, &gone, &code, &target, Grammar::MiniJs).unwrap());
    }

    #[test]
    fn report_exists_through_mapping() {
        let code = SourceText::new(FIG2A);
        let target = pt_target(&code);
        let mut a = AnalyzerHandle::default().session();
        assert!(report_exists(&mut a, &code, &target, &LineMapping::identity(code.len())).unwrap());
        let no_sink = SourceText::new(&FIG2A.replace("  fs.createWriteStream(dest);\n", ""));
        assert!(!report_exists(&mut a, &no_sink, &target, &LineMapping::identity(no_sink.len())).unwrap());
    }

    #[test]
    fn handle_specs_round_trip() {
        for s in ["builtin:all", "builtin:PT,SQLi", "exec:python3 -u stub.py"] {
            let h: AnalyzerHandle = s.parse().unwrap();
            assert_eq!(h.to_string(), s);
        }
        assert!("nope".parse::<AnalyzerHandle>().is_err());
        assert_eq!(
            "external:stub".parse::<AnalyzerHandle>().unwrap(),
            AnalyzerHandle::external("stub", vec![])
        );
        assert_eq!("builtin".parse::<AnalyzerHandle>().unwrap(), AnalyzerHandle::default());
    }

    #[test]
    fn report_json_shape() {
        let mut r = Report::new("PT", RuleCategory::SecurityFlow, "m".into(), 3);
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"rule":"PT","category":"SecurityFlow","message":"m","line":3}"#
        );
        r.provenance_lines = Some([3, 1].into());
        let back: Report = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(serde_json::to_string(&RuleCategory::Ast).unwrap(), "\"AST\"");
    }
}
