//! Report-preserving code reduction: hierarchical delta debugging over the
//! line-span tree, with a provenance-guided bulk removal before each level.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{approx_provenance_nodes, report_exists, Analyzer, AnalyzerError, AnalyzerHandle, Report};
use crate::source::SourceText;
use crate::syntax::{get_nodes, parse, remove_nodes_from_code, Grammar, LineMapping, NodeId, ParseError, SyntaxNode, SyntaxTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ReductionMode {
    #[default]
    Provenance,
    #[serde(rename = "VanillaHDD")]
    VanillaHdd,
}

impl fmt::Display for ReductionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReductionMode::Provenance => "Provenance",
            ReductionMode::VanillaHdd => "VanillaHDD",
        })
    }
}

impl FromStr for ReductionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "provenance" => Ok(ReductionMode::Provenance),
            "vanillahdd" | "vanilla-hdd" | "hdd" => Ok(ReductionMode::VanillaHdd),
            _ => Err(format!("unknown reduction mode `{s}` (expected provenance or vanilla-hdd)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionConfig {
    pub mode: ReductionMode,
    pub max_fixpoint_iterations: u32,
    pub max_analyzer_calls: u64,
    pub grammar: Grammar,
    /// Re-check every accepted state with a fresh, uncounted session.
    #[serde(default)]
    pub verify_accepted: bool,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self {
            mode: ReductionMode::Provenance,
            max_fixpoint_iterations: 10,
            max_analyzer_calls: 2000,
            grammar: Grammar::MiniJs,
            verify_accepted: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// The initial check that the report is raised at all.
    Check,
    Provenance,
    DDMin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub pass: u32,
    pub level: u32,
    pub phase: Phase,
    /// Number of nodes the attempt tried to remove.
    pub attempted: usize,
    pub accepted: bool,
    /// Whether the attempt was charged as an analyzer call.
    pub charged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionOutcome {
    pub reduced: SourceText,
    pub mapping: LineMapping,
    pub analyzer_calls: u64,
    pub mode: ReductionMode,
    pub passes: u32,
    pub trace: Vec<TraceStep>,
    /// False when the fixpoint cap stopped the outer loop early.
    pub converged: bool,
    /// Accepted states re-checked under `verify_accepted`.
    pub verified_states: u64,
}

#[derive(Debug, Error)]
pub enum ReduceError {
    #[error("input does not parse: {0}")]
    Unparseable(#[from] ParseError),
    #[error("report {rule} at line {line} is not raised on the input")]
    ReportAbsent { rule: String, line: u32 },
    #[error("analyzer call budget of {limit} exhausted")]
    CallBudgetExceeded {
        limit: u64,
        /// Best state reached before the budget ran out.
        partial: Box<ReductionOutcome>,
    },
    #[error(transparent)]
    Analyzer(#[from] AnalyzerError),
    #[error("accepted state fails re-verification at pass {pass}, level {level}")]
    InvariantViolated { pass: u32, level: u32 },
}

/// Current candidate: code, its tree and its mapping to the input file.
#[derive(Clone)]
struct State {
    code: SourceText,
    tree: SyntaxTree,
    mapping: LineMapping,
}

enum StepError {
    Budget,
    Analyzer(AnalyzerError),
    Invariant { level: u32 },
}

impl From<AnalyzerError> for StepError {
    fn from(e: AnalyzerError) -> Self {
        StepError::Analyzer(e)
    }
}

struct Reducer<'a> {
    analyzer: &'a mut Analyzer,
    target: &'a Report,
    cfg: &'a ReductionConfig,
    calls: u64,
    /// Candidate text -> verdict; repeated candidates cost nothing.
    cache: HashMap<String, bool>,
    trace: Vec<TraceStep>,
    pass: u32,
    verified: u64,
}

impl Reducer<'_> {
    /// `Parses ∧ ReportExists` on the code left after removing `victims`.
    /// Returns the new state when accepted.
    fn attempt(
        &mut self,
        state: &State,
        victims: &[NodeId],
        level: u32,
        phase: Phase,
    ) -> Result<Option<State>, StepError> {
        let removal = remove_nodes_from_code(victims, &state.code, &state.tree, &state.mapping);
        let key = removal.code.text();
        let (ok, charged) = match self.cache.get(&key) {
            Some(&ok) => (ok, false),
            None => {
                let parses = removal.tree.is_some();
                // a provenance attempt is charged one call even when it
                // short-circuits on parsing
                let charged = parses || phase == Phase::Provenance;
                if charged {
                    if self.calls >= self.cfg.max_analyzer_calls {
                        return Err(StepError::Budget);
                    }
                    self.calls += 1;
                }
                let ok = parses && report_exists(self.analyzer, &removal.code, self.target, &removal.mapping)?;
                self.cache.insert(key, ok);
                (ok, charged)
            }
        };
        self.trace.push(TraceStep {
            pass: self.pass,
            level,
            phase,
            attempted: victims.len(),
            accepted: ok,
            charged,
        });
        if !ok {
            return Ok(None);
        }
        if self.cfg.verify_accepted {
            let mut fresh = self.analyzer.handle().session();
            let good = parse(&removal.code, self.cfg.grammar).is_ok()
                && report_exists(&mut fresh, &removal.code, self.target, &removal.mapping)?;
            if !good {
                return Err(StepError::Invariant { level });
            }
            self.verified += 1;
        }
        let tree = removal.tree.expect("accepted candidates parse");
        Ok(Some(State {
            code: removal.code,
            tree,
            mapping: removal.mapping,
        }))
    }

    /// Line of `state.code` that carries the target report.
    fn report_line(&self, state: &State) -> Option<u32> {
        state.mapping.reduced_of(self.target.line)
    }

    /// Deletion candidates at `level`, minus nodes holding the report line.
    fn candidates<'t>(&self, state: &'t State, level: u32) -> Vec<&'t SyntaxNode> {
        let pin = self.report_line(state);
        let mut nodes: Vec<&SyntaxNode> = get_nodes(&state.tree, level)
            .into_iter()
            .filter(|n| pin.is_none_or(|l| !n.span.contains(l)))
            .collect();
        nodes.sort_by_key(|n| (n.span.start, n.id));
        nodes
    }

    /// Classic ddmin over `nodes` (ids of `base.tree`): find a small subset
    /// to keep such that removing the rest still passes the test.
    /// The accepted state is left in `best` even when the budget runs out.
    fn ddmin(&mut self, base: &State, nodes: &[NodeId], level: u32, best: &mut State) -> Result<(), StepError> {
        let mut keep: Vec<NodeId> = nodes.to_vec();
        let mut n = 2usize;
        let victims_for = |keep: &[NodeId]| -> Vec<NodeId> {
            let k: HashSet<&NodeId> = keep.iter().collect();
            nodes.iter().filter(|id| !k.contains(id)).copied().collect()
        };
        while !keep.is_empty() {
            let n_eff = n.min(keep.len());
            let chunks = split(&keep, n_eff);
            let mut progressed = false;
            // reduce to complement
            for i in 0..chunks.len() {
                let complement: Vec<NodeId> = chunks
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .flat_map(|(_, c)| c.iter().copied())
                    .collect();
                if let Some(s) = self.attempt(base, &victims_for(&complement), level, Phase::DDMin)? {
                    *best = s;
                    keep = complement;
                    n = (n_eff - 1).max(2);
                    progressed = true;
                    break;
                }
            }
            // reduce to subset (identical to complements when there are two chunks)
            if !progressed && chunks.len() > 2 {
                for chunk in &chunks {
                    if let Some(s) = self.attempt(base, &victims_for(chunk), level, Phase::DDMin)? {
                        *best = s;
                        keep = chunk.clone();
                        n = 2;
                        progressed = true;
                        break;
                    }
                }
            }
            if !progressed {
                if n_eff >= keep.len() {
                    break;
                }
                n = (n_eff * 2).min(keep.len());
            }
        }
        Ok(())
    }

    /// One top-down sweep over all levels. Returns the new state and whether
    /// anything was deleted.
    fn sweep(&mut self, mut state: State) -> (State, bool, Option<StepError>) {
        let start_len = state.code.len();
        let mut level = 1;
        while level <= state.tree.depth() {
            let candidates: Vec<NodeId> = self.candidates(&state, level).iter().map(|n| n.id).collect();
            if candidates.is_empty() {
                level += 1;
                continue;
            }
            if self.cfg.mode == ReductionMode::Provenance {
                let nodes = self.candidates(&state, level);
                let keep: HashSet<NodeId> = approx_provenance_nodes(&nodes, self.target, &state.mapping)
                    .iter()
                    .map(|n| n.id)
                    .collect();
                let victims: Vec<NodeId> = candidates.iter().filter(|id| !keep.contains(id)).copied().collect();
                if !victims.is_empty() {
                    match self.attempt(&state, &victims, level, Phase::Provenance) {
                        Ok(Some(s)) => state = s,
                        Ok(None) => {}
                        Err(e) => return (state, false, Some(e)),
                    }
                }
            }
            let ids: Vec<NodeId> = self.candidates(&state, level).iter().map(|n| n.id).collect();
            let mut next = state.clone();
            let res = self.ddmin(&state, &ids, level, &mut next);
            state = next;
            if let Err(e) = res {
                return (state, false, Some(e));
            }
            level += 1;
        }
        let shrunk = state_shrunk(start_len, &state);
        (state, shrunk, None)
    }
}

fn state_shrunk(start_len: usize, state: &State) -> bool {
    state.code.len() < start_len
}

/// Split into `n` contiguous, nearly equal chunks.
fn split<T: Clone>(items: &[T], n: usize) -> Vec<Vec<T>> {
    let n = n.clamp(1, items.len().max(1));
    let base = items.len() / n;
    let extra = items.len() % n;
    let mut out = Vec::with_capacity(n);
    let mut at = 0;
    for i in 0..n {
        let size = base + usize::from(i < extra);
        out.push(items[at..at + size].to_vec());
        at += size;
    }
    out
}

/// Reduce `code` while `target` is still reported.
pub fn code_reduce(
    code: &SourceText,
    target: &Report,
    analyzer: &mut Analyzer,
    cfg: &ReductionConfig,
) -> Result<ReductionOutcome, ReduceError> {
    assert!(cfg.max_fixpoint_iterations >= 1 && cfg.max_analyzer_calls >= 1);
    let tree = parse(code, cfg.grammar)?;
    let mapping = LineMapping::identity(code.len());
    let mut r = Reducer {
        analyzer,
        target,
        cfg,
        calls: 1,
        cache: HashMap::new(),
        trace: Vec::new(),
        pass: 0,
        verified: 0,
    };
    let present = report_exists(r.analyzer, code, target, &mapping)?;
    r.trace.push(TraceStep {
        pass: 0,
        level: 0,
        phase: Phase::Check,
        attempted: 0,
        accepted: present,
        charged: true,
    });
    if !present {
        return Err(ReduceError::ReportAbsent {
            rule: target.rule.clone(),
            line: target.line,
        });
    }
    r.cache.insert(code.text(), true);

    let mut state = State {
        code: code.clone(),
        tree,
        mapping,
    };
    let mut converged = false;
    let mut failure = None;
    while r.pass < cfg.max_fixpoint_iterations {
        r.pass += 1;
        let (next, shrunk, err) = r.sweep(state);
        state = next;
        if err.is_some() {
            failure = err;
            break;
        }
        if !shrunk {
            converged = true;
            break;
        }
    }
    let outcome = ReductionOutcome {
        reduced: state.code,
        mapping: state.mapping,
        analyzer_calls: r.calls,
        mode: cfg.mode,
        passes: r.pass,
        trace: r.trace,
        converged,
        verified_states: r.verified,
    };
    match failure {
        None => Ok(outcome),
        Some(StepError::Analyzer(e)) => Err(ReduceError::Analyzer(e)),
        Some(StepError::Invariant { level }) => Err(ReduceError::InvariantViolated { pass: outcome.passes, level }),
        Some(StepError::Budget) => Err(ReduceError::CallBudgetExceeded {
            limit: cfg.max_analyzer_calls,
            partial: Box::new(outcome),
        }),
    }
}

/// Per-sample call counts of both modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallCountSample {
    pub index: usize,
    pub provenance: u64,
    pub vanilla: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub mean: f64,
    pub geometric_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallCountSummary {
    pub samples: Vec<CallCountSample>,
    pub provenance: ModeStats,
    pub vanilla: ModeStats,
    /// Geometric mean of provenance calls over that of vanilla calls.
    pub ratio: f64,
    /// Samples where either mode failed; excluded from the aggregates.
    pub failed: Vec<(usize, String)>,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn geometric_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    (xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp()
}

/// Reduce every sample in both modes and compare analyzer call counts.
pub fn compare_call_counts(
    corpus: &[(SourceText, Report)],
    analyzer: &AnalyzerHandle,
    cfg: &ReductionConfig,
) -> CallCountSummary {
    let mut samples = Vec::new();
    let mut failed = Vec::new();
    for (index, (code, report)) in corpus.iter().enumerate() {
        let run = |mode| {
            let cfg = ReductionConfig { mode, ..cfg.clone() };
            code_reduce(code, report, &mut analyzer.session(), &cfg)
        };
        match (run(ReductionMode::Provenance), run(ReductionMode::VanillaHdd)) {
            (Ok(p), Ok(v)) => samples.push(CallCountSample {
                index,
                provenance: p.analyzer_calls,
                vanilla: v.analyzer_calls,
            }),
            (Err(e), _) | (_, Err(e)) => failed.push((index, e.to_string())),
        }
    }
    summarize(samples, failed)
}

pub fn summarize(samples: Vec<CallCountSample>, failed: Vec<(usize, String)>) -> CallCountSummary {
    let p: Vec<f64> = samples.iter().map(|s| s.provenance as f64).collect();
    let v: Vec<f64> = samples.iter().map(|s| s.vanilla as f64).collect();
    let provenance = ModeStats {
        mean: mean(&p),
        geometric_mean: geometric_mean(&p),
    };
    let vanilla = ModeStats {
        mean: mean(&v),
        geometric_mean: geometric_mean(&v),
    };
    let ratio = provenance.geometric_mean / vanilla.geometric_mean;
    CallCountSummary {
        samples,
        provenance,
        vanilla,
        ratio,
        failed,
    }
}
