//! Python module `reduct`: reduction, merge-back, analyzers, windows, prompts
//! and metrics over plain strings.

use std::path::PathBuf;
use std::sync::Mutex;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use reduct_core::dataset::{self, Flavor};
use reduct_core::eval::{self, EvalOptions, EvalSample, PredictionSet};
use reduct_core::merge;
use reduct_core::oracle::{self, AnalyzerConfig, AnalyzerHandle};
use reduct_core::promptkit;
use reduct_core::reduce::{self as core_reduce, ReduceError, ReductionConfig};
use reduct_core::syntax::{Grammar, LineMapping};
use reduct_core::SourceText;

create_exception!(reduct, AnalyzerError, PyException);
create_exception!(reduct, ReportAbsentError, PyException);
create_exception!(reduct, BudgetExceededError, PyException);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn analyzer_err(e: oracle::AnalyzerError) -> PyErr {
    AnalyzerError::new_err(e.to_string())
}

fn mapping_from(pairs: Vec<(u32, u32)>) -> PyResult<LineMapping> {
    LineMapping::from_pairs(pairs).map_err(value_err)
}

#[pyclass(get_all, frozen, module = "reduct")]
pub struct Report {
    rule: String,
    category: String,
    message: String,
    line: u32,
    provenance_lines: Option<Vec<u32>>,
}

#[pymethods]
impl Report {
    fn __repr__(&self) -> String {
        format!("Report(rule={:?}, line={})", self.rule, self.line)
    }
}

impl From<oracle::Report> for Report {
    fn from(r: oracle::Report) -> Self {
        Self {
            rule: r.rule,
            category: r.category.as_str().to_owned(),
            message: r.message,
            line: r.line,
            provenance_lines: r.provenance_lines.map(|p| p.into_iter().collect()),
        }
    }
}

impl Report {
    fn to_core(&self) -> PyResult<oracle::Report> {
        let mut r = oracle::Report::new(
            &self.rule,
            self.category.parse().map_err(value_err)?,
            self.message.clone(),
            self.line,
        );
        r.provenance_lines = self.provenance_lines.as_ref().map(|p| p.iter().copied().collect());
        Ok(r)
    }
}

/// An analyzer session; counts calls and owns an external child process.
#[pyclass(module = "reduct")]
pub struct Analyzer {
    inner: Mutex<oracle::Analyzer>,
}

impl Analyzer {
    fn session(&self) -> std::sync::MutexGuard<'_, oracle::Analyzer> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// The report of `rule` at `line`, as raised by this analyzer.
    fn find(&self, code: &SourceText, rule: &str, line: u32) -> PyResult<oracle::Report> {
        self.session()
            .analyze(code)
            .map_err(analyzer_err)?
            .into_iter()
            .find(|r| r.rule == rule && r.line == line)
            .ok_or_else(|| ReportAbsentError::new_err(format!("no {rule} report at line {line}")))
    }
}

#[pymethods]
impl Analyzer {
    #[new]
    #[pyo3(signature = (spec = "builtin:all", timeout = 30.0, max_restarts = 2))]
    fn new(spec: &str, timeout: f64, max_restarts: u32) -> PyResult<Self> {
        if timeout.is_nan() || timeout <= 0.0 {
            return Err(value_err("timeout must be positive"));
        }
        let handle: AnalyzerHandle = spec.parse().map_err(value_err)?;
        let handle = handle.with_config(AnalyzerConfig {
            timeout: std::time::Duration::from_secs_f64(timeout),
            max_restarts,
        });
        Ok(Self {
            inner: Mutex::new(handle.session()),
        })
    }

    fn analyze(&self, py: Python<'_>, code: &str) -> PyResult<Vec<Report>> {
        let code = SourceText::new(code);
        let reports = py.detach(|| self.session().analyze(&code)).map_err(analyzer_err)?;
        Ok(reports.into_iter().map(Report::from).collect())
    }

    fn ping(&self) -> PyResult<()> {
        self.session().ping().map_err(analyzer_err)
    }

    #[getter]
    fn calls(&self) -> u64 {
        self.session().calls()
    }

    fn __repr__(&self) -> String {
        format!("Analyzer({:?})", self.session().handle().to_string())
    }
}

#[pyclass(get_all, frozen, module = "reduct")]
pub struct ReductionOutcome {
    reduced: String,
    mapping: Vec<(u32, u32)>,
    analyzer_calls: u64,
    mode: String,
    passes: u32,
    converged: bool,
}

impl From<core_reduce::ReductionOutcome> for ReductionOutcome {
    fn from(o: core_reduce::ReductionOutcome) -> Self {
        Self {
            reduced: o.reduced.to_original_bytes(),
            mapping: o.mapping.pairs().to_vec(),
            analyzer_calls: o.analyzer_calls,
            mode: o.mode.to_string(),
            passes: o.passes,
            converged: o.converged,
        }
    }
}

/// Reduce `code` while `analyzer` still reports `rule` at `line`.
#[pyfunction]
#[pyo3(signature = (code, rule, line, analyzer = None, mode = "provenance", max_calls = 2000, max_iterations = 10, grammar = "mini-js"))]
#[allow(clippy::too_many_arguments)]
fn reduce(
    py: Python<'_>,
    code: &str,
    rule: &str,
    line: u32,
    analyzer: Option<&Analyzer>,
    mode: &str,
    max_calls: u64,
    max_iterations: u32,
    grammar: &str,
) -> PyResult<ReductionOutcome> {
    if max_calls == 0 || max_iterations == 0 {
        return Err(value_err("max_calls and max_iterations must be positive"));
    }
    let cfg = ReductionConfig {
        mode: mode.parse().map_err(value_err)?,
        max_fixpoint_iterations: max_iterations,
        max_analyzer_calls: max_calls,
        grammar: grammar.parse().map_err(value_err)?,
        verify_accepted: false,
    };
    let default;
    let analyzer = match analyzer {
        Some(a) => a,
        None => {
            default = Analyzer::new("builtin:all", 30.0, 2)?;
            &default
        }
    };
    let code = SourceText::new(code);
    let target = analyzer.find(&code, rule, line)?;
    let result = py.detach(|| core_reduce::code_reduce(&code, &target, &mut analyzer.session(), &cfg));
    match result {
        Ok(o) => Ok(o.into()),
        Err(ReduceError::ReportAbsent { rule, line }) => {
            Err(ReportAbsentError::new_err(format!("no {rule} report at line {line}")))
        }
        Err(ReduceError::CallBudgetExceeded { limit, partial }) => {
            let err = BudgetExceededError::new_err(format!("analyzer call budget of {limit} exhausted"));
            err.value(py).setattr("partial", ReductionOutcome::from(*partial))?;
            Err(err)
        }
        Err(ReduceError::Analyzer(e)) => Err(analyzer_err(e)),
        Err(e) => Err(value_err(e)),
    }
}

/// Splice `prediction` (a rewrite of `reduced`) back into `original`.
#[pyfunction]
fn merge_back(original: &str, reduced: &str, prediction: &str, mapping: Vec<(u32, u32)>) -> PyResult<String> {
    let merged = merge::merge_back(
        &SourceText::new(original),
        &SourceText::new(reduced),
        &SourceText::new(prediction),
        &mapping_from(mapping)?,
    )
    .map_err(value_err)?;
    Ok(merged.to_original_bytes())
}

/// For each reduced line, the prediction lines that replace it.
#[pyfunction]
fn replacement_mapping(reduced: &str, prediction: &str) -> Vec<Vec<u32>> {
    merge::compute_replacement_mapping(&SourceText::new(reduced), &SourceText::new(prediction))
        .entries()
        .to_vec()
}

#[pyfunction]
fn extract_window(code: &str, line: u32, radius: u32) -> PyResult<(String, Vec<(u32, u32)>)> {
    let code = SourceText::new(code);
    if line == 0 || line as usize > code.len() {
        return Err(value_err(format!("line {line} outside 1..={}", code.len())));
    }
    let (w, m) = dataset::extract_window(&code, line, radius);
    Ok((w.to_original_bytes(), m.pairs().to_vec()))
}

#[pyfunction]
#[pyo3(signature = (prediction, original, report, analyzer = None, grammar = "mini-js"))]
fn does_fix(prediction: &str, original: &str, report: &Report, analyzer: Option<&Analyzer>, grammar: &str) -> PyResult<bool> {
    let grammar: Grammar = grammar.parse().map_err(value_err)?;
    let target = report.to_core()?;
    let run = |a: &mut oracle::Analyzer| {
        oracle::does_fix(a, &SourceText::new(prediction), &SourceText::new(original), &target, grammar)
    };
    match analyzer {
        Some(a) => run(&mut a.session()),
        None => run(&mut AnalyzerHandle::default().session()),
    }
    .map_err(analyzer_err)
}

#[pyfunction]
#[pyo3(signature = (prediction, original, analyzer = None))]
fn no_new_issues(prediction: &str, original: &str, analyzer: Option<&Analyzer>) -> PyResult<bool> {
    let run = |a: &mut oracle::Analyzer| oracle::no_new_issues(a, &SourceText::new(prediction), &SourceText::new(original));
    match analyzer {
        Some(a) => run(&mut a.session()),
        None => run(&mut AnalyzerHandle::default().session()),
    }
    .map_err(analyzer_err)
}

#[pyclass(frozen, module = "reduct")]
pub struct Prompt {
    #[pyo3(get)]
    system: String,
    #[pyo3(get)]
    turns: Vec<(String, String)>,
    inner: promptkit::PromptBundle,
}

#[pymethods]
impl Prompt {
    fn render(&self) -> String {
        self.inner.render()
    }

    /// Chat messages, system turn included, as a JSON string.
    fn messages_json(&self) -> String {
        self.inner.messages().to_string()
    }
}

#[pyfunction]
#[pyo3(signature = (rule, description, shots, query, include_reduction_note = true))]
fn build_prompt(
    rule: &str,
    description: &str,
    shots: Vec<(String, String)>,
    query: &str,
    include_reduction_note: bool,
) -> Prompt {
    let shots: Vec<promptkit::Shot> = shots.into_iter().map(|(pre, post)| promptkit::Shot { pre, post }).collect();
    let bundle = promptkit::build_prompt(rule, description, &shots, query, include_reduction_note);
    Prompt {
        system: bundle.system.clone(),
        turns: bundle
            .turns
            .iter()
            .map(|t| {
                let role = match t.role {
                    promptkit::Role::User => "user",
                    promptkit::Role::Assistant => "assistant",
                };
                (role.to_owned(), t.content.clone())
            })
            .collect(),
        inner: bundle,
    }
}

/// Score a predictions JSONL against a dataset JSONL; returns the result as
/// JSON.
#[pyfunction]
#[pyo3(signature = (samples_path, predictions_path, ks = vec![1, 5], view = Some("CodeReduced"), analyzer = "builtin:all", pre_merge = false))]
fn evaluate(
    py: Python<'_>,
    samples_path: PathBuf,
    predictions_path: PathBuf,
    ks: Vec<usize>,
    view: Option<&str>,
    analyzer: &str,
    pre_merge: bool,
) -> PyResult<String> {
    let view: Option<Flavor> = view.map(str::parse).transpose().map_err(value_err)?;
    let handle: AnalyzerHandle = analyzer.parse().map_err(value_err)?;
    let records = dataset::import_jsonl(&samples_path).map_err(value_err)?;
    let samples = EvalSample::assemble(&records, view).map_err(value_err)?;
    let file = std::fs::File::open(&predictions_path).map_err(value_err)?;
    let preds: Vec<PredictionSet> = dataset::read_jsonl(std::io::BufReader::new(file)).map_err(value_err)?;
    let opts = EvalOptions {
        pre_merge,
        grammar: Grammar::MiniJs,
    };
    let result = py
        .detach(|| eval::evaluate(&samples, &preds, &handle, &ks, &opts))
        .map_err(value_err)?;
    serde_json::to_string(&result).map_err(value_err)
}

#[pymodule]
fn reduct(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Report>()?;
    m.add_class::<Analyzer>()?;
    m.add_class::<ReductionOutcome>()?;
    m.add_class::<Prompt>()?;
    m.add_function(wrap_pyfunction!(reduce, m)?)?;
    m.add_function(wrap_pyfunction!(merge_back, m)?)?;
    m.add_function(wrap_pyfunction!(replacement_mapping, m)?)?;
    m.add_function(wrap_pyfunction!(extract_window, m)?)?;
    m.add_function(wrap_pyfunction!(does_fix, m)?)?;
    m.add_function(wrap_pyfunction!(no_new_issues, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("AnalyzerError", m.py().get_type::<AnalyzerError>())?;
    m.add("ReportAbsentError", m.py().get_type::<ReportAbsentError>())?;
    m.add("BudgetExceededError", m.py().get_type::<BudgetExceededError>())?;
    Ok(())
}
