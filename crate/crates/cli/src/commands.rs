use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use reduct_core::dataset::{
    build_samples, export_jsonl, import_jsonl, mine_candidates, read_jsonl, read_manifest, write_jsonl, FixSample,
    Flavor, FlavorConfig, Split,
};
use reduct_core::eval::{aggregate, score_sample, EvalOptions, EvalSample, PredictionForm, PredictionSet};
use reduct_core::merge::merge_back;
use reduct_core::oracle::{AnalyzerHandle, Report, RuleCategory};
use reduct_core::promptkit::{
    build_prompt, complete_all, select_shots, EchoModel, HttpModel, ModelService, PromptBundle, RecordingModel,
    ReplayModel,
};
use reduct_core::reduce::{code_reduce, summarize, CallCountSample, ReduceError, ReductionConfig, ReductionMode};
use reduct_core::syntax::LineMapping;
use reduct_core::SourceText;

use crate::config::{CommonArgs, RunConfig};

const EXIT_REPORT_ABSENT: u8 = 2;
const EXIT_BUDGET: u8 = 3;

fn read_source(path: &Path) -> Result<SourceText> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SourceText::new(&text))
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn write_lines<T: Serialize>(path: Option<&Path>, items: &[T]) -> Result<()> {
    match path {
        Some(p) => {
            let f = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            write_jsonl(items, BufWriter::new(f))?;
        }
        None => write_jsonl(items, io::stdout().lock())?,
    }
    Ok(())
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn pool(rc: &RunConfig) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(rc.workers).build()?)
}

/// The analyzer's own report for (rule, line), which carries provenance.
fn locate_report(analyzer: &AnalyzerHandle, code: &SourceText, rule: &str, line: u32) -> Result<Option<Report>> {
    let reports = analyzer.session().analyze(code)?;
    Ok(reports.into_iter().find(|r| r.rule == rule && r.line == line))
}

#[derive(clap::Args)]
pub struct ReduceArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    rule: String,
    #[arg(long)]
    line: u32,
    /// provenance (default) or hdd
    #[arg(long)]
    mode: Option<String>,
    /// Reduced code; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Line mapping as JSON pairs [reduced, original]
    #[arg(long)]
    map: Option<PathBuf>,
    /// Per-attempt trace as JSON
    #[arg(long)]
    trace: Option<PathBuf>,
}

pub fn reduce(common: &CommonArgs, args: &ReduceArgs) -> Result<ExitCode> {
    let rc = common.resolve(args.mode.as_deref(), None)?;
    let code = read_source(&args.input)?;
    let Some(target) = locate_report(&rc.analyzer, &code, &args.rule, args.line)? else {
        eprintln!("no {} report at line {} of {}", args.rule, args.line, args.input.display());
        return Ok(ExitCode::from(EXIT_REPORT_ABSENT));
    };
    let mut session = rc.analyzer.session();
    let (outcome, code_out) = match code_reduce(&code, &target, &mut session, &rc.reduction) {
        Ok(o) => (o, ExitCode::SUCCESS),
        Err(ReduceError::ReportAbsent { rule, line }) => {
            eprintln!("report {rule} at line {line} is not reproducible");
            return Ok(ExitCode::from(EXIT_REPORT_ABSENT));
        }
        Err(ReduceError::CallBudgetExceeded { limit, partial }) => {
            eprintln!("warning: analyzer call budget of {limit} exhausted; writing the partial reduction");
            (*partial, ExitCode::from(EXIT_BUDGET))
        }
        Err(e) => return Err(e.into()),
    };
    write_text(args.out.as_deref(), &outcome.reduced.to_original_bytes())?;
    if let Some(p) = &args.map {
        fs::write(p, serde_json::to_string(&outcome.mapping)? + "\n")?;
    }
    if let Some(p) = &args.trace {
        fs::write(p, serde_json::to_string_pretty(&outcome.trace)? + "\n")?;
    }
    eprintln!(
        "{} -> {} lines, {} analyzer calls ({}, {} passes{})",
        code.len(),
        outcome.reduced.len(),
        outcome.analyzer_calls,
        outcome.mode,
        outcome.passes,
        if outcome.converged { "" } else { ", not converged" }
    );
    Ok(code_out)
}

#[derive(clap::Args)]
pub struct MergeArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    reduced: PathBuf,
    #[arg(long)]
    prediction: PathBuf,
    #[arg(long)]
    map: PathBuf,
    /// Merged file; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn merge(args: &MergeArgs) -> Result<ExitCode> {
    let original = read_source(&args.original)?;
    let reduced = read_source(&args.reduced)?;
    let prediction = read_source(&args.prediction)?;
    let map_text = fs::read_to_string(&args.map).with_context(|| format!("reading {}", args.map.display()))?;
    let mapping: LineMapping = serde_json::from_str(&map_text).context("parsing the line mapping")?;
    let merged = merge_back(&original, &reduced, &prediction, &mapping)?;
    write_text(args.out.as_deref(), &merged.to_original_bytes())?;
    Ok(ExitCode::SUCCESS)
}

#[derive(clap::Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
}

pub fn analyze(common: &CommonArgs, args: &AnalyzeArgs) -> Result<ExitCode> {
    let rc = common.resolve(None, None)?;
    let reports = rc.analyzer.session().analyze(&read_source(&args.input)?)?;
    println!("{}", serde_json::to_string(&reports)?);
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct MinedReport {
    id: String,
    repo: String,
    rule: String,
    category: RuleCategory,
    message: String,
    line: u32,
    tracked_line: Option<u32>,
    ambiguous: bool,
}

#[derive(clap::Args)]
pub struct MineArgs {
    /// JSONL manifest of {id, repo, license_class, pre|pre_path, post|post_path}
    #[arg(long)]
    manifest: PathBuf,
    /// stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

fn manifest_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn mine(common: &CommonArgs, args: &MineArgs) -> Result<ExitCode> {
    let rc = common.resolve(None, None)?;
    let entries = read_manifest(&args.manifest).with_context(|| format!("reading {}", args.manifest.display()))?;
    let base = manifest_base(&args.manifest);
    let grammar = rc.reduction.grammar;
    let per_entry: Vec<Result<Vec<MinedReport>>> = pool(&rc)?.install(|| {
        entries
            .par_iter()
            .map_init(
                || rc.analyzer.session(),
                |session, entry| {
                    let (pre, post) = entry.load(&base)?;
                    let found = mine_candidates(&pre, &post, session, grammar)?;
                    Ok(found
                        .into_iter()
                        .map(|(r, ev)| MinedReport {
                            id: entry.id.clone(),
                            repo: entry.repo.clone(),
                            rule: r.rule,
                            category: r.category,
                            message: r.message,
                            line: r.line,
                            tracked_line: ev.tracked_line,
                            ambiguous: ev.ambiguous,
                        })
                        .collect())
                },
            )
            .collect()
    });
    let mut rows = Vec::new();
    for (entry, r) in entries.iter().zip(per_entry) {
        rows.extend(r.with_context(|| format!("sample {}", entry.id))?);
    }
    write_lines(args.out.as_deref(), &rows)?;
    eprintln!("{} fixed reports in {} pairs", rows.len(), entries.len());
    Ok(ExitCode::SUCCESS)
}

#[derive(clap::Args)]
pub struct FlavorArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset of FullOriginal, CodeReduced, Window3, LongContext
    #[arg(long, value_delimiter = ',')]
    flavors: Vec<String>,
    /// Where to write rejected pairs (JSONL); summarized on stderr otherwise
    #[arg(long)]
    rejections: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    window_radius: u32,
    #[arg(long, default_value_t = 50)]
    long_context_radius: u32,
    /// Re-check every reduced sample with the analyzer before writing
    #[arg(long)]
    validate: bool,
}

pub fn flavor(common: &CommonArgs, args: &FlavorArgs) -> Result<ExitCode> {
    let rc = common.resolve(None, None)?;
    let flavors: Vec<Flavor> = if args.flavors.is_empty() {
        Flavor::ALL.to_vec()
    } else {
        args.flavors
            .iter()
            .map(|f| f.parse().map_err(anyhow::Error::msg))
            .collect::<Result<_>>()?
    };
    let cfg = FlavorConfig {
        window_radius: args.window_radius,
        long_context_radius: args.long_context_radius,
        reduction: rc.reduction.clone(),
    };
    let entries = read_manifest(&args.manifest).with_context(|| format!("reading {}", args.manifest.display()))?;
    let base = manifest_base(&args.manifest);
    let built: Vec<_> = pool(&rc)?.install(|| {
        entries
            .par_iter()
            .map_init(
                || rc.analyzer.session(),
                |session, entry| {
                    let (pre, post) = entry.load(&base)?;
                    build_samples(entry, &pre, &post, session, &flavors, &cfg)
                },
            )
            .collect()
    });
    let mut samples = Vec::new();
    let mut rejected = Vec::new();
    for (entry, r) in entries.iter().zip(built) {
        let (s, rej) = r.with_context(|| format!("sample {}", entry.id))?;
        samples.extend(s);
        rejected.extend(rej);
    }
    let mut session = rc.analyzer.session();
    export_jsonl(&samples, &args.out, args.validate.then_some(&mut session))
        .with_context(|| format!("writing {}", args.out.display()))?;
    match &args.rejections {
        Some(p) => write_lines(Some(p), &rejected)?,
        None => {
            for r in &rejected {
                eprintln!("rejected {}: {}", r.id, r.reason);
            }
        }
    }
    eprintln!("{} samples written, {} pairs rejected", samples.len(), rejected.len());
    Ok(ExitCode::SUCCESS)
}

#[derive(clap::Args)]
pub struct EvalArgs {
    /// Dataset JSONL holding FullOriginal records plus the evaluated flavor
    #[arg(long)]
    samples: PathBuf,
    /// JSONL of {sample_id, predictions, form}
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    /// Flavor the model saw, or `full` for whole-file predictions
    #[arg(long, default_value = "CodeReduced")]
    view: String,
    /// Score reduced predictions on the reduced pair instead of merging
    #[arg(long)]
    pre_merge: bool,
    /// Print the result as JSON instead of a table
    #[arg(long)]
    json: bool,
}

pub fn eval(common: &CommonArgs, args: &EvalArgs) -> Result<ExitCode> {
    let rc = common.resolve(None, (!args.k.is_empty()).then_some(&args.k[..]))?;
    let view = match args.view.to_ascii_lowercase().as_str() {
        "full" | "none" | "fulloriginal" => None,
        v => Some(v.parse::<Flavor>().map_err(anyhow::Error::msg)?),
    };
    let records = import_jsonl(&args.samples).with_context(|| format!("reading {}", args.samples.display()))?;
    let samples = EvalSample::assemble(&records, view)?;
    if samples.is_empty() {
        bail!("no samples");
    }
    let predictions: Vec<PredictionSet> = read_lines(&args.predictions)?;
    let by_id: std::collections::HashMap<&str, &PredictionSet> =
        predictions.iter().map(|p| (p.sample_id.as_str(), p)).collect();
    let opts = EvalOptions {
        pre_merge: args.pre_merge,
        grammar: rc.reduction.grammar,
    };
    let k = *rc.ks.last().expect("resolved k list is non-empty");
    let scores = pool(&rc)?.install(|| {
        samples
            .par_iter()
            .map_init(
                || rc.analyzer.session(),
                |session, s| score_sample(s, by_id.get(s.id.as_str()).copied(), session, k, &opts),
            )
            .collect()
    });
    let result = aggregate(scores, &rc.ks);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&result)?);
    } else {
        print!("{}", reduct_core::eval::render_table(&result));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(clap::Args)]
pub struct PromptArgs {
    /// Samples to build prompts for (test split of --flavor)
    #[arg(long)]
    queries: PathBuf,
    /// Pool of few-shot examples (train split of --flavor)
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, default_value = "CodeReduced")]
    flavor: String,
    #[arg(long, default_value_t = 0)]
    shots: usize,
    /// Force the reduction note on or off; by default it is omitted only
    /// for FullOriginal prompts
    #[arg(long)]
    reduction_note: Option<bool>,
    /// echo, http (MODEL_URL/MODEL_KEY/MODEL_NAME) or replay:<file>;
    /// without it the prompts themselves are written
    #[arg(long)]
    model: Option<String>,
    /// Append every model exchange to this JSONL file
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = reduct_core::promptkit::DEFAULT_TEMPERATURE)]
    temperature: f64,
    #[arg(long, default_value_t = reduct_core::promptkit::DEFAULT_MAX_IN_FLIGHT)]
    max_in_flight: usize,
    /// stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct PromptRecord<'a> {
    sample_id: &'a str,
    #[serde(flatten)]
    bundle: &'a PromptBundle,
}

fn model_service(spec: &str, record: Option<&Path>) -> Result<Box<dyn ModelService>> {
    let base: Box<dyn ModelService> = match spec.split_once(':') {
        _ if spec == "echo" => Box::new(EchoModel),
        _ if spec == "http" => Box::new(HttpModel::from_env()?),
        Some(("replay", path)) => Box::new(ReplayModel::open(Path::new(path))?),
        _ => bail!("unknown model `{spec}` (expected echo, http or replay:<file>)"),
    };
    Ok(match record {
        Some(p) => Box::new(RecordingModel::new(base, p.to_path_buf())),
        None => base,
    })
}

pub fn prompt(common: &CommonArgs, args: &PromptArgs) -> Result<ExitCode> {
    let rc = common.resolve(None, None)?;
    let flavor: Flavor = args.flavor.parse().map_err(anyhow::Error::msg)?;
    let note = args.reduction_note.unwrap_or(flavor != Flavor::FullOriginal);
    let queries: Vec<FixSample> = import_jsonl(&args.queries)?
        .into_iter()
        .filter(|s| s.flavor == flavor && s.split == Split::Test)
        .collect();
    if queries.is_empty() {
        bail!("no samples");
    }
    let pool: Vec<FixSample> = match &args.train {
        Some(p) => import_jsonl(p)?.into_iter().filter(|s| s.flavor == flavor).collect(),
        None => Vec::new(),
    };
    let bundles: Vec<PromptBundle> = queries
        .iter()
        .map(|q| {
            let shots = select_shots(&pool, &q.rule, args.shots, rc.seed).with_context(|| format!("sample {}", q.id))?;
            Ok(build_prompt(&q.rule, &q.message, &shots, &q.pre.text(), note))
        })
        .collect::<Result<_>>()?;

    let Some(spec) = &args.model else {
        let records: Vec<PromptRecord> = queries
            .iter()
            .zip(&bundles)
            .map(|(q, b)| PromptRecord { sample_id: &q.id, bundle: b })
            .collect();
        write_lines(args.out.as_deref(), &records)?;
        return Ok(ExitCode::SUCCESS);
    };
    let service = model_service(spec, args.record.as_deref())?;
    let results = complete_all(service.as_ref(), &bundles, args.n, args.temperature, args.max_in_flight);
    let form = if flavor == Flavor::FullOriginal {
        PredictionForm::Full
    } else {
        PredictionForm::Reduced
    };
    let mut out = Vec::with_capacity(queries.len());
    for (q, r) in queries.iter().zip(results) {
        let predictions = r.with_context(|| format!("sample {}", q.id))?;
        out.push(PredictionSet {
            sample_id: q.id.clone(),
            predictions,
            form,
        });
    }
    write_lines(args.out.as_deref(), &out)?;
    Ok(ExitCode::SUCCESS)
}

/// One benchmark input: inline code or a file, plus the report to keep.
#[derive(Deserialize)]
struct BenchEntry {
    #[serde(default)]
    code: Option<String>,
    #[serde(default)]
    path: Option<PathBuf>,
    rule: String,
    line: u32,
}

#[derive(clap::Args)]
pub struct BenchArgs {
    /// JSONL of {code|path, rule, line}
    #[arg(long)]
    corpus: PathBuf,
    /// Include per-sample counts in the output
    #[arg(long)]
    per_sample: bool,
}

#[derive(Serialize)]
struct BenchOutput {
    samples: usize,
    provenance: reduct_core::reduce::ModeStats,
    vanilla: reduct_core::reduce::ModeStats,
    ratio: f64,
    failed: Vec<(usize, String)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_sample: Option<Vec<CallCountSample>>,
}

fn bench_one(rc: &RunConfig, base: &Path, index: usize, entry: &BenchEntry) -> Result<CallCountSample> {
    let code = match (&entry.code, &entry.path) {
        (Some(c), _) => SourceText::new(c),
        (None, Some(p)) => read_source(&base.join(p))?,
        (None, None) => bail!("entry {index} has neither code nor path"),
    };
    let target = locate_report(&rc.analyzer, &code, &entry.rule, entry.line)?
        .ok_or_else(|| anyhow!("no {} report at line {}", entry.rule, entry.line))?;
    let run = |mode| -> Result<u64> {
        let cfg = ReductionConfig { mode, ..rc.reduction.clone() };
        Ok(code_reduce(&code, &target, &mut rc.analyzer.session(), &cfg)?.analyzer_calls)
    };
    Ok(CallCountSample {
        index,
        provenance: run(ReductionMode::Provenance)?,
        vanilla: run(ReductionMode::VanillaHdd)?,
    })
}

pub fn bench_calls(common: &CommonArgs, args: &BenchArgs) -> Result<ExitCode> {
    let rc = common.resolve(None, None)?;
    let entries: Vec<BenchEntry> = read_lines(&args.corpus)?;
    if entries.is_empty() {
        bail!("no samples");
    }
    let base = manifest_base(&args.corpus);
    let runs: Vec<Result<CallCountSample>> = pool(&rc)?.install(|| {
        entries
            .par_iter()
            .enumerate()
            .map(|(i, e)| bench_one(&rc, &base, i, e))
            .collect()
    });
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (i, r) in runs.into_iter().enumerate() {
        match r {
            Ok(s) => ok.push(s),
            Err(e) => failed.push((i, format!("{e:#}"))),
        }
    }
    if ok.is_empty() {
        bail!("every sample failed; first: {}", failed[0].1);
    }
    let summary = summarize(ok, failed);
    let out = BenchOutput {
        samples: summary.samples.len(),
        provenance: summary.provenance,
        vanilla: summary.vanilla,
        ratio: summary.ratio,
        failed: summary.failed,
        per_sample: args.per_sample.then_some(summary.samples),
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(ExitCode::SUCCESS)
}
