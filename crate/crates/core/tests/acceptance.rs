//! Acceptance criteria 1-12, one pass/fail line each. Runs without the test
//! harness so the lines appear in plain `cargo test` output.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;

use common::{find_report, fixture, gen_category_fixture, gen_reported_taint, minimality_violations, TaintShape};
use reduct_core::dataset::{build_reduced_pair, build_samples, extract_window, Flavor, FlavorConfig, LicenseClass, ManifestEntry};
use reduct_core::eval::{evaluate, EvalOptions, EvalSample, PredictionForm, PredictionSet};
use reduct_core::merge::{compute_replacement_mapping, merge_back};
use reduct_core::oracle::{AnalyzerConfig, AnalyzerError, AnalyzerHandle, Report};
use reduct_core::promptkit::{build_prompt, Shot};
use reduct_core::reduce::{code_reduce, summarize, CallCountSample, Phase, ReductionConfig, ReductionMode, ReductionOutcome};
use reduct_core::syntax::LineMapping;
use reduct_core::SourceText;

// Pinned thresholds.
const MIN_SWEEP_FIXTURES: usize = 30;
const MAX_SWEEP_LINES: usize = 30;
const SWEEP_TIME_LIMIT: Duration = Duration::from_secs(60);
const MERGE_IDENTITY_SAMPLES: usize = 200;
const CALL_CORPUS: usize = 100;
const MAX_CALL_RATIO: f64 = 0.9;
const MIN_FILLER_FRACTION: f64 = 0.9;
const MAX_REDUCED_FRACTION: f64 = 0.2;
const MIN_COMPRESSED_SHARE: f64 = 0.95;
const METRIC_CORPORA: usize = 50;
const WINDOW_CASES: usize = 1000;
const PROTOCOL_ROUND_TRIPS: usize = 1000;

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn verified_cfg(mode: ReductionMode) -> ReductionConfig {
    ReductionConfig {
        mode,
        verify_accepted: true,
        ..ReductionConfig::default()
    }
}

/// Accepted non-check steps must all have been re-verified.
fn check_trace(o: &ReductionOutcome) -> Result<(), String> {
    let accepted = o.trace.iter().filter(|s| s.accepted && s.phase != Phase::Check).count() as u64;
    ensure(accepted == o.verified_states, || {
        format!("{accepted} accepted steps but {} verified states", o.verified_states)
    })
}

/// Tallies for criterion 2, gathered from every reduction run here.
#[derive(Default)]
struct Preservation {
    runs: usize,
    states: u64,
    failures: Vec<String>,
}

impl Preservation {
    fn record(&mut self, label: &str, o: &ReductionOutcome) {
        self.runs += 1;
        self.states += o.verified_states;
        if let Err(e) = check_trace(o) {
            self.failures.push(format!("{label}: {e}"));
        }
    }
}

fn reduce_verified(code: &SourceText, target: &Report, mode: ReductionMode) -> Result<ReductionOutcome, String> {
    code_reduce(code, target, &mut AnalyzerHandle::default().session(), &verified_cfg(mode)).map_err(|e| e.to_string())
}

fn sweep(code: &SourceText, target: &Report, o: &ReductionOutcome) -> Result<(), String> {
    let mut a = AnalyzerHandle::default().session();
    let bad = minimality_violations(&mut a, &o.reduced, &o.mapping, target);
    ensure(bad.is_empty(), || {
        format!("{} removable nodes {bad:?} left in\n{}\n(from\n{})", bad.len(), o.reduced.text(), code.text())
    })
}

fn criterion1(p: &mut Preservation) -> Verdict {
    let start = Instant::now();
    let mut fixtures = Vec::new();
    for category in 0..5 {
        for i in 0..7 {
            let seed = 100 * category as u64 + i;
            fixtures.push(gen_category_fixture(seed, category, 4 + (i as usize % 4) * 3));
        }
    }
    let mut rules = BTreeSet::new();
    for (i, f) in fixtures.iter().enumerate() {
        let code = SourceText::new(&f.text);
        ensure(code.len() <= MAX_SWEEP_LINES, || format!("fixture {i} has {} lines", code.len()))?;
        let target = find_report(&mut AnalyzerHandle::default().session(), &code, f.rule, f.line)
            .ok_or_else(|| format!("fixture {i}: no {} at line {}\n{}", f.rule, f.line, f.text))?;
        rules.insert(target.category);
        for mode in [ReductionMode::Provenance, ReductionMode::VanillaHdd] {
            let o = reduce_verified(&code, &target, mode).map_err(|e| format!("fixture {i} ({mode}): {e}"))?;
            p.record(&format!("sweep fixture {i}"), &o);
            sweep(&code, &target, &o).map_err(|e| format!("fixture {i} ({mode}): {e}"))?;
        }
    }
    let elapsed = start.elapsed();
    ensure(fixtures.len() >= MIN_SWEEP_FIXTURES, || format!("only {} fixtures", fixtures.len()))?;
    ensure(rules.len() == 5, || format!("categories covered: {rules:?}"))?;
    ensure(elapsed < SWEEP_TIME_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} fixtures x 2 modes, all 5 categories, 1-tree-minimal, {:.0} ms",
        fixtures.len(),
        elapsed.as_secs_f64() * 1000.0
    ))
}

fn criterion2(p: &Preservation) -> Verdict {
    ensure(p.runs > 0 && p.states > 0, || "no reductions were recorded".to_owned())?;
    ensure(p.failures.is_empty(), || p.failures.join("; "))?;
    Ok(format!(
        "{} reductions, {} accepted states re-verified, 0 violations",
        p.runs, p.states
    ))
}

fn criterion3() -> Verdict {
    let a = SourceText::new(&fixture("fig2/a.js"));
    let b = SourceText::new(&fixture("fig2/b.js"));
    let mut an = AnalyzerHandle::default().session();
    let target = find_report(&mut an, &a, "PT", 12).ok_or("no PT report at line 12")?;
    let o = code_reduce(&a, &target, &mut an, &ReductionConfig::default()).map_err(|e| e.to_string())?;
    ensure(o.reduced.to_original_bytes() == fixture("fig2/c.js"), || format!("(c) differs:\n{}", o.reduced.text()))?;
    let pair = build_reduced_pair(&a, &b, &target, &mut an, &ReductionConfig::default()).map_err(|e| e.to_string())?;
    ensure(pair.pre.to_original_bytes() == fixture("fig2/c.js"), || "pair pre differs from (c)".to_owned())?;
    ensure(pair.post.to_original_bytes() == fixture("fig2/d.js"), || format!("(d) differs:\n{}", pair.post.text()))?;
    let merged = merge_back(&a, &o.reduced, &pair.post, &o.mapping).map_err(|e| e.to_string())?;
    ensure(merged.to_original_bytes() == fixture("fig2/e.js"), || format!("(e) differs:\n{}", merged.text()))?;
    Ok("(a) -> (c) -> (d) -> (e) byte-exact".to_owned())
}

fn criterion4() -> Verdict {
    let code = SourceText::new(&fixture("fig3/original.js"));
    let mut an = AnalyzerHandle::default().session();
    let target = find_report(&mut an, &code, "PT", 7).ok_or("no PT report at line 7")?;
    let o = code_reduce(&code, &target, &mut an, &ReductionConfig::default()).map_err(|e| e.to_string())?;
    let kept: Vec<u32> = o.mapping.originals().collect();
    ensure(kept == [1, 3, 7, 8], || format!("kept lines {kept:?}"))?;
    ensure(o.mapping.pairs() == [(1, 1), (2, 3), (3, 7), (4, 8)], || format!("mapping {:?}", o.mapping.pairs()))?;
    ensure(o.reduced.to_original_bytes() == fixture("fig3/reduced.js"), || "reduced code differs".to_owned())?;
    Ok("kept {1,3,7,8}, mapping 1->1 2->3 3->7 4->8".to_owned())
}

fn criterion5() -> Verdict {
    let r = compute_replacement_mapping(
        &SourceText::new(&fixture("fig4/reduced.js")),
        &SourceText::new(&fixture("fig4/prediction.js")),
    );
    let expected: [Vec<u32>; 5] = [vec![1, 2], vec![3], vec![4], vec![5, 6], vec![7]];
    ensure(r.entries() == expected, || format!("got {:?}", r.entries()))?;
    Ok("{1:[1,2], 2:[3], 3:[4], 4:[5,6], 5:[7]}".to_owned())
}

fn criterion6() -> Verdict {
    let mut rng = common::rng(6);
    for i in 0..MERGE_IDENTITY_SAMPLES {
        let n = rng.random_range(1..40);
        let mut text = common::random_lines(&mut rng, n).join(if i % 5 == 0 { "\r\n" } else { "\n" });
        if rng.random_bool(0.8) {
            text.push_str(if i % 5 == 0 { "\r\n" } else { "\n" });
        }
        let original = SourceText::new(&text);
        let kept: Vec<u32> = (1..=original.len() as u32).filter(|_| rng.random_bool(0.4)).collect();
        let reduced = SourceText::from_lines_like(
            kept.iter().map(|&l| original.line(l).expect("kept lines exist").to_owned()),
            &original,
        );
        let mapping = LineMapping::from_originals(kept).map_err(|e| e.to_string())?;
        let merged = merge_back(&original, &reduced, &reduced, &mapping).map_err(|e| format!("sample {i}: {e}"))?;
        ensure(merged.to_original_bytes() == text, || format!("sample {i} changed:\n{text:?}"))?;
    }
    Ok(format!("{MERGE_IDENTITY_SAMPLES}/{MERGE_IDENTITY_SAMPLES} byte-identical"))
}

fn criterion7(p: &mut Preservation) -> Verdict {
    let shape = TaintShape {
        helpers: 4,
        stmts: (3, 8),
        filler: 0.3,
    };
    let mut samples = Vec::new();
    for i in 0..CALL_CORPUS {
        let (prog, (rule, line)) = gen_reported_taint(7000 + i as u64, &shape);
        let code = SourceText::new(&prog.text);
        let target = find_report(&mut AnalyzerHandle::default().session(), &code, &rule, line)
            .ok_or_else(|| format!("program {i}: no {rule} at {line}"))?;
        let mut calls = [0; 2];
        for (slot, mode) in [ReductionMode::Provenance, ReductionMode::VanillaHdd].into_iter().enumerate() {
            let o = reduce_verified(&code, &target, mode).map_err(|e| format!("program {i} ({mode}): {e}"))?;
            p.record(&format!("taint program {i}"), &o);
            sweep(&code, &target, &o).map_err(|e| format!("program {i} ({mode}): {e}"))?;
            calls[slot] = o.analyzer_calls;
        }
        samples.push(CallCountSample {
            index: i,
            provenance: calls[0],
            vanilla: calls[1],
        });
    }
    let s = summarize(samples, Vec::new());
    ensure(s.ratio <= MAX_CALL_RATIO, || {
        format!(
            "geo-mean ratio {:.3} > {MAX_CALL_RATIO} (provenance {:.2}, vanilla {:.2})",
            s.ratio, s.provenance.geometric_mean, s.vanilla.geometric_mean
        )
    })?;
    Ok(format!(
        "{CALL_CORPUS} programs: provenance mean {:.2} / geo {:.2}, vanilla mean {:.2} / geo {:.2}, ratio {:.3} <= {MAX_CALL_RATIO}",
        s.provenance.mean, s.provenance.geometric_mean, s.vanilla.mean, s.vanilla.geometric_mean, s.ratio
    ))
}

fn criterion8(p: &mut Preservation) -> Verdict {
    let mut total = 0;
    let mut compressed = 0;
    let mut worst = 0.0f64;
    for category in 0..5 {
        for i in 0..8u64 {
            let f = gen_category_fixture(8000 + 100 * category as u64 + i, category, 60 + 10 * i as usize);
            let code = SourceText::new(&f.text);
            let filler = 1.0 - f.core_lines as f64 / code.len() as f64;
            ensure(filler >= MIN_FILLER_FRACTION, || format!("fixture has only {filler:.2} filler"))?;
            let target = find_report(&mut AnalyzerHandle::default().session(), &code, f.rule, f.line)
                .ok_or_else(|| format!("no {} at {}", f.rule, f.line))?;
            let o = reduce_verified(&code, &target, ReductionMode::Provenance)?;
            p.record("compression fixture", &o);
            let frac = o.reduced.len() as f64 / code.len() as f64;
            worst = worst.max(frac);
            total += 1;
            compressed += usize::from(frac <= MAX_REDUCED_FRACTION);
        }
    }
    let share = compressed as f64 / total as f64;
    ensure(share >= MIN_COMPRESSED_SHARE, || format!("{compressed}/{total} compressed >= 5x"))?;
    Ok(format!(
        "{compressed}/{total} fixtures reduced to <= {:.0}% (worst {:.1}%)",
        100.0 * MAX_REDUCED_FRACTION,
        100.0 * worst
    ))
}

/// Planted prediction kinds with their known (pass, exact) outcome.
#[derive(Clone, Copy, Debug)]
enum Plant {
    Gold,
    GoldTrailingSpace,
    Unchanged,
    GoldPlusEval,
    DropSink,
}

impl Plant {
    const ALL: [Plant; 5] = [Plant::Gold, Plant::GoldTrailingSpace, Plant::Unchanged, Plant::GoldPlusEval, Plant::DropSink];

    fn outcome(self) -> (bool, bool) {
        match self {
            Plant::Gold | Plant::GoldTrailingSpace => (true, true),
            Plant::Unchanged | Plant::GoldPlusEval => (false, false),
            Plant::DropSink => (true, false),
        }
    }

    fn render(self, pre: &SourceText, post: &SourceText) -> String {
        match self {
            Plant::Gold => post.text(),
            Plant::GoldTrailingSpace => post.lines().iter().map(|l| format!("{l}  \n")).collect(),
            Plant::Unchanged => pre.text(),
            Plant::GoldPlusEval => format!("{}eval(payload);\n", post.text()),
            Plant::DropSink => pre
                .lines()
                .iter()
                .filter(|l| !l.contains("fs.readFileSync(name)"))
                .map(|l| format!("{l}\n"))
                .collect(),
        }
    }
}

fn criterion9() -> Verdict {
    // a pool of real samples with both a full and a reduced view
    let mut pool = Vec::new();
    let mut an = AnalyzerHandle::default().session();
    for i in 0..8u64 {
        let f = gen_category_fixture(9000 + i, 4, 6 + i as usize);
        let post = f.text.replace("  var name = request.query.file;", "  var name = \"static.txt\";");
        let entry = ManifestEntry {
            id: format!("planted{i}"),
            repo: format!("repo{i}"),
            license_class: LicenseClass::Restrictive,
            pre: None,
            post: None,
            pre_path: None,
            post_path: None,
        };
        let (samples, rejected) = build_samples(
            &entry,
            &SourceText::new(&f.text),
            &SourceText::new(&post),
            &mut an,
            &[Flavor::FullOriginal, Flavor::CodeReduced],
            &FlavorConfig::default(),
        )
        .map_err(|e| e.to_string())?;
        ensure(rejected.is_empty() && samples.len() == 2, || format!("pool sample {i}: {rejected:?}"))?;
        pool.extend(samples);
    }
    let full_view = EvalSample::assemble(&pool, None).map_err(|e| e.to_string())?;
    let reduced_view = EvalSample::assemble(&pool, Some(Flavor::CodeReduced)).map_err(|e| e.to_string())?;

    let mut rng = common::rng(9);
    let handle = AnalyzerHandle::default();
    for corpus in 0..METRIC_CORPORA {
        let reduced = corpus % 2 == 1;
        let view = if reduced { &reduced_view } else { &full_view };
        let n = rng.random_range(1..=view.len());
        let chosen: Vec<EvalSample> = view.iter().take(n).cloned().collect();
        let mut ks: Vec<usize> = (1..=6).filter(|_| rng.random_bool(0.5)).collect();
        if ks.is_empty() {
            ks.push(1);
        }
        let mut preds = Vec::new();
        let mut labels: Vec<Vec<(bool, bool)>> = Vec::new();
        for s in &chosen {
            if rng.random_bool(0.1) {
                labels.push(Vec::new());
                continue;
            }
            let count = rng.random_range(0..=6);
            let plants: Vec<Plant> = (0..count).map(|_| Plant::ALL[rng.random_range(0..Plant::ALL.len())]).collect();
            let (pre, post) = match &s.reduced {
                Some(v) if reduced => (&v.pre, &v.post),
                _ => (&s.original, &s.gold),
            };
            preds.push(PredictionSet {
                sample_id: s.id.clone(),
                predictions: plants.iter().map(|p| p.render(pre, post)).collect(),
                form: if reduced { PredictionForm::Reduced } else { PredictionForm::Full },
            });
            labels.push(plants.iter().map(|p| p.outcome()).collect());
        }
        let result = evaluate(&chosen, &preds, &handle, &ks, &EvalOptions::default()).map_err(|e| e.to_string())?;
        for &k in &ks {
            let pass = labels.iter().filter(|l| l.iter().take(k).any(|o| o.0)).count() as f64 / n as f64;
            let exact = labels.iter().filter(|l| l.iter().take(k).any(|o| o.1)).count() as f64 / n as f64;
            ensure(result.overall.pass_at[&k] == Some(pass), || {
                format!("corpus {corpus}: Pass@{k} {:?} != {pass}", result.overall.pass_at[&k])
            })?;
            ensure(result.overall.exact_match_at[&k] == Some(exact), || {
                format!("corpus {corpus}: ExactMatch@{k} {:?} != {exact}", result.overall.exact_match_at[&k])
            })?;
        }
        for m in result.categories.values().chain([&result.overall]) {
            for series in [&m.pass_at, &m.exact_match_at] {
                let vals: Vec<f64> = series.values().flatten().copied().collect();
                ensure(vals.windows(2).all(|w| w[0] <= w[1]), || format!("corpus {corpus}: not monotone {vals:?}"))?;
            }
        }
    }
    Ok(format!("{METRIC_CORPORA} planted corpora match brute force exactly; monotone in k"))
}

fn criterion10() -> Verdict {
    let mut rng = common::rng(10);
    for case in 0..WINDOW_CASES {
        let len = rng.random_range(1..=400usize);
        let line = rng.random_range(1..=len as u32);
        let code = SourceText::from_lines((1..=len).map(|i| format!("s{i}();")));
        for (radius, cap) in [(3u32, 7usize), (50, 101)] {
            let (w, m) = extract_window(&code, line, radius);
            let lo = line.saturating_sub(radius).max(1);
            let hi = (line + radius).min(len as u32);
            let expected = (hi - lo + 1) as usize;
            ensure(w.len() == expected && w.len() <= cap, || {
                format!("case {case}: len {len}, line {line}, radius {radius}: {} lines", w.len())
            })?;
            ensure(m.original_of(1) == Some(lo) && m.original_of(w.len() as u32) == Some(hi), || {
                format!("case {case}: window bounds {:?}", m.pairs().first())
            })?;
            ensure(m.is_sound(&w, &code), || format!("case {case}: mapping unsound"))?;
        }
    }
    Ok(format!("{WINDOW_CASES} cases: Window@3 <= 7, LongContext <= 101, exact clamped bounds"))
}

fn criterion11() -> Verdict {
    let desc = "Unsanitized input from the HTTP request flows into a file system path, allowing path traversal.";
    let shot = Shot {
        pre: fixture("fig2/c.js"),
        post: fixture("fig2/d.js"),
    };
    let reduced = build_prompt("PT", desc, &[shot], &fixture("fig3/reduced.js"), true).render();
    ensure(reduced == fixture("prompt/pt_reduced.txt"), || format!("with note differs:\n{reduced}"))?;
    let full = build_prompt("PT", desc, &[], &fixture("fig3/original.js"), false).render();
    ensure(full == fixture("prompt/pt_full.txt"), || format!("without note differs:\n{full}"))?;
    Ok("golden files match with and without the final system sentence".to_owned())
}

fn stub(args: &[&str], timeout: Duration, restarts: u32) -> reduct_core::oracle::Analyzer {
    AnalyzerHandle::external(env!("CARGO_BIN_EXE_reduct-analyzer-stub"), args.iter().map(|s| s.to_string()).collect())
        .with_config(AnalyzerConfig {
            timeout,
            max_restarts: restarts,
        })
        .session()
}

fn criterion12() -> Verdict {
    let mut ext = stub(&[], Duration::from_secs(10), 0);
    let mut builtin = AnalyzerHandle::default().session();
    ext.ping().map_err(|e| format!("ping: {e}"))?;
    let shape = TaintShape::default();
    let mut errors = 0;
    let mut mismatches = 0;
    for i in 0..PROTOCOL_ROUND_TRIPS {
        let text = if i % 2 == 0 {
            common::gen_taint_program(i as u64, &shape).text
        } else {
            gen_category_fixture(i as u64, i % 5, 5).text
        };
        let code = SourceText::new(&text);
        match ext.analyze(&code) {
            Ok(r) => mismatches += usize::from(r != builtin.analyze(&code).expect("builtin")),
            Err(_) => errors += 1,
        }
    }
    ensure(errors == 0 && mismatches == 0, || format!("{errors} protocol errors, {mismatches} mismatches"))?;
    ensure(ext.calls() == PROTOCOL_ROUND_TRIPS as u64, || format!("{} calls counted", ext.calls()))?;

    let probe = SourceText::new("eval(x);\n");
    let malformed = stub(&["--mode", "malformed"], Duration::from_secs(10), 1).analyze(&probe);
    ensure(matches!(malformed, Err(AnalyzerError::Malformed(_))), || format!("malformed: {malformed:?}"))?;
    let t = Duration::from_millis(300);
    let hang = stub(&["--mode", "hang"], t, 0).analyze(&probe);
    ensure(matches!(hang, Err(AnalyzerError::Timeout(d)) if d == t), || format!("hang: {hang:?}"))?;
    Ok(format!(
        "{PROTOCOL_ROUND_TRIPS} round trips, 0 protocol errors; malformed -> Malformed, hang -> Timeout"
    ))
}

fn run(id: u8, f: impl FnOnce() -> Verdict) -> (u8, Verdict) {
    let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    (id, verdict)
}

fn main() {
    let mut preservation = Preservation::default();
    let mut results = vec![run(1, || criterion1(&mut preservation))];
    results.push(run(7, || criterion7(&mut preservation)));
    results.push(run(8, || criterion8(&mut preservation)));
    results.push(run(2, || criterion2(&preservation)));
    results.push(run(3, criterion3));
    results.push(run(4, criterion4));
    results.push(run(5, criterion5));
    results.push(run(6, criterion6));
    results.push(run(9, criterion9));
    results.push(run(10, criterion10));
    results.push(run(11, criterion11));
    results.push(run(12, criterion12));
    results.sort_by_key(|(id, _)| *id);

    let mut failed = 0;
    for (id, verdict) in &results {
        match verdict {
            Ok(detail) => println!("criterion {id:>2}: PASS  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2}: FAIL  {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
