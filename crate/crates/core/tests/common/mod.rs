//! Shared test support: fixture generators and independent oracles.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reduct_core::oracle::{report_exists, Analyzer, Report};
use reduct_core::syntax::{get_nodes, parse, remove_nodes_from_code, Grammar, LineMapping};
use reduct_core::SourceText;

pub fn fixture(rel: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Straight-line taint programs with a reference interpreter.

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Sink {
    File,
    Query,
}

#[derive(Clone, Debug)]
enum E {
    Source(&'static str),
    Const(u32),
    Var(usize),
    Join(usize),
    Basename(usize),
    Concat(usize),
    Trim(usize),
    Call(usize, usize),
}

#[derive(Clone, Debug)]
enum S {
    Assign(usize, E),
    Sink(Sink, usize),
    Filler(u32),
    Return(usize),
}

#[derive(Clone, Debug)]
struct Func {
    /// `None` for the request handler.
    helper: Option<usize>,
    stmts: Vec<S>,
}

#[derive(Clone, Debug)]
pub struct TaintProgram {
    pub text: String,
    /// (rule, line) of every sink reached by request data.
    pub expected: BTreeSet<(String, u32)>,
    funcs: Vec<Func>,
    sink_lines: Vec<Vec<Option<u32>>>,
}

pub struct TaintShape {
    pub helpers: usize,
    pub stmts: (usize, usize),
    /// Probability that a statement is inert filler.
    pub filler: f64,
}

impl Default for TaintShape {
    fn default() -> Self {
        Self {
            helpers: 3,
            stmts: (2, 6),
            filler: 0.2,
        }
    }
}

fn var_name(f: &Func, v: usize) -> String {
    match (f.helper, v) {
        (Some(_), 0) => "p".to_owned(),
        _ => format!("v{v}"),
    }
}

fn gen_func(rng: &mut ChaCha8Rng, helper: Option<usize>, uncalled: &mut Vec<usize>, shape: &TaintShape) -> Func {
    let mut f = Func { helper, stmts: Vec::new() };
    // helpers start with their parameter as variable 0
    let mut defined: Vec<usize> = if helper.is_some() { vec![0] } else { Vec::new() };
    let mut next_var = defined.len();
    let n = rng.random_range(shape.stmts.0..=shape.stmts.1);
    for _ in 0..n {
        if rng.random_bool(shape.filler) {
            f.stmts.push(S::Filler(rng.random_range(0..1000)));
            continue;
        }
        let any = |rng: &mut ChaCha8Rng, defined: &[usize]| *defined.choose(rng).expect("non-empty");
        if !defined.is_empty() && rng.random_bool(0.25) {
            let sink = if rng.random_bool(0.5) { Sink::File } else { Sink::Query };
            f.stmts.push(S::Sink(sink, any(rng, &defined)));
            continue;
        }
        let e = if defined.is_empty() {
            if helper.is_none() && rng.random_bool(0.8) {
                E::Source(["query.name", "params.id", "body.file"][rng.random_range(0..3)])
            } else {
                E::Const(rng.random_range(0..100))
            }
        } else {
            match rng.random_range(0..9) {
                0 if helper.is_none() => E::Source("query.path"),
                0 | 1 => E::Const(rng.random_range(0..100)),
                2 => E::Var(any(rng, &defined)),
                3 => E::Join(any(rng, &defined)),
                4 => E::Basename(any(rng, &defined)),
                5 => E::Concat(any(rng, &defined)),
                6 => E::Trim(any(rng, &defined)),
                _ if !uncalled.is_empty() => {
                    let callee = uncalled.remove(rng.random_range(0..uncalled.len()));
                    E::Call(callee, any(rng, &defined))
                }
                _ => E::Var(any(rng, &defined)),
            }
        };
        // reassign an existing variable now and then to exercise strong updates
        let target = if !defined.is_empty() && rng.random_bool(0.3) {
            any(rng, &defined)
        } else {
            next_var += 1;
            defined.push(next_var - 1);
            next_var - 1
        };
        f.stmts.push(S::Assign(target, e));
    }
    if helper.is_some() && rng.random_bool(0.7) {
        let v = *defined.choose(rng).expect("parameter is defined");
        f.stmts.push(S::Return(v));
    }
    f
}

/// Helpers `f0..` (each called at most once, only by later functions) and a
/// final `handler(req, res)`.
pub fn gen_taint_program(seed: u64, shape: &TaintShape) -> TaintProgram {
    let mut rng = rng(seed);
    let mut funcs = Vec::new();
    let mut uncalled = Vec::new();
    for i in 0..shape.helpers {
        funcs.push(gen_func(&mut rng, Some(i), &mut uncalled, shape));
        uncalled.push(i);
    }
    funcs.push(gen_func(&mut rng, None, &mut uncalled, shape));
    render(funcs)
}

fn render_expr(f: &Func, e: &E) -> String {
    let v = |i: &usize| var_name(f, *i);
    match e {
        E::Source(field) => format!("req.{field}"),
        E::Const(k) => format!("\"c{k}\""),
        E::Var(i) => v(i),
        E::Join(i) => format!("path.join(\"www\", {})", v(i)),
        E::Basename(i) => format!("path.basename({})", v(i)),
        E::Concat(i) => format!("\"/tmp/\" + {}", v(i)),
        E::Trim(i) => format!("{}.trim()", v(i)),
        E::Call(g, i) => format!("f{g}({})", v(i)),
    }
}

fn render(funcs: Vec<Func>) -> TaintProgram {
    let mut lines = vec![
        "const fs = require('fs');".to_owned(),
        "const path = require('path');".to_owned(),
        "const db = require('./db');".to_owned(),
    ];
    let mut sink_lines = Vec::new();
    for f in &funcs {
        lines.push(match f.helper {
            Some(i) => format!("function f{i}(p) {{"),
            None => "function handler(req, res) {".to_owned(),
        });
        let mut declared: BTreeSet<usize> = BTreeSet::new();
        if f.helper.is_some() {
            declared.insert(0);
        }
        let mut sl = Vec::new();
        for s in &f.stmts {
            let mut at = None;
            lines.push(match s {
                S::Assign(t, e) => {
                    let kw = if declared.insert(*t) { "var " } else { "" };
                    format!("  {kw}{} = {};", var_name(f, *t), render_expr(f, e))
                }
                S::Sink(Sink::File, v) => {
                    at = Some(lines.len() as u32 + 1);
                    format!("  fs.readFileSync({});", var_name(f, *v))
                }
                S::Sink(Sink::Query, v) => {
                    at = Some(lines.len() as u32 + 1);
                    format!("  db.query({});", var_name(f, *v))
                }
                S::Filler(k) => format!("  noop({k});"),
                S::Return(v) => format!("  return {};", var_name(f, *v)),
            });
            sl.push(at);
        }
        lines.push("}".to_owned());
        sink_lines.push(sl);
    }
    let mut p = TaintProgram {
        text: lines.join("\n") + "\n",
        expected: BTreeSet::new(),
        funcs,
        sink_lines,
    };
    p.expected = interpret(&p);
    p
}

/// Run every function on booleans: the handler and uncalled helpers with
/// clean inputs, called helpers with their argument's taint at the call.
fn interpret(p: &TaintProgram) -> BTreeSet<(String, u32)> {
    let mut hits = BTreeSet::new();
    let called: BTreeSet<usize> = p
        .funcs
        .iter()
        .flat_map(|f| f.stmts.iter())
        .filter_map(|s| match s {
            S::Assign(_, E::Call(g, _)) => Some(*g),
            _ => None,
        })
        .collect();
    for (i, f) in p.funcs.iter().enumerate() {
        if f.helper.is_none() || !called.contains(&i) {
            run(p, i, false, &mut hits);
        }
    }
    hits
}

fn run(p: &TaintProgram, fi: usize, param: bool, hits: &mut BTreeSet<(String, u32)>) -> bool {
    let f = &p.funcs[fi];
    let mut env: Vec<bool> = vec![false; 64];
    env[0] = f.helper.is_some() && param;
    for (si, s) in f.stmts.iter().enumerate() {
        match s {
            S::Assign(t, e) => {
                env[*t] = match e {
                    E::Source(_) => true,
                    E::Const(_) | E::Basename(_) => false,
                    E::Var(v) | E::Join(v) | E::Concat(v) | E::Trim(v) => env[*v],
                    E::Call(g, v) => run(p, *g, env[*v], hits),
                };
            }
            S::Sink(kind, v) => {
                if env[*v] {
                    let rule = match kind {
                        Sink::File => "PT",
                        Sink::Query => "SQLi",
                    };
                    hits.insert((rule.to_owned(), p.sink_lines[fi][si].expect("sinks have lines")));
                }
            }
            S::Filler(_) => {}
            S::Return(v) => return env[*v],
        }
    }
    false
}

/// A taint program with at least one reported sink, plus the first such
/// report's (rule, line).
pub fn gen_reported_taint(seed: u64, shape: &TaintShape) -> (TaintProgram, (String, u32)) {
    for attempt in 0.. {
        let p = gen_taint_program(seed.wrapping_mul(7919).wrapping_add(attempt), shape);
        if let Some(first) = p.expected.iter().next().cloned() {
            return (p, first);
        }
    }
    unreachable!()
}

// ---------------------------------------------------------------------------
// Category fixtures: one report surrounded by removable filler.

fn filler(rng: &mut ChaCha8Rng, k: u32, indent: &str) -> Vec<String> {
    match rng.random_range(0..5) {
        0 => vec![format!("{indent}noop({k});")],
        1 => vec![format!("{indent}var t{k} = {k};")],
        2 => vec![
            format!("{indent}if (flag{k}) {{"),
            format!("{indent}  noop({k});"),
            format!("{indent}}}"),
        ],
        3 => vec![format!("{indent}count = count + {k};")],
        _ => vec![format!("{indent}log(\"step {k}\");")],
    }
}

fn filler_block(rng: &mut ChaCha8Rng, n: usize, indent: &str, k: &mut u32) -> Vec<String> {
    let mut out = Vec::new();
    for _ in 0..n {
        *k += 1;
        out.extend(filler(rng, *k, indent));
    }
    out
}

fn helper_fn(rng: &mut ChaCha8Rng, k: &mut u32) -> Vec<String> {
    *k += 1;
    let name = format!("helper{k}");
    let mut out = vec![format!("function {name}() {{")];
    let n = rng.random_range(1..=2);
    out.extend(filler_block(rng, n, "  ", k));
    out.push("}".to_owned());
    out
}

/// The rule expected at the report line, the source and that line.
pub struct CategoryFixture {
    pub rule: &'static str,
    pub text: String,
    pub line: u32,
    /// Lines that belong to the report itself rather than filler.
    pub core_lines: usize,
}

/// Core lines of one report; `@@` marks the reported line.
fn core(rng: &mut ChaCha8Rng, category: usize, k: &mut u32) -> (&'static str, Vec<Vec<String>>) {
    *k += 1;
    let id = *k;
    // chunks are placed in order, with filler between them
    match category {
        0 => (
            "DuplicateKey",
            vec![vec![
                "var cfg = {".to_owned(),
                format!("  port: {id},"),
                "  host: \"h\",".to_owned(),
                "@@  port: 2".to_owned(),
                "};".to_owned(),
            ]],
        ),
        1 => (
            "UnclosedResource",
            vec![vec![
                "function work() {".to_owned(),
                "@@  const h = fs.openSync('data');".to_owned(),
                "  read(h);".to_owned(),
                "}".to_owned(),
            ]],
        ),
        2 => (
            "ArityMismatch",
            vec![
                vec![
                    "function add(a, b) {".to_owned(),
                    "  return a + b;".to_owned(),
                    "}".to_owned(),
                ],
                vec![format!("@@add({id});")],
            ],
        ),
        3 => {
            if rng.random_bool(0.5) {
                ("DangerousCall", vec![vec![format!("@@eval(code{id});")]])
            } else {
                (
                    "DangerousCall",
                    vec![
                        vec!["const exec = require('child_process').exec;".to_owned()],
                        vec![format!("@@exec('ping ' + host{id});")],
                    ],
                )
            }
        }
        _ => (
            "PT",
            vec![
                vec!["const fs = require('fs');".to_owned()],
                vec![
                    "function serve(request) {".to_owned(),
                    "  var name = request.query.file;".to_owned(),
                    "@@  fs.readFileSync(name);".to_owned(),
                    "}".to_owned(),
                ],
            ],
        ),
    }
}

/// `category` in 0..5 follows the order AST, Local, FileWide, SecurityLocal,
/// SecurityFlow. `filler` is the number of filler statements spread around.
pub fn gen_category_fixture(seed: u64, category: usize, filler_count: usize) -> CategoryFixture {
    let mut rng = rng(seed);
    let mut k = 0;
    let (rule, chunks) = core(&mut rng, category, &mut k);
    let core_lines = chunks.iter().map(Vec::len).sum();
    let mut lines: Vec<String> = Vec::new();
    let slots = chunks.len() + 1;
    let mut budget = filler_count;
    for (i, chunk) in chunks.iter().enumerate() {
        let here = if i + 1 == slots { budget } else { rng.random_range(0..=budget) };
        budget -= here;
        push_filler(&mut rng, &mut lines, here, &mut k);
        for l in chunk {
            // filler inside function bodies, just before the reported line
            if l.starts_with("@@  ") && chunk[0].starts_with("function") && budget > 0 && rng.random_bool(0.5) {
                let inner = rng.random_range(1..=budget.min(3));
                budget -= inner;
                lines.extend(filler_block(&mut rng, inner, "  ", &mut k));
            }
            lines.push(l.clone());
        }
    }
    push_filler(&mut rng, &mut lines, budget, &mut k);
    let idx = lines.iter().position(|l| l.starts_with("@@")).expect("core has a marked line");
    lines[idx] = lines[idx][2..].to_owned();
    CategoryFixture {
        rule,
        text: lines.join("\n") + "\n",
        line: idx as u32 + 1,
        core_lines,
    }
}

fn push_filler(rng: &mut ChaCha8Rng, lines: &mut Vec<String>, n: usize, k: &mut u32) {
    let mut left = n;
    while left > 0 {
        if left >= 2 && rng.random_bool(0.25) {
            lines.extend(helper_fn(rng, k));
            left -= 2;
        } else {
            lines.extend(filler_block(rng, 1, "", k));
            left -= 1;
        }
    }
}

// ---------------------------------------------------------------------------
// Oracles over reduction results.

/// Single-node deletion sweep: every deletable node of `reduced` breaks
/// parsing or the report when removed alone. Returns offending spans.
pub fn minimality_violations(
    analyzer: &mut Analyzer,
    reduced: &SourceText,
    mapping: &LineMapping,
    target: &Report,
) -> Vec<(u32, u32)> {
    let tree = parse(reduced, Grammar::MiniJs).expect("reduced code parses");
    let mut bad = Vec::new();
    for level in 1..=tree.depth() {
        for node in get_nodes(&tree, level) {
            let removal = remove_nodes_from_code(&[node.id], reduced, &tree, mapping);
            if removal.tree.is_none() {
                continue;
            }
            if report_exists(analyzer, &removal.code, target, &removal.mapping).expect("builtin analyzer") {
                bad.push((node.span.start, node.span.end));
            }
        }
    }
    bad
}

/// Locate the analyzer's own report (with provenance) for (rule, line).
pub fn find_report(analyzer: &mut Analyzer, code: &SourceText, rule: &str, line: u32) -> Option<Report> {
    analyzer
        .analyze(code)
        .expect("builtin analyzer")
        .into_iter()
        .find(|r| r.rule == rule && r.line == line)
}

pub fn random_lines(rng: &mut impl Rng, n: usize) -> Vec<String> {
    const WORDS: &[&str] = &["a();", "b = 1;", "", "  c(d);", "}", "x", "return y;", "e.f(g);"];
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())].to_owned()).collect()
}
