//! Toy checkers, one per rule category, plus the taint rules.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use super::taint;
use super::walk::*;
use super::{Report, RuleCategory};
use crate::source::SourceText;
use crate::syntax::ast::*;
use crate::syntax::parse_ast;

pub const PARSE_RULE: &str = "__parse__";

/// Every builtin rule id with its category.
pub const RULES: &[(&str, RuleCategory)] = &[
    ("DuplicateKey", RuleCategory::Ast),
    ("UnclosedResource", RuleCategory::Local),
    ("ArityMismatch", RuleCategory::FileWide),
    ("DangerousCall", RuleCategory::SecurityLocal),
    ("PT", RuleCategory::SecurityFlow),
    ("SQLi", RuleCategory::SecurityFlow),
];

pub fn category_of(rule: &str) -> Option<RuleCategory> {
    RULES.iter().find(|(r, _)| *r == rule).map(|(_, c)| *c)
}

/// A selection of builtin rules: `all` or a comma-separated list of ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RuleSet {
    rules: Option<BTreeSet<String>>,
}

impl RuleSet {
    pub fn all() -> Self {
        Self { rules: None }
    }

    pub fn contains(&self, rule: &str) -> bool {
        self.rules.as_ref().is_none_or(|r| r.contains(rule))
    }
}

impl Default for RuleSet {
    fn default() -> Self {
        Self::all()
    }
}

impl FromStr for RuleSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" || s.is_empty() {
            return Ok(Self::all());
        }
        let mut rules = BTreeSet::new();
        for r in s.split(',').map(str::trim) {
            if category_of(r).is_none() {
                return Err(format!("unknown builtin rule `{r}`"));
            }
            rules.insert(r.to_owned());
        }
        Ok(Self { rules: Some(rules) })
    }
}

impl fmt::Display for RuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.rules {
            None => f.write_str("all"),
            Some(r) => f.write_str(&r.iter().cloned().collect::<Vec<_>>().join(",")),
        }
    }
}

/// Run the selected rules. Unparseable input yields a single marker report.
pub fn run(rules: &RuleSet, code: &SourceText) -> Vec<Report> {
    let program = match parse_ast(code) {
        Ok(p) => p,
        Err(e) => {
            let line = e.line.clamp(1, code.len().max(1) as u32);
            return vec![Report::new(PARSE_RULE, RuleCategory::Ast, e.message, line)];
        }
    };
    let ctx = Ctx::new(&program);
    let mut out = Vec::new();
    if rules.contains("DuplicateKey") {
        duplicate_key(&ctx, &mut out);
    }
    if rules.contains("UnclosedResource") {
        unclosed_resource(&ctx, &mut out);
    }
    if rules.contains("ArityMismatch") {
        arity_mismatch(&ctx, &mut out);
    }
    if rules.contains("DangerousCall") {
        dangerous_call(&ctx, &mut out);
    }
    if rules.contains("PT") || rules.contains("SQLi") {
        let flows = taint::analyze(&ctx);
        out.extend(flows.into_iter().filter(|r| rules.contains(&r.rule)));
    }
    finalize(out)
}

/// Sort by (line, rule) and merge duplicates, uniting their provenance.
pub(crate) fn finalize(mut reports: Vec<Report>) -> Vec<Report> {
    reports.sort_by(|a, b| (a.line, &a.rule).cmp(&(b.line, &b.rule)));
    let mut out: Vec<Report> = Vec::with_capacity(reports.len());
    for r in reports {
        match out.last_mut() {
            Some(last) if last.line == r.line && last.rule == r.rule => {
                if let (Some(a), Some(b)) = (&mut last.provenance_lines, r.provenance_lines) {
                    a.extend(b);
                }
            }
            _ => out.push(r),
        }
    }
    out
}

pub(crate) struct Ctx<'a> {
    pub program: &'a Program,
    pub functions: Vec<FnInfo<'a>>,
    pub bindings: Bindings,
}

impl<'a> Ctx<'a> {
    fn new(program: &'a Program) -> Self {
        Self {
            program,
            functions: functions(program),
            bindings: Bindings::collect(program),
        }
    }

    /// Header lines of every function enclosing `line`.
    pub fn enclosing_headers(&self, line: u32) -> impl Iterator<Item = u32> + '_ {
        self.functions[1..]
            .iter()
            .filter(move |f| f.start <= line && line <= f.end)
            .map(|f| f.start)
    }
}

fn with_provenance(mut r: Report, lines: impl IntoIterator<Item = u32>) -> Report {
    let mut set: BTreeSet<u32> = lines.into_iter().collect();
    set.insert(r.line);
    r.provenance_lines = Some(set);
    r
}

fn duplicate_key(ctx: &Ctx<'_>, out: &mut Vec<Report>) {
    struct V<'o> {
        out: &'o mut Vec<Report>,
    }
    impl<'a> Visitor<'a> for V<'_> {
        fn expr(&mut self, e: &'a Expr, _f: FnIx) {
            let ExprKind::Object(props) = &e.kind else { return };
            let mut seen: HashMap<&str, u32> = HashMap::new();
            for p in props {
                let PropKey::Named(name) = &p.key else { continue };
                match seen.get(name.as_str()) {
                    Some(&first) => {
                        let r = Report::new(
                            "DuplicateKey",
                            RuleCategory::Ast,
                            format!("Duplicate key '{name}' in object literal; the earlier value is silently overwritten."),
                            p.line,
                        );
                        self.out.push(with_provenance(r, [first]));
                    }
                    None => {
                        seen.insert(name, p.line);
                    }
                }
            }
        }
    }
    walk_program(ctx.program, &mut V { out });
}

fn callee_name(callee: &Expr) -> Option<&str> {
    match &callee.kind {
        ExprKind::Ident(n) => Some(n),
        ExprKind::Member { property, .. } => Some(property),
        _ => None,
    }
}

fn unclosed_resource(ctx: &Ctx<'_>, out: &mut Vec<Report>) {
    fn is_open(e: &Expr) -> bool {
        matches!(&e.kind, ExprKind::Call { callee, .. }
            if matches!(callee_name(callee), Some("open" | "openSync")))
    }
    /// Opened handles per function: (name or None for a discarded handle, line).
    struct V {
        opened: Vec<(FnIx, Option<String>, u32)>,
        closed: HashSet<(FnIx, String)>,
    }
    impl<'a> Visitor<'a> for V {
        fn stmt(&mut self, s: &'a Stmt, f: FnIx) {
            match &s.kind {
                StmtKind::Var { decls, .. } => {
                    for d in decls {
                        if let (Pattern::Ident(n, _), Some(init)) = (&d.target, &d.init) {
                            if is_open(strip_await(init)) {
                                self.opened.push((f, Some(n.clone()), d.line));
                            }
                        }
                    }
                }
                StmtKind::Expr(e) => match &e.kind {
                    ExprKind::Assign { op: "=", target, value } if is_open(strip_await(value)) => {
                        if let ExprKind::Ident(n) = &target.kind {
                            self.opened.push((f, Some(n.clone()), s.line));
                        }
                    }
                    _ if is_open(strip_await(e)) => self.opened.push((f, None, s.line)),
                    _ => {}
                },
                _ => {}
            }
        }
        fn expr(&mut self, e: &'a Expr, f: FnIx) {
            let ExprKind::Call { callee, args } = &e.kind else { return };
            match &callee.kind {
                // x.close()
                ExprKind::Member { object, property } if property == "close" && args.is_empty() => {
                    if let ExprKind::Ident(n) = &object.kind {
                        self.closed.insert((f, n.clone()));
                    }
                }
                _ => {
                    // close(x), fs.closeSync(x)
                    if matches!(callee_name(callee), Some("close" | "closeSync")) {
                        if let Some(Expr {
                            kind: ExprKind::Ident(n),
                            ..
                        }) = args.first()
                        {
                            self.closed.insert((f, n.clone()));
                        }
                    }
                }
            }
        }
    }
    let mut v = V {
        opened: Vec::new(),
        closed: HashSet::new(),
    };
    walk_program(ctx.program, &mut v);
    for (f, name, line) in v.opened {
        let leaked = match &name {
            Some(n) => !v.closed.contains(&(f, n.clone())),
            None => true,
        };
        if leaked {
            let what = name.as_deref().unwrap_or("the handle");
            let r = Report::new(
                "UnclosedResource",
                RuleCategory::Local,
                format!("Resource opened into {what} is never closed in this function."),
                line,
            );
            out.push(with_provenance(r, ctx.enclosing_headers(line).collect::<Vec<_>>()));
        }
    }
}

fn strip_await(e: &Expr) -> &Expr {
    match &e.kind {
        ExprKind::Await(inner) => inner,
        _ => e,
    }
}

fn arity_mismatch(ctx: &Ctx<'_>, out: &mut Vec<Report>) {
    // name -> (function, declaration line); names declared twice are ambiguous
    let mut decls: HashMap<&str, Option<(&Function, u32)>> = HashMap::new();
    struct D<'a, 'm> {
        decls: &'m mut HashMap<&'a str, Option<(&'a Function, u32)>>,
    }
    impl<'a> Visitor<'a> for D<'a, '_> {
        fn stmt(&mut self, s: &'a Stmt, _f: FnIx) {
            match &s.kind {
                StmtKind::Function(func) => {
                    if let Some(n) = &func.name {
                        self.add(n, func, func.line);
                    }
                }
                StmtKind::Var { decls, .. } => {
                    for d in decls {
                        if let (Pattern::Ident(n, _), Some(Expr { kind: ExprKind::Function(func), .. })) =
                            (&d.target, &d.init)
                        {
                            self.add(n, func, d.line);
                        }
                    }
                }
                _ => {}
            }
        }
    }
    impl<'a> D<'a, '_> {
        fn add(&mut self, name: &'a str, func: &'a Function, line: u32) {
            self.decls
                .entry(name)
                .and_modify(|e| *e = None)
                .or_insert(Some((func, line)));
        }
    }
    walk_program(ctx.program, &mut D { decls: &mut decls });

    struct C<'a, 'm, 'o> {
        decls: &'m HashMap<&'a str, Option<(&'a Function, u32)>>,
        out: &'o mut Vec<Report>,
    }
    impl<'a> Visitor<'a> for C<'a, '_, '_> {
        fn expr(&mut self, e: &'a Expr, _f: FnIx) {
            let ExprKind::Call { callee, args } = &e.kind else { return };
            let ExprKind::Ident(name) = &callee.kind else { return };
            let Some(Some((func, decl_line))) = self.decls.get(name.as_str()) else { return };
            if args.iter().any(|a| matches!(a.kind, ExprKind::Spread(_))) {
                return;
            }
            let (required, total, rest) = func.arity();
            let n = args.len();
            if n < required || (n > total && !rest) {
                let expected = if required == total {
                    format!("{total}")
                } else if rest {
                    format!("at least {required}")
                } else {
                    format!("{required} to {total}")
                };
                let r = Report::new(
                    "ArityMismatch",
                    RuleCategory::FileWide,
                    format!("Function '{name}' expects {expected} argument(s) but is called with {n}."),
                    e.line,
                );
                self.out.push(with_provenance(r, [*decl_line]));
            }
        }
    }
    walk_program(ctx.program, &mut C { decls: &decls, out });
}

fn is_concatenation(e: &Expr) -> bool {
    match &e.kind {
        ExprKind::Binary { op: "+", left, right } => {
            let literal = |x: &Expr| matches!(x.kind, ExprKind::Str(_) | ExprKind::Num(_));
            !(literal(left) && literal(right)) || is_concatenation(left) || is_concatenation(right)
        }
        ExprKind::Template(holes) => !holes.is_empty(),
        _ => false,
    }
}

fn dangerous_call(ctx: &Ctx<'_>, out: &mut Vec<Report>) {
    struct V<'c, 'a, 'o> {
        ctx: &'c Ctx<'a>,
        out: &'o mut Vec<Report>,
    }
    impl<'a> Visitor<'a> for V<'_, 'a, '_> {
        fn expr(&mut self, e: &'a Expr, _f: FnIx) {
            let ExprKind::Call { callee, args } = &e.kind else { return };
            if matches!(&callee.kind, ExprKind::Ident(n) if n == "eval") && self.ctx.bindings.get("eval").is_none() {
                let r = Report::new(
                    "DangerousCall",
                    RuleCategory::SecurityLocal,
                    "Avoid eval: it executes arbitrary code.".to_owned(),
                    e.line,
                );
                self.out.push(with_provenance(r, []));
                return;
            }
            let Some(target) = self.ctx.bindings.resolve(callee) else { return };
            let is_exec = target.is(&["child_process", "node:child_process"], &["exec"])
                || target.is(&["child_process", "node:child_process"], &["execSync"]);
            if is_exec && args.first().is_some_and(is_concatenation) {
                let r = Report::new(
                    "DangerousCall",
                    RuleCategory::SecurityLocal,
                    "Shell command built by string concatenation is passed to child_process.exec; use execFile with an argument list.".to_owned(),
                    e.line,
                );
                self.out.push(with_provenance(r, target.lines.clone()));
            }
        }
    }
    walk_program(ctx.program, &mut V { ctx, out });
}
