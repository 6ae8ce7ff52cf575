//! Intra-file, interprocedural taint tracking for the `PT` (path traversal)
//! and `SQLi` rules.
//!
//! Sources are member reads rooted at `req`/`request`. A function's own
//! variables are tracked flow-sensitively with strong updates; variables of
//! enclosing scopes (and undeclared globals) are flow-insensitive summaries
//! with weak updates. Function parameters and return values are joined over
//! all call sites, iterated to a fixpoint. Every taint value carries the
//! lines it flowed through, which become the report's provenance.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use super::builtin::Ctx;
use super::walk::*;
use super::{Report, RuleCategory};
use crate::syntax::ast::*;

/// `Some(trail)` when tainted.
type Taint = Option<BTreeSet<u32>>;

const SOURCE_ROOTS: &[&str] = &["req", "request"];
const DB_NAMES: &[&str] = &["connection", "conn", "con", "db", "pool", "client"];
const EXPRESS_METHODS: &[&str] = &["get", "post", "put", "delete", "patch", "all", "use"];
const FILE_RESPONSES: &[&str] = &["sendFile", "download"];
const STRING_METHODS: &[&str] = &[
    "toString",
    "trim",
    "concat",
    "toLowerCase",
    "toUpperCase",
    "slice",
    "substring",
    "substr",
    "replace",
    "split",
    "join",
];
const MAX_ROUNDS: usize = 50;

fn union(a: &mut Taint, b: &Taint) {
    if let Some(b) = b {
        a.get_or_insert_with(BTreeSet::new).extend(b);
    }
}

fn with_line(mut t: Taint, line: u32) -> Taint {
    if let Some(s) = &mut t {
        s.insert(line);
    }
    t
}

fn with_lines(mut t: Taint, lines: &[u32]) -> Taint {
    if let Some(s) = &mut t {
        s.extend(lines);
    }
    t
}

type Env = HashMap<String, Taint>;

fn join_env(a: &mut Env, b: &Env) {
    for (k, v) in b {
        union(a.entry(k.clone()).or_insert(None), v);
    }
}

#[derive(Clone, PartialEq, Default)]
struct Summaries {
    params: Vec<Vec<Taint>>,
    ret: Vec<Taint>,
    /// All writes to a variable, keyed by owning scope.
    vars: HashMap<(FnIx, String), Taint>,
    /// Writes from functions other than the owner.
    foreign: HashMap<(FnIx, String), Taint>,
}

/// Express handler: name of its response parameter plus the registration lines.
struct Handler {
    res: String,
    lines: Vec<u32>,
}

struct Analysis<'c, 'a> {
    ctx: &'c Ctx<'a>,
    declared: Vec<HashSet<String>>,
    named_fns: HashMap<String, Option<FnIx>>,
    handlers: HashMap<FnIx, Handler>,
    s: Summaries,
    collect: bool,
    found: BTreeMap<(u32, &'static str), BTreeSet<u32>>,
}

pub(crate) fn analyze(ctx: &Ctx<'_>) -> Vec<Report> {
    let n = ctx.functions.len();
    let mut a = Analysis {
        ctx,
        declared: vec![HashSet::new(); n],
        named_fns: HashMap::new(),
        handlers: HashMap::new(),
        s: Summaries {
            params: ctx
                .functions
                .iter()
                .map(|f| vec![None; f.func.map_or(0, |f| f.params.len())])
                .collect(),
            ret: vec![None; n],
            ..Default::default()
        },
        collect: false,
        found: BTreeMap::new(),
    };
    a.prepare();
    for _ in 0..MAX_ROUNDS {
        let before = a.s.clone();
        a.round();
        if a.s == before {
            break;
        }
    }
    a.collect = true;
    a.round();

    a.found
        .into_iter()
        .map(|((line, rule), trail)| {
            let mut prov = trail.clone();
            for l in &trail {
                prov.extend(ctx.enclosing_headers(*l));
            }
            prov.insert(line);
            let message = match rule {
                "PT" => "Unsanitized input from the HTTP request flows into a file system path, allowing path traversal.",
                _ => "Unsanitized input from the HTTP request flows into a SQL query string, allowing SQL injection.",
            };
            let mut r = Report::new(rule, RuleCategory::SecurityFlow, message.to_owned(), line);
            r.provenance_lines = Some(prov);
            r
        })
        .collect()
}

impl<'c, 'a> Analysis<'c, 'a> {
    fn prepare(&mut self) {
        struct Decls<'m> {
            declared: &'m mut Vec<HashSet<String>>,
            named: &'m mut HashMap<String, Option<FnIx>>,
        }
        impl Decls<'_> {
            fn name_fn(&mut self, name: &str, f: &Function) {
                self.named
                    .entry(name.to_owned())
                    .and_modify(|e| *e = None)
                    .or_insert(Some(f.id + 1));
            }
        }
        impl<'a> Visitor<'a> for Decls<'_> {
            fn stmt(&mut self, s: &'a Stmt, f: FnIx) {
                match &s.kind {
                    StmtKind::Var { decls, .. } => {
                        for d in decls {
                            for n in d.target.bound_names() {
                                self.declared[f].insert(n.to_owned());
                            }
                            if let (Pattern::Ident(n, _), Some(Expr { kind: ExprKind::Function(func), .. })) =
                                (&d.target, &d.init)
                            {
                                self.name_fn(n, func);
                            }
                        }
                    }
                    StmtKind::Function(func) => {
                        if let Some(n) = &func.name {
                            self.declared[f].insert(n.clone());
                            self.name_fn(n, func);
                        }
                    }
                    StmtKind::ForInOf {
                        decl: Some(_), left, ..
                    } => {
                        for n in left.bound_names() {
                            self.declared[f].insert(n.to_owned());
                        }
                    }
                    StmtKind::Try { param: Some(p), .. } => {
                        for n in p.bound_names() {
                            self.declared[f].insert(n.to_owned());
                        }
                    }
                    _ => {}
                }
            }
        }
        walk_program(
            self.ctx.program,
            &mut Decls {
                declared: &mut self.declared,
                named: &mut self.named_fns,
            },
        );
        for (ix, info) in self.ctx.functions.iter().enumerate() {
            if let Some(func) = info.func {
                for p in &func.params {
                    for n in p.bound_names() {
                        self.declared[ix].insert(n.to_owned());
                    }
                }
            }
        }

        struct Handlers<'c, 'a> {
            ctx: &'c Ctx<'a>,
            out: HashMap<FnIx, Handler>,
        }
        impl<'a> Visitor<'a> for Handlers<'_, 'a> {
            fn expr(&mut self, e: &'a Expr, _f: FnIx) {
                let ExprKind::Call { callee, args } = &e.kind else { return };
                let ExprKind::Member { object, property } = &callee.kind else { return };
                if !EXPRESS_METHODS.contains(&property.as_str()) {
                    return;
                }
                let Some(app) = self.ctx.bindings.resolve(object) else { return };
                if !is_express_app(&app) {
                    return;
                }
                for arg in args {
                    let ExprKind::Function(func) = &arg.kind else { continue };
                    if let Some(Pattern::Ident(res, _)) = func.params.get(1) {
                        let mut lines = app.lines.clone();
                        lines.push(e.line);
                        self.out.insert(func.id + 1, Handler { res: res.clone(), lines });
                    }
                }
            }
        }
        let mut h = Handlers {
            ctx: self.ctx,
            out: HashMap::new(),
        };
        walk_program(self.ctx.program, &mut h);
        self.handlers = h.out;
    }

    fn round(&mut self) {
        for ix in 0..self.ctx.functions.len() {
            let info = &self.ctx.functions[ix];
            let mut env = Env::new();
            match info.func {
                None => self.block(&self.ctx.program.body, 0, &mut env),
                Some(func) => {
                    for (i, p) in func.params.iter().enumerate() {
                        let t = self.s.params[ix][i].clone();
                        self.bind(p, t, ix, &mut env, func.line);
                    }
                    match &func.body {
                        FnBody::Block(b) => self.block(b, ix, &mut env),
                        FnBody::Expr(e) => {
                            let t = self.expr(e, ix, &mut env);
                            union(&mut self.s.ret[ix], &t);
                        }
                    }
                }
            }
        }
    }

    fn owner(&self, name: &str, mut f: FnIx) -> FnIx {
        loop {
            if self.declared[f].contains(name) {
                return f;
            }
            match self.ctx.functions[f].parent {
                Some(p) => f = p,
                None => return 0,
            }
        }
    }

    fn read(&self, name: &str, f: FnIx, env: &Env) -> Taint {
        let owner = self.owner(name, f);
        let key = (owner, name.to_owned());
        if owner == f {
            let mut t = env.get(name).cloned().flatten();
            union(&mut t, self.s.foreign.get(&key).unwrap_or(&None));
            t
        } else {
            self.s.vars.get(&key).cloned().flatten()
        }
    }

    fn write(&mut self, name: &str, t: Taint, f: FnIx, env: &mut Env, weak: bool) {
        let owner = self.owner(name, f);
        let key = (owner, name.to_owned());
        if t.is_some() {
            union(self.s.vars.entry(key.clone()).or_insert(None), &t);
        }
        if owner == f {
            let slot = env.entry(name.to_owned()).or_insert(None);
            if weak {
                union(slot, &t);
            } else {
                *slot = t;
            }
        } else if t.is_some() {
            union(self.s.foreign.entry(key).or_insert(None), &t);
        }
    }

    fn bind(&mut self, p: &Pattern, t: Taint, f: FnIx, env: &mut Env, line: u32) {
        let t = with_line(t, line);
        match p {
            Pattern::Ident(n, _) => self.write(n, t, f, env, false),
            Pattern::Object(props) => {
                for (_, p) in props {
                    self.bind(p, t.clone(), f, env, line);
                }
            }
            Pattern::Array(items) => {
                for p in items.iter().flatten() {
                    self.bind(p, t.clone(), f, env, line);
                }
            }
            Pattern::Rest(p) => self.bind(p, t, f, env, line),
            Pattern::Default(p, d) => {
                let mut t = t;
                let dt = self.expr(d, f, env);
                union(&mut t, &dt);
                self.bind(p, t, f, env, line);
            }
        }
    }

    fn block(&mut self, stmts: &[Stmt], f: FnIx, env: &mut Env) {
        for s in stmts {
            self.stmt(s, f, env);
        }
    }

    fn body(&mut self, s: &Stmt, f: FnIx, env: &mut Env) {
        self.stmt(s, f, env);
    }

    fn stmt(&mut self, s: &Stmt, f: FnIx, env: &mut Env) {
        match &s.kind {
            StmtKind::Var { decls, .. } => {
                for d in decls {
                    let t = match &d.init {
                        Some(e) => self.expr(e, f, env),
                        None => None,
                    };
                    self.bind(&d.target, t, f, env, d.line);
                }
            }
            StmtKind::Expr(e) | StmtKind::Throw(e) | StmtKind::ExportDefault(e) => {
                self.expr(e, f, env);
            }
            StmtKind::Return(e) => {
                if let Some(e) = e {
                    let t = with_line(self.expr(e, f, env), s.line);
                    union(&mut self.s.ret[f], &t);
                }
            }
            StmtKind::If { test, cons, alt } => {
                self.expr(test, f, env);
                let mut other = env.clone();
                self.body(cons, f, env);
                if let Some(alt) = alt {
                    self.body(alt, f, &mut other);
                }
                join_env(env, &other);
            }
            StmtKind::While { test, body } | StmtKind::DoWhile { body, test } => {
                for _ in 0..2 {
                    self.expr(test, f, env);
                    let mut after = env.clone();
                    self.body(body, f, &mut after);
                    join_env(env, &after);
                }
            }
            StmtKind::For {
                init,
                test,
                update,
                body,
            } => {
                if let Some(init) = init {
                    self.stmt(init, f, env);
                }
                for _ in 0..2 {
                    if let Some(t) = test {
                        self.expr(t, f, env);
                    }
                    let mut after = env.clone();
                    self.body(body, f, &mut after);
                    if let Some(u) = update {
                        self.expr(u, f, &mut after);
                    }
                    join_env(env, &after);
                }
            }
            StmtKind::ForInOf { left, right, body, .. } => {
                let t = self.expr(right, f, env);
                for _ in 0..2 {
                    let mut after = env.clone();
                    self.bind(left, t.clone(), f, &mut after, s.line);
                    self.body(body, f, &mut after);
                    join_env(env, &after);
                }
            }
            StmtKind::Block(b) => self.block(b, f, env),
            StmtKind::Try {
                block,
                param,
                handler,
                finalizer,
            } => {
                let mut start = env.clone();
                self.block(block, f, env);
                if let Some(h) = handler {
                    join_env(&mut start, env);
                    if let Some(p) = param {
                        self.bind(p, None, f, &mut start, s.line);
                    }
                    self.block(h, f, &mut start);
                    join_env(env, &start);
                }
                if let Some(fin) = finalizer {
                    self.block(fin, f, env);
                }
            }
            StmtKind::Export(inner) => self.stmt(inner, f, env),
            StmtKind::Function(_)
            | StmtKind::Import { .. }
            | StmtKind::Break
            | StmtKind::Continue
            | StmtKind::Empty => {}
        }
    }

    fn args(&mut self, args: &[Expr], f: FnIx, env: &mut Env) -> Vec<Taint> {
        args.iter().map(|a| self.expr(a, f, env)).collect()
    }

    fn expr(&mut self, e: &Expr, f: FnIx, env: &mut Env) -> Taint {
        match &e.kind {
            ExprKind::Ident(n) => self.read(n, f, env),
            ExprKind::Member { object, .. } => {
                let mut t = self.expr(object, f, env);
                if e.root_ident().is_some_and(|r| SOURCE_ROOTS.contains(&r)) {
                    union(&mut t, &Some(BTreeSet::from([e.line])));
                }
                t
            }
            ExprKind::Index { object, index } => {
                let mut t = self.expr(object, f, env);
                self.expr(index, f, env);
                if e.root_ident().is_some_and(|r| SOURCE_ROOTS.contains(&r)) {
                    union(&mut t, &Some(BTreeSet::from([e.line])));
                }
                t
            }
            ExprKind::Template(items) | ExprKind::Array(items) => {
                let mut t = None;
                for i in items {
                    let x = self.expr(i, f, env);
                    union(&mut t, &x);
                }
                t
            }
            ExprKind::Object(props) => {
                let mut t = None;
                for p in props {
                    if let PropKey::Computed(k) = &p.key {
                        self.expr(k, f, env);
                    }
                    let x = self.expr(&p.value, f, env);
                    union(&mut t, &x);
                }
                t
            }
            ExprKind::Seq(items) => {
                let mut t = None;
                for i in items {
                    t = self.expr(i, f, env);
                }
                t
            }
            ExprKind::Binary { op, left, right } => {
                let mut l = self.expr(left, f, env);
                let r = self.expr(right, f, env);
                if matches!(*op, "+" | "||" | "??" | "&&") {
                    union(&mut l, &r);
                    l
                } else {
                    None
                }
            }
            ExprKind::Cond { test, cons, alt } => {
                self.expr(test, f, env);
                let mut t = self.expr(cons, f, env);
                let a = self.expr(alt, f, env);
                union(&mut t, &a);
                t
            }
            ExprKind::Spread(x) | ExprKind::Await(x) => self.expr(x, f, env),
            ExprKind::Unary { arg, .. } | ExprKind::Update { arg, .. } => {
                self.expr(arg, f, env);
                None
            }
            ExprKind::Assign { op, target, value } => {
                let t = with_line(self.expr(value, f, env), e.line);
                match &target.kind {
                    ExprKind::Ident(n) => {
                        let weak = *op != "=";
                        self.write(n, t.clone(), f, env, weak);
                    }
                    _ => {
                        // a field write taints the whole object
                        if let ExprKind::Index { index, .. } = &target.kind {
                            self.expr(index, f, env);
                        }
                        if let Some(root) = target.root_ident() {
                            if t.is_some() {
                                self.write(root, t.clone(), f, env, true);
                            }
                        }
                    }
                }
                t
            }
            ExprKind::New { callee, args } => {
                self.expr(callee, f, env);
                self.args(args, f, env);
                None
            }
            ExprKind::Call { callee, args } => self.call(e, callee, args, f, env),
            ExprKind::Function(_)
            | ExprKind::Str(_)
            | ExprKind::Num(_)
            | ExprKind::Regex(_)
            | ExprKind::Bool(_)
            | ExprKind::Null
            | ExprKind::This => None,
        }
    }

    fn call(&mut self, e: &Expr, callee: &Expr, args: &[Expr], f: FnIx, env: &mut Env) -> Taint {
        let module = self.ctx.bindings.resolve(callee);
        // the receiver is evaluated for its side effects and its taint
        let recv = match &callee.kind {
            ExprKind::Member { object, .. } => self.expr(object, f, env),
            ExprKind::Index { object, index } => {
                self.expr(index, f, env);
                self.expr(object, f, env)
            }
            ExprKind::Ident(_) => None,
            _ => {
                self.expr(callee, f, env);
                None
            }
        };
        let ts = self.args(args, f, env);
        let line = e.line;

        if let Some(m) = &module {
            let path_mod = ["path", "node:path"];
            if m.is(&path_mod, &["basename"]) {
                return None;
            }
            if ["join", "resolve", "normalize"].iter().any(|p| m.is(&path_mod, &[p])) {
                let mut t = None;
                for x in &ts {
                    union(&mut t, x);
                }
                return with_lines(with_line(t, line), &m.lines);
            }
            if self.collect && FS_MODULES.contains(&m.module.as_str()) && !m.path.is_empty() {
                if let Some(Some(trail)) = ts.first() {
                    let mut trail = trail.clone();
                    trail.extend(&m.lines);
                    self.report(line, "PT", trail);
                }
            }
        }

        if let ExprKind::Member { object, property } = &callee.kind {
            if self.collect {
                if let ExprKind::Ident(obj) = &object.kind {
                    if FILE_RESPONSES.contains(&property.as_str()) {
                        if let (Some(lines), Some(Some(trail))) = (self.handler_for(obj, f), ts.first()) {
                            let mut trail = trail.clone();
                            trail.extend(lines);
                            self.report(line, "PT", trail);
                        }
                    }
                    if matches!(property.as_str(), "query" | "execute") && DB_NAMES.contains(&obj.as_str()) {
                        if let Some(Some(trail)) = ts.first() {
                            self.report(line, "SQLi", trail.clone());
                        }
                    }
                }
            }
            if STRING_METHODS.contains(&property.as_str()) {
                let mut t = recv;
                if property == "concat" {
                    for x in &ts {
                        union(&mut t, x);
                    }
                }
                return with_line(t, line);
            }
            return None;
        }

        if let ExprKind::Ident(name) = &callee.kind {
            if matches!(name.as_str(), "String" | "decodeURIComponent" | "decodeURI" | "unescape") {
                return with_line(ts.first().cloned().flatten(), line);
            }
            if let Some(Some(g)) = self.named_fns.get(name).copied() {
                for (i, t) in ts.iter().enumerate() {
                    if i >= self.s.params[g].len() || matches!(args[i].kind, ExprKind::Spread(_)) {
                        break;
                    }
                    let t = with_line(t.clone(), line);
                    union(&mut self.s.params[g][i], &t);
                }
                return with_line(self.s.ret[g].clone(), line);
            }
        }
        None
    }

    /// Registration lines of the Express handler whose response parameter
    /// `name` is visible from `f`.
    fn handler_for(&self, name: &str, f: FnIx) -> Option<Vec<u32>> {
        let owner = self.owner(name, f);
        self.handlers
            .get(&owner)
            .filter(|h| h.res == name)
            .map(|h| h.lines.clone())
    }

    fn report(&mut self, line: u32, rule: &'static str, trail: BTreeSet<u32>) {
        self.found.entry((line, rule)).or_default().extend(trail);
    }
}
