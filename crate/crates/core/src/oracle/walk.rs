//! Whole-program traversal and module-binding resolution shared by the
//! builtin rules.

use std::collections::HashMap;

use crate::syntax::ast::*;

/// Index of a function in [`Program`] order; 0 is the top level.
pub(crate) type FnIx = usize;

pub(crate) struct FnInfo<'a> {
    pub func: Option<&'a Function>,
    pub parent: Option<FnIx>,
    /// Header and last line; the top level spans everything.
    pub start: u32,
    pub end: u32,
}

pub(crate) trait Visitor<'a> {
    fn stmt(&mut self, _s: &'a Stmt, _f: FnIx) {}
    fn expr(&mut self, _e: &'a Expr, _f: FnIx) {}
}

/// Functions of the program, indexed by `Function::id + 1`.
pub(crate) fn functions(program: &Program) -> Vec<FnInfo<'_>> {
    struct Collect<'a> {
        out: Vec<Option<FnInfo<'a>>>,
    }
    impl<'a> Visitor<'a> for Collect<'a> {
        fn expr(&mut self, e: &'a Expr, f: FnIx) {
            if let ExprKind::Function(func) = &e.kind {
                self.record(func, f);
            }
        }
        fn stmt(&mut self, s: &'a Stmt, f: FnIx) {
            let mut s = s;
            while let StmtKind::Export(inner) = &s.kind {
                s = inner;
            }
            if let StmtKind::Function(func) = &s.kind {
                self.record(func, f);
            }
        }
    }
    impl<'a> Collect<'a> {
        fn record(&mut self, func: &'a Function, parent: FnIx) {
            self.out[func.id + 1] = Some(FnInfo {
                func: Some(func),
                parent: Some(parent),
                start: func.line,
                end: func.end_line,
            });
        }
    }
    let mut c = Collect {
        out: (0..=program.function_count).map(|_| None).collect(),
    };
    c.out[0] = Some(FnInfo {
        func: None,
        parent: None,
        start: 1,
        end: u32::MAX,
    });
    walk_program(program, &mut c);
    c.out.into_iter().map(|f| f.expect("every function id is visited")).collect()
}

pub(crate) fn walk_program<'a>(program: &'a Program, v: &mut impl Visitor<'a>) {
    walk_stmts(&program.body, 0, v);
}

pub(crate) fn walk_stmts<'a>(stmts: &'a [Stmt], f: FnIx, v: &mut impl Visitor<'a>) {
    for s in stmts {
        walk_stmt(s, f, v);
    }
}

pub(crate) fn walk_stmt<'a>(s: &'a Stmt, f: FnIx, v: &mut impl Visitor<'a>) {
    v.stmt(s, f);
    match &s.kind {
        StmtKind::Function(func) => walk_function(func, v),
        StmtKind::Export(inner) => {
            walk_stmt(inner, f, v);
            return;
        }
        StmtKind::Var { decls, .. } => {
            for d in decls {
                walk_pattern(&d.target, f, v);
            }
        }
        _ => {}
    }
    if !matches!(s.kind, StmtKind::Function(_)) {
        for e in s.expressions() {
            walk_expr(e, f, v);
        }
        for body in s.nested_bodies() {
            walk_stmts(body, f, v);
        }
    }
}

fn walk_pattern<'a>(p: &'a Pattern, f: FnIx, v: &mut impl Visitor<'a>) {
    match p {
        Pattern::Ident(..) => {}
        Pattern::Object(props) => props.iter().for_each(|(_, p)| walk_pattern(p, f, v)),
        Pattern::Array(items) => items.iter().flatten().for_each(|p| walk_pattern(p, f, v)),
        Pattern::Rest(p) => walk_pattern(p, f, v),
        Pattern::Default(p, e) => {
            walk_pattern(p, f, v);
            walk_expr(e, f, v);
        }
    }
}

fn walk_function<'a>(func: &'a Function, v: &mut impl Visitor<'a>) {
    let inner = func.id + 1;
    for p in &func.params {
        walk_pattern(p, inner, v);
    }
    match &func.body {
        FnBody::Block(b) => walk_stmts(b, inner, v),
        FnBody::Expr(e) => walk_expr(e, inner, v),
    }
}

pub(crate) fn walk_expr<'a>(e: &'a Expr, f: FnIx, v: &mut impl Visitor<'a>) {
    v.expr(e, f);
    if let ExprKind::Function(func) = &e.kind {
        walk_function(func, v);
        return;
    }
    for c in e.children() {
        walk_expr(c, f, v);
    }
}

/// What a name refers to when it was bound to (something derived from) a
/// `require`/`import` of a module.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ModuleRef {
    pub module: String,
    /// Member names and `()` calls applied after the module itself.
    pub path: Vec<String>,
    /// Lines of the import and of every derivation step.
    pub lines: Vec<u32>,
}

impl ModuleRef {
    pub fn is(&self, module: &[&str], path: &[&str]) -> bool {
        module.contains(&self.module.as_str())
            && self.path.len() == path.len()
            && self.path.iter().zip(path).all(|(a, b)| a == b)
    }
}

/// Names bound to modules, collected in source order over the whole file.
#[derive(Debug, Default)]
pub(crate) struct Bindings {
    names: HashMap<String, ModuleRef>,
}

impl Bindings {
    pub fn collect(program: &Program) -> Self {
        struct Collect {
            b: Bindings,
        }
        impl<'a> Visitor<'a> for Collect {
            fn stmt(&mut self, s: &'a Stmt, _f: FnIx) {
                match &s.kind {
                    StmtKind::Import { bindings, source } => {
                        for ib in bindings {
                            let path = ib.imported.iter().filter(|n| *n != "default").cloned().collect();
                            self.b.names.entry(ib.local.clone()).or_insert(ModuleRef {
                                module: source.clone(),
                                path,
                                lines: vec![s.line],
                            });
                        }
                    }
                    StmtKind::Var { decls, .. } => {
                        for d in decls {
                            if let Some(init) = &d.init {
                                self.bind(&d.target, init, d.line);
                            }
                        }
                    }
                    StmtKind::Expr(Expr {
                        kind: ExprKind::Assign { op: "=", target, value },
                        ..
                    }) => {
                        if let ExprKind::Ident(n) = &target.kind {
                            self.bind(&Pattern::Ident(n.clone(), s.line), value, s.line);
                        }
                    }
                    _ => {}
                }
            }
        }
        impl Collect {
            fn bind(&mut self, target: &Pattern, init: &Expr, line: u32) {
                let Some(mut r) = self.b.resolve(init) else { return };
                if !r.lines.contains(&line) {
                    r.lines.push(line);
                }
                match target {
                    Pattern::Ident(n, _) => {
                        self.b.names.entry(n.clone()).or_insert(r);
                    }
                    Pattern::Object(props) => {
                        for (key, p) in props {
                            let local = match p {
                                Pattern::Ident(n, _) => n,
                                Pattern::Default(inner, _) => match inner.as_ref() {
                                    Pattern::Ident(n, _) => n,
                                    _ => continue,
                                },
                                _ => continue,
                            };
                            let mut r = r.clone();
                            r.path.push(key.clone());
                            self.b.names.entry(local.clone()).or_insert(r);
                        }
                    }
                    _ => {}
                }
            }
        }
        let mut c = Collect { b: Bindings::default() };
        walk_program(program, &mut c);
        c.b
    }

    pub fn get(&self, name: &str) -> Option<&ModuleRef> {
        self.names.get(name)
    }

    /// Resolve a require/member/call chain to the module it comes from.
    pub fn resolve(&self, e: &Expr) -> Option<ModuleRef> {
        match &e.kind {
            ExprKind::Ident(n) => self.names.get(n).cloned(),
            ExprKind::Call { callee, args } => {
                if matches!(&callee.kind, ExprKind::Ident(n) if n == "require") {
                    if let Some(Expr {
                        kind: ExprKind::Str(m),
                        ..
                    }) = args.first()
                    {
                        return Some(ModuleRef {
                            module: m.clone(),
                            path: vec![],
                            lines: vec![e.line],
                        });
                    }
                    return None;
                }
                let mut r = self.resolve(callee)?;
                r.path.push("()".into());
                Some(r)
            }
            ExprKind::Member { object, property } => {
                let mut r = self.resolve(object)?;
                r.path.push(property.clone());
                Some(r)
            }
            ExprKind::Await(inner) => self.resolve(inner),
            _ => None,
        }
    }
}

/// Is `e` an Express application or router?
pub(crate) fn is_express_app(r: &ModuleRef) -> bool {
    r.is(&["express"], &["()"]) || r.is(&["express"], &["Router", "()"])
}

pub(crate) const FS_MODULES: &[&str] = &["fs", "node:fs", "fs/promises", "node:fs/promises", "fs-extra"];
