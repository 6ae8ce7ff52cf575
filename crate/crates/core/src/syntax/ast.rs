//! Abstract syntax for the mini-js grammar.
//!
//! Every statement remembers its token range so the line-span tree can decide
//! whether the statement owns its physical lines outright.

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub body: Vec<Stmt>,
    /// Number of functions; ids are dense in `0..function_count`.
    pub function_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub first_tok: usize,
    pub last_tok: usize,
    pub line: u32,
    pub end_line: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Var,
    Let,
    Const,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    /// `import a, {b as c} from 'm'`, `import 'm'`, `import a = require('m')`.
    Import {
        bindings: Vec<ImportBinding>,
        source: String,
    },
    Var {
        kind: VarKind,
        decls: Vec<Declarator>,
    },
    Function(Box<Function>),
    Return(Option<Expr>),
    If {
        test: Expr,
        cons: Box<Stmt>,
        alt: Option<Box<Stmt>>,
    },
    While {
        test: Expr,
        body: Box<Stmt>,
    },
    DoWhile {
        body: Box<Stmt>,
        test: Expr,
    },
    For {
        init: Option<Box<Stmt>>,
        test: Option<Expr>,
        update: Option<Expr>,
        body: Box<Stmt>,
    },
    ForInOf {
        decl: Option<VarKind>,
        left: Pattern,
        right: Expr,
        body: Box<Stmt>,
    },
    Block(Vec<Stmt>),
    Expr(Expr),
    Throw(Expr),
    Try {
        block: Vec<Stmt>,
        param: Option<Pattern>,
        handler: Option<Vec<Stmt>>,
        finalizer: Option<Vec<Stmt>>,
    },
    Break,
    Continue,
    Empty,
    Export(Box<Stmt>),
    ExportDefault(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportBinding {
    /// Local name introduced by the import.
    pub local: String,
    /// Imported member, `None` for default or namespace imports.
    pub imported: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Declarator {
    pub target: Pattern,
    pub init: Option<Expr>,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    Ident(String, u32),
    Object(Vec<(String, Pattern)>),
    Array(Vec<Option<Pattern>>),
    Rest(Box<Pattern>),
    Default(Box<Pattern>, Box<Expr>),
}

impl Pattern {
    /// Names bound by the pattern, left to right.
    pub fn bound_names(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_names(&mut out);
        out
    }

    fn collect_names<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Pattern::Ident(name, _) => out.push(name),
            Pattern::Object(props) => props.iter().for_each(|(_, p)| p.collect_names(out)),
            Pattern::Array(items) => items.iter().flatten().for_each(|p| p.collect_names(out)),
            Pattern::Rest(p) | Pattern::Default(p, _) => p.collect_names(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Function {
    pub id: usize,
    pub name: Option<String>,
    pub params: Vec<Pattern>,
    pub body: FnBody,
    pub is_arrow: bool,
    /// Line of the function header.
    pub line: u32,
    pub end_line: u32,
}

impl Function {
    /// `(required, total, has_rest)` parameter counts. Parameters after the
    /// first default are optional.
    pub fn arity(&self) -> (usize, usize, bool) {
        let is_rest = |p: &&Pattern| matches!(p, Pattern::Rest(_));
        let rest = self.params.iter().any(|p| is_rest(&p));
        let total = self.params.iter().filter(|p| !is_rest(p)).count();
        let required = self
            .params
            .iter()
            .take_while(|p| !matches!(p, Pattern::Rest(_) | Pattern::Default(..)))
            .count();
        (required, total, rest)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FnBody {
    Block(Vec<Stmt>),
    Expr(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Ident(String),
    Str(String),
    Num(String),
    Template(Vec<Expr>),
    Regex(String),
    Bool(bool),
    Null,
    This,
    Array(Vec<Expr>),
    Object(Vec<Prop>),
    Function(Box<Function>),
    Call {
        callee: Box<Expr>,
        args: Vec<Expr>,
    },
    New {
        callee: Box<Expr>,
        args: Vec<Expr>,
    },
    Member {
        object: Box<Expr>,
        property: String,
    },
    Index {
        object: Box<Expr>,
        index: Box<Expr>,
    },
    Assign {
        op: &'static str,
        target: Box<Expr>,
        value: Box<Expr>,
    },
    Binary {
        op: &'static str,
        left: Box<Expr>,
        right: Box<Expr>,
    },
    Unary {
        op: &'static str,
        arg: Box<Expr>,
    },
    Update {
        op: &'static str,
        arg: Box<Expr>,
    },
    Cond {
        test: Box<Expr>,
        cons: Box<Expr>,
        alt: Box<Expr>,
    },
    Spread(Box<Expr>),
    Await(Box<Expr>),
    Seq(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prop {
    pub key: PropKey,
    pub value: Expr,
    pub line: u32,
    pub first_tok: usize,
    pub last_tok: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropKey {
    Named(String),
    Computed(Box<Expr>),
    Spread,
}

impl Expr {
    /// Dotted path of an identifier/member chain, e.g. `fs.promises.readFile`.
    pub fn dotted_path(&self) -> Option<String> {
        match &self.kind {
            ExprKind::Ident(n) => Some(n.clone()),
            ExprKind::Member { object, property } => {
                object.dotted_path().map(|p| format!("{p}.{property}"))
            }
            _ => None,
        }
    }

    /// Root identifier of a member/index/call chain.
    pub fn root_ident(&self) -> Option<&str> {
        match &self.kind {
            ExprKind::Ident(n) => Some(n),
            ExprKind::Member { object, .. } | ExprKind::Index { object, .. } => object.root_ident(),
            _ => None,
        }
    }

    /// Does this expression (transitively) contain a function literal?
    pub fn contains_function(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| {
            if matches!(e.kind, ExprKind::Function(_)) {
                found = true;
            }
        });
        found
    }

    /// Pre-order visit of this expression and its sub-expressions, not
    /// descending into function bodies.
    pub fn visit<F: FnMut(&Expr)>(&self, f: &mut F) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    /// Direct sub-expressions in source order (function bodies excluded).
    pub fn children(&self) -> Vec<&Expr> {
        match &self.kind {
            ExprKind::Template(items) | ExprKind::Array(items) | ExprKind::Seq(items) => {
                items.iter().collect()
            }
            ExprKind::Object(props) => {
                let mut v = Vec::new();
                for p in props {
                    if let PropKey::Computed(k) = &p.key {
                        v.push(k.as_ref());
                    }
                    v.push(&p.value);
                }
                v
            }
            ExprKind::Call { callee, args } | ExprKind::New { callee, args } => {
                std::iter::once(callee.as_ref()).chain(args.iter()).collect()
            }
            ExprKind::Member { object, .. } => vec![object],
            ExprKind::Index { object, index } => vec![object, index],
            ExprKind::Assign { target, value, .. } => vec![target, value],
            ExprKind::Binary { left, right, .. } => vec![left, right],
            ExprKind::Unary { arg, .. }
            | ExprKind::Update { arg, .. }
            | ExprKind::Spread(arg)
            | ExprKind::Await(arg) => vec![arg],
            ExprKind::Cond { test, cons, alt } => vec![test, cons, alt],
            ExprKind::Function(_)
            | ExprKind::Ident(_)
            | ExprKind::Str(_)
            | ExprKind::Num(_)
            | ExprKind::Regex(_)
            | ExprKind::Bool(_)
            | ExprKind::Null
            | ExprKind::This => vec![],
        }
    }
}

impl Stmt {
    /// Statement lists nested directly in this statement (blocks, branches,
    /// loop bodies). Function bodies reached through expressions are not
    /// included; see [`Stmt::expressions`].
    pub fn nested_bodies(&self) -> Vec<&[Stmt]> {
        match &self.kind {
            StmtKind::Function(f) => match &f.body {
                FnBody::Block(b) => vec![b.as_slice()],
                FnBody::Expr(_) => vec![],
            },
            StmtKind::If { cons, alt, .. } => {
                let mut v = vec![std::slice::from_ref(cons.as_ref())];
                if let Some(alt) = alt {
                    v.push(std::slice::from_ref(alt.as_ref()));
                }
                v
            }
            StmtKind::While { body, .. }
            | StmtKind::DoWhile { body, .. }
            | StmtKind::ForInOf { body, .. } => vec![std::slice::from_ref(body.as_ref())],
            StmtKind::For { init, body, .. } => {
                let mut v = Vec::new();
                if let Some(init) = init {
                    v.push(std::slice::from_ref(init.as_ref()));
                }
                v.push(std::slice::from_ref(body.as_ref()));
                v
            }
            StmtKind::Block(b) => vec![b.as_slice()],
            StmtKind::Try {
                block,
                handler,
                finalizer,
                ..
            } => {
                let mut v = vec![block.as_slice()];
                if let Some(h) = handler {
                    v.push(h.as_slice());
                }
                if let Some(f) = finalizer {
                    v.push(f.as_slice());
                }
                v
            }
            StmtKind::Export(inner) => inner.nested_bodies(),
            _ => vec![],
        }
    }

    /// Top-level expressions owned by this statement (not those of nested statements).
    pub fn expressions(&self) -> Vec<&Expr> {
        match &self.kind {
            StmtKind::Var { decls, .. } => decls.iter().filter_map(|d| d.init.as_ref()).collect(),
            StmtKind::Return(Some(e))
            | StmtKind::Expr(e)
            | StmtKind::Throw(e)
            | StmtKind::ExportDefault(e) => vec![e],
            StmtKind::If { test, .. }
            | StmtKind::While { test, .. }
            | StmtKind::DoWhile { test, .. } => vec![test],
            StmtKind::For { test, update, .. } => test.iter().chain(update.iter()).collect(),
            StmtKind::ForInOf { right, .. } => vec![right],
            StmtKind::Function(f) => match &f.body {
                FnBody::Expr(e) => vec![e.as_ref()],
                FnBody::Block(_) => vec![],
            },
            StmtKind::Export(inner) => inner.expressions(),
            _ => vec![],
        }
    }
}
