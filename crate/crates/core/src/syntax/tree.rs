use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::lexer::Token;
use super::Grammar;
use crate::source::SourceText;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Statement,
    Declaration,
    Import,
    Expression,
    Other,
}

/// Inclusive, 1-based line range. The root of an empty file has span (0, 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: u32,
    pub end: u32,
}

impl Span {
    pub fn new(start: u32, end: u32) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, line: u32) -> bool {
        self.start <= line && line <= self.end
    }

    pub fn contains_span(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn lines(&self) -> std::ops::RangeInclusive<u32> {
        self.start..=self.end
    }

    pub fn len(&self) -> u32 {
        if self.start == 0 {
            0
        } else {
            self.end - self.start + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub level: u32,
    /// Lines owned by the node, including attached blank and comment lines.
    pub span: Span,
    pub children: Vec<NodeId>,
    pub parent: Option<NodeId>,
    /// Token index range, for grammars that tokenize.
    pub tokens: Option<(usize, usize)>,
    /// The node owns its lines outright and can be cut without splitting a line.
    pub deletable: bool,
}

/// A line-spanned hierarchy over a source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxTree {
    nodes: Vec<SyntaxNode>,
    source: SourceText,
    grammar: Grammar,
    depth: u32,
}

impl SyntaxTree {
    pub fn root(&self) -> &SyntaxNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> Option<&SyntaxNode> {
        self.nodes.get(id.0 as usize)
    }

    /// All nodes in pre-order; a node's id is its index here.
    pub fn nodes(&self) -> &[SyntaxNode] {
        &self.nodes
    }

    pub fn source(&self) -> &SourceText {
        &self.source
    }

    pub fn grammar(&self) -> Grammar {
        self.grammar
    }

    /// Deepest level of any node.
    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn is_ancestor(&self, ancestor: NodeId, mut node: NodeId) -> bool {
        while let Some(parent) = self.nodes[node.0 as usize].parent {
            if parent == ancestor {
                return true;
            }
            node = parent;
        }
        false
    }

    /// Deletion candidates at `level`.
    pub fn nodes_at(&self, level: u32) -> Vec<&SyntaxNode> {
        self.nodes
            .iter()
            .filter(|n| n.level == level && n.deletable && n.kind != NodeKind::Expression)
            .collect()
    }
}

/// Intermediate node before ids and levels are assigned.
#[derive(Debug, Clone)]
pub(crate) struct RawNode {
    pub kind: NodeKind,
    pub tokens: Option<(usize, usize)>,
    pub start: u32,
    pub end: u32,
    /// Lines actually covered by tokens or text, before trivia is attached.
    pub core: (u32, u32),
    pub children: Vec<RawNode>,
}

/// First and last token touching each line.
pub(crate) struct LineTokens {
    first: Vec<Option<usize>>,
    last: Vec<Option<usize>>,
}

impl LineTokens {
    fn new(tokens: &[Token], lines: usize) -> Self {
        let mut first = vec![None; lines + 2];
        let mut last = vec![None; lines + 2];
        for (i, t) in tokens.iter().enumerate() {
            for l in t.line..=t.end_line {
                let l = l as usize;
                if l < first.len() {
                    first[l].get_or_insert(i);
                    last[l] = Some(i);
                }
            }
        }
        Self { first, last }
    }

    fn touched(&self, line: u32) -> bool {
        self.first.get(line as usize).is_some_and(Option::is_some)
    }
}

pub(crate) enum Touch<'a> {
    Tokens(&'a LineTokens),
    Lines(Vec<bool>),
}

impl Touch<'_> {
    fn touched(&self, line: u32) -> bool {
        match self {
            Touch::Tokens(t) => t.touched(line),
            Touch::Lines(v) => v.get(line as usize).copied().unwrap_or(false),
        }
    }
}

pub(crate) fn build_mini_js(source: SourceText, program: &Program, tokens: &[Token]) -> SyntaxTree {
    let b = Builder { tokens };
    let top: Vec<RawNode> = program.body.iter().map(|s| b.stmt(s)).collect();
    let lt = LineTokens::new(tokens, source.len());
    finish(source, Grammar::MiniJs, top, Touch::Tokens(&lt), Some(&lt))
}

/// Normalize siblings, attach trivia, assign ids and levels.
pub(crate) fn finish(
    source: SourceText,
    grammar: Grammar,
    top: Vec<RawNode>,
    touch: Touch<'_>,
    line_tokens: Option<&LineTokens>,
) -> SyntaxTree {
    let n = source.len() as u32;
    let root_span = if n == 0 { Span::new(0, 0) } else { Span::new(1, n) };
    let mut top = normalize(top);
    attach_trivia(&mut top, 0, n + 1, &touch);
    let mut nodes = vec![SyntaxNode {
        id: NodeId(0),
        kind: NodeKind::Other,
        level: 0,
        span: root_span,
        children: Vec::new(),
        parent: None,
        tokens: None,
        deletable: false,
    }];
    let mut depth = 0;
    for raw in top {
        let id = emit(&mut nodes, raw, NodeId(0), 1, line_tokens, &mut depth);
        nodes[0].children.push(id);
    }
    SyntaxTree {
        nodes,
        source,
        grammar,
        depth,
    }
}

fn emit(
    nodes: &mut Vec<SyntaxNode>,
    raw: RawNode,
    parent: NodeId,
    level: u32,
    line_tokens: Option<&LineTokens>,
    depth: &mut u32,
) -> NodeId {
    *depth = (*depth).max(level);
    let id = NodeId(nodes.len() as u32);
    let deletable = match (raw.tokens, line_tokens) {
        (Some((a, b)), Some(lt)) => {
            let (sl, el) = (raw.core.0 as usize, raw.core.1 as usize);
            lt.first.get(sl).copied().flatten() == Some(a) && lt.last.get(el).copied().flatten() == Some(b)
        }
        _ => true,
    };
    nodes.push(SyntaxNode {
        id,
        kind: raw.kind,
        level,
        span: Span::new(raw.start, raw.end),
        children: Vec::new(),
        parent: Some(parent),
        tokens: raw.tokens,
        deletable,
    });
    for child in raw.children {
        let cid = emit(nodes, child, id, level + 1, line_tokens, depth);
        nodes[id.0 as usize].children.push(cid);
    }
    id
}

/// Sort siblings and merge those sharing a line into one cluster node.
pub(crate) fn normalize(mut nodes: Vec<RawNode>) -> Vec<RawNode> {
    nodes.sort_by_key(|n| (n.start, n.tokens.map_or(0, |t| t.0)));
    let mut out: Vec<(RawNode, bool)> = Vec::new();
    for node in nodes {
        match out.last_mut() {
            Some((cur, merged)) if node.start <= cur.end => {
                cur.kind = match (cur.kind, node.kind) {
                    (NodeKind::Expression, _) | (_, NodeKind::Expression) => NodeKind::Expression,
                    (a, b) if a == b => a,
                    _ => NodeKind::Other,
                };
                cur.tokens = match (cur.tokens, node.tokens) {
                    (Some(a), Some(b)) => Some((a.0.min(b.0), a.1.max(b.1))),
                    _ => None,
                };
                cur.end = cur.end.max(node.end);
                cur.core = (cur.core.0.min(node.core.0), cur.core.1.max(node.core.1));
                cur.children.extend(node.children);
                *merged = true;
            }
            _ => out.push((node, false)),
        }
    }
    out.into_iter()
        .map(|(mut n, _)| {
            n.children = normalize(std::mem::take(&mut n.children));
            n
        })
        .collect()
}

/// Extend spans over untouched lines: each node claims the blank/comment
/// lines directly above it; the last sibling also claims those below it, up
/// to the enclosing bounds (exclusive).
fn attach_trivia(nodes: &mut [RawNode], lo: u32, hi: u32, touch: &Touch<'_>) {
    let mut prev_end = lo;
    let count = nodes.len();
    for (i, node) in nodes.iter_mut().enumerate() {
        let (tok_start, tok_end) = (node.start, node.end);
        while node.start > prev_end + 1 && !touch.touched(node.start - 1) {
            node.start -= 1;
        }
        if i + 1 == count {
            while node.end + 1 < hi && !touch.touched(node.end + 1) {
                node.end += 1;
            }
        }
        attach_trivia(&mut node.children, tok_start, tok_end, touch);
        prev_end = node.end;
    }
}

struct Builder<'t> {
    tokens: &'t [Token],
}

impl Builder<'_> {
    fn raw(&self, kind: NodeKind, first: usize, last: usize, children: Vec<RawNode>) -> RawNode {
        let (start, end) = (self.tokens[first].line, self.tokens[last].end_line);
        RawNode {
            kind,
            tokens: Some((first, last)),
            start,
            end,
            core: (start, end),
            children,
        }
    }

    fn stmt(&self, s: &Stmt) -> RawNode {
        self.raw(classify(s), s.first_tok, s.last_tok, self.stmt_children(s))
    }

    fn body(&self, s: &Stmt, out: &mut Vec<RawNode>) {
        match &s.kind {
            StmtKind::Block(b) => out.extend(b.iter().map(|s| self.stmt(s))),
            _ => out.push(self.stmt(s)),
        }
    }

    fn stmt_children(&self, s: &Stmt) -> Vec<RawNode> {
        let mut out = Vec::new();
        match &s.kind {
            StmtKind::Function(f) => self.function(f, &mut out),
            StmtKind::If { test, cons, alt } => {
                self.expr(test, &mut out);
                self.body(cons, &mut out);
                if let Some(alt) = alt {
                    self.body(alt, &mut out);
                }
            }
            StmtKind::While { test, body } | StmtKind::DoWhile { body, test } => {
                self.expr(test, &mut out);
                self.body(body, &mut out);
            }
            StmtKind::For {
                test, update, body, ..
            } => {
                for e in test.iter().chain(update.iter()) {
                    self.expr(e, &mut out);
                }
                self.body(body, &mut out);
            }
            StmtKind::ForInOf { right, body, .. } => {
                self.expr(right, &mut out);
                self.body(body, &mut out);
            }
            StmtKind::Block(b) => out.extend(b.iter().map(|s| self.stmt(s))),
            StmtKind::Try {
                block,
                handler,
                finalizer,
                ..
            } => {
                let all = block
                    .iter()
                    .chain(handler.iter().flatten())
                    .chain(finalizer.iter().flatten());
                out.extend(all.map(|s| self.stmt(s)));
            }
            StmtKind::Export(inner) => out = self.stmt_children(inner),
            _ => {
                for e in s.expressions() {
                    self.expr(e, &mut out);
                }
            }
        }
        out
    }

    fn function(&self, f: &Function, out: &mut Vec<RawNode>) {
        match &f.body {
            FnBody::Block(b) => out.extend(b.iter().map(|s| self.stmt(s))),
            FnBody::Expr(e) => self.expr(e, out),
        }
    }

    /// Statements inside function literals and object-literal properties
    /// become children of the enclosing statement.
    fn expr(&self, e: &Expr, out: &mut Vec<RawNode>) {
        match &e.kind {
            ExprKind::Function(f) => self.function(f, out),
            ExprKind::Object(props) => {
                for p in props {
                    let key_has_fn = matches!(&p.key, PropKey::Computed(k) if k.contains_function());
                    if key_has_fn || p.value.contains_function() {
                        if let PropKey::Computed(k) = &p.key {
                            self.expr(k, out);
                        }
                        self.expr(&p.value, out);
                    } else {
                        out.push(self.raw(NodeKind::Expression, p.first_tok, p.last_tok, vec![]));
                    }
                }
            }
            _ => {
                for c in e.children() {
                    self.expr(c, out);
                }
            }
        }
    }
}

fn classify(s: &Stmt) -> NodeKind {
    match &s.kind {
        StmtKind::Import { .. } => NodeKind::Import,
        StmtKind::Function(_) => NodeKind::Declaration,
        StmtKind::Var { decls, .. } => {
            let all_require = !decls.is_empty()
                && decls
                    .iter()
                    .all(|d| d.init.as_ref().is_some_and(is_require_chain));
            if all_require {
                NodeKind::Import
            } else {
                NodeKind::Declaration
            }
        }
        StmtKind::Export(inner) => classify(inner),
        _ => NodeKind::Statement,
    }
}

/// `require('m')`, `require('m').x`, `require('m')(opts)` and similar.
pub fn is_require_chain(e: &Expr) -> bool {
    match &e.kind {
        ExprKind::Call { callee, .. } => {
            matches!(&callee.kind, ExprKind::Ident(n) if n == "require") || is_require_chain(callee)
        }
        ExprKind::Member { object, .. } | ExprKind::Index { object, .. } => is_require_chain(object),
        ExprKind::Await(inner) => is_require_chain(inner),
        _ => false,
    }
}
