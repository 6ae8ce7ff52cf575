//! Parsing into line-spanned trees and line-level node deletion.

pub mod ast;
mod braces;
pub mod lexer;
mod mapping;
pub mod parser;
mod tree;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mapping::{LineMapping, MappingError};
pub use tree::{is_require_chain, NodeId, NodeKind, Span, SyntaxNode, SyntaxTree};

use crate::source::SourceText;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("parse error at line {line}: {message}")]
pub struct ParseError {
    pub line: u32,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Grammar {
    #[default]
    #[serde(rename = "mini-js")]
    MiniJs,
    #[serde(rename = "braces")]
    Braces,
}

impl Grammar {
    pub fn as_str(self) -> &'static str {
        match self {
            Grammar::MiniJs => "mini-js",
            Grammar::Braces => "braces",
        }
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Grammar {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mini-js" | "minijs" | "js" => Ok(Grammar::MiniJs),
            "braces" => Ok(Grammar::Braces),
            other => Err(format!("unknown grammar `{other}` (expected mini-js or braces)")),
        }
    }
}

pub fn parse(source: &SourceText, grammar: Grammar) -> Result<SyntaxTree, ParseError> {
    match grammar {
        Grammar::MiniJs => {
            let (program, tokens) = parser::parse_program(&source.text())?;
            Ok(tree::build_mini_js(source.clone(), &program, &tokens))
        }
        Grammar::Braces => Ok(braces::build(source.clone())),
    }
}

pub fn parses(candidate: &SourceText, grammar: Grammar) -> bool {
    match grammar {
        Grammar::MiniJs => parser::parse_program(&candidate.text()).is_ok(),
        Grammar::Braces => true,
    }
}

/// Parse mini-js source into its abstract syntax.
pub fn parse_ast(source: &SourceText) -> Result<ast::Program, ParseError> {
    parser::parse_program(&source.text()).map(|(p, _)| p)
}

/// Deletion candidates at `level`: statement-like nodes that own whole lines.
pub fn get_nodes(tree: &SyntaxTree, level: u32) -> Vec<&SyntaxNode> {
    tree.nodes_at(level)
}

/// Result of deleting nodes from a code snapshot.
#[derive(Debug, Clone)]
pub struct Removal {
    pub code: SourceText,
    pub mapping: LineMapping,
    /// `None` when the remaining code no longer parses.
    pub tree: Option<SyntaxTree>,
}

/// Delete every line spanned by `victims`.
///
/// `mapping` maps lines of `code` to the original file; the returned mapping
/// does the same for the new code.
pub fn remove_nodes_from_code(
    victims: &[NodeId],
    code: &SourceText,
    tree: &SyntaxTree,
    mapping: &LineMapping,
) -> Removal {
    let mut dead = BTreeSet::new();
    for id in victims {
        if let Some(node) = tree.node(*id) {
            dead.extend(node.span.lines());
        }
    }
    let kept: Vec<u32> = (1..=code.len() as u32).filter(|l| !dead.contains(l)).collect();
    let lines = kept.iter().map(|&l| code.lines()[l as usize - 1].clone());
    let new_code = SourceText::from_lines_like(lines, code);
    let new_mapping = mapping.restrict(&kept);
    let tree = parse(&new_code, tree.grammar()).ok();
    Removal {
        code: new_code,
        mapping: new_mapping,
        tree,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const FIG3: &str = "const express = require('express');
const fs = require('fs');
express().post('/path', (req, res) => {
    var options = {
        dotfiles: fs.ReadFileSync('cfg')
    };
    res.sendFile(req.params.name, options);
});
";

    fn tree(src: &str) -> SyntaxTree {
        parse(&SourceText::new(src), Grammar::MiniJs).unwrap()
    }

    fn spans(nodes: &[&SyntaxNode]) -> Vec<(u32, u32)> {
        nodes.iter().map(|n| (n.span.start, n.span.end)).collect()
    }

    #[test]
    fn figure3_levels() {
        let t = tree(FIG3);
        assert_eq!(t.root().span, Span::new(1, 8));
        let l1 = get_nodes(&t, 1);
        assert_eq!(spans(&l1), vec![(1, 1), (2, 2), (3, 8)]);
        assert_eq!(l1[0].kind, NodeKind::Import);
        assert_eq!(spans(&get_nodes(&t, 2)), vec![(4, 6), (7, 7)]);
        assert!(get_nodes(&t, 3).is_empty());
        assert!(get_nodes(&t, t.depth() + 1).is_empty());
        assert!(get_nodes(&t, 0).is_empty());
    }

    #[test]
    fn figure3_removal_mapping() {
        let src = SourceText::new(FIG3);
        let t = parse(&src, Grammar::MiniJs).unwrap();
        let victims: Vec<NodeId> = t
            .nodes()
            .iter()
            .filter(|n| n.span == Span::new(2, 2) || n.span == Span::new(4, 6))
            .map(|n| n.id)
            .collect();
        let r = remove_nodes_from_code(&victims, &src, &t, &LineMapping::identity(src.len()));
        assert_eq!(r.mapping.pairs(), &[(1, 1), (2, 3), (3, 7), (4, 8)]);
        assert!(r.tree.is_some());
        assert!(r.mapping.is_sound(&r.code, &src));
    }

    #[test]
    fn empty_source() {
        let t = tree("");
        assert_eq!(t.root().span, Span::new(0, 0));
        assert!(t.root().children.is_empty());
    }

    #[test]
    fn blank_lines_attach_to_following_statement() {
        let t = tree("function f() {\n  a();\n\n  b();\n}\n\n");
        let l2 = get_nodes(&t, 2);
        assert_eq!(spans(&l2), vec![(2, 2), (3, 4)]);
        // trailing blank line goes to the last top-level node
        assert_eq!(spans(&get_nodes(&t, 1)), vec![(1, 6)]);
    }

    #[test]
    fn shared_lines_are_atomic() {
        let t = tree("a(); b();\nif (x) c();\nif (y) {\n  d();\n} else {\n  e();\n}\n");
        let l1 = get_nodes(&t, 1);
        assert_eq!(spans(&l1), vec![(1, 1), (2, 2), (3, 7)]);
        // `c()` shares its line with the `if`
        let l2 = get_nodes(&t, 2);
        assert_eq!(spans(&l2), vec![(4, 4), (6, 6)]);
    }

    #[test]
    fn object_properties_are_never_candidates() {
        let t = tree("var o = {\n  a: 1,\n  b: 2\n};\n");
        let exprs = t
            .nodes()
            .iter()
            .filter(|n| n.kind == NodeKind::Expression)
            .count();
        assert_eq!(exprs, 2);
        assert!(get_nodes(&t, 2).is_empty());
    }

    #[test]
    fn empty_removal_is_identity() {
        let src = SourceText::new(FIG3);
        let t = parse(&src, Grammar::MiniJs).unwrap();
        let r = remove_nodes_from_code(&[], &src, &t, &LineMapping::identity(src.len()));
        assert_eq!(r.code.text(), FIG3);
        assert_eq!(r.mapping, LineMapping::identity(8));
    }

    #[test]
    fn grammar_ids() {
        assert_eq!("mini-js".parse::<Grammar>().unwrap(), Grammar::MiniJs);
        assert_eq!("braces".parse::<Grammar>().unwrap(), Grammar::Braces);
        assert!("cobol".parse::<Grammar>().is_err());
        assert!(!parses(&SourceText::new("function f( {"), Grammar::MiniJs));
        assert!(parses(&SourceText::new("function f( {"), Grammar::Braces));
    }
}
