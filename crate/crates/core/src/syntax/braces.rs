//! Grammar-agnostic chunker.
//!
//! A line that opens more braces than it closes starts a chunk that runs
//! until the brace depth returns to where it started; the lines in between
//! are chunked recursively as its children. Files without any `{` are
//! chunked by indentation instead. Whitespace-only lines are trivia.

use super::tree::{finish, NodeKind, RawNode, SyntaxTree, Touch};
use super::Grammar;
use crate::source::SourceText;

pub(crate) fn build(source: SourceText) -> SyntaxTree {
    let lines = source.lines();
    let mut touched = vec![false; lines.len() + 2];
    for (i, l) in lines.iter().enumerate() {
        touched[i + 1] = !l.trim().is_empty();
    }
    let top = if lines.iter().any(|l| l.contains('{')) {
        let deltas: Vec<(i64, i64)> = lines.iter().map(|l| brace_profile(l)).collect();
        by_braces(&deltas, &touched, 1, lines.len() as u32)
    } else {
        let indents: Vec<usize> = lines
            .iter()
            .map(|l| l.len() - l.trim_start().len())
            .collect();
        by_indent(&indents, &touched, 1, lines.len() as u32)
    };
    finish(source, Grammar::Braces, top, Touch::Lines(touched), None)
}

fn leaf(start: u32, end: u32, children: Vec<RawNode>) -> RawNode {
    RawNode {
        kind: NodeKind::Other,
        tokens: None,
        start,
        end,
        core: (start, end),
        children,
    }
}

/// Net depth change of a line and the lowest relative depth reached on it,
/// ignoring braces inside quotes and after `//`.
fn brace_profile(line: &str) -> (i64, i64) {
    let mut depth = 0i64;
    let mut low = 0i64;
    let mut quote: Option<char> = None;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match quote {
            Some(q) => {
                if c == '\\' {
                    chars.next();
                } else if c == q {
                    quote = None;
                }
            }
            None => match c {
                '"' | '\'' | '`' => quote = Some(c),
                '/' if chars.peek() == Some(&'/') => break,
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    low = low.min(depth);
                }
                _ => {}
            },
        }
    }
    (depth, low)
}

fn by_braces(deltas: &[(i64, i64)], touched: &[bool], lo: u32, hi: u32) -> Vec<RawNode> {
    let mut out = Vec::new();
    let mut line = lo;
    while line <= hi {
        if !touched[line as usize] {
            line += 1;
            continue;
        }
        let (delta, _) = deltas[line as usize - 1];
        if delta <= 0 {
            out.push(leaf(line, line, vec![]));
            line += 1;
            continue;
        }
        // find the line where the depth first returns to the start depth
        let mut depth = delta;
        let mut closer = None;
        for l in line + 1..=hi {
            let (d, low) = deltas[l as usize - 1];
            if depth + low <= 0 {
                closer = Some(l);
                break;
            }
            depth += d;
        }
        // an unclosed chunk swallows the rest of the region
        let (end, inner_hi) = match closer {
            Some(l) => (l, l - 1),
            None => (hi, hi),
        };
        let children = by_braces(deltas, touched, line + 1, inner_hi);
        out.push(leaf(line, end, children));
        line = end + 1;
    }
    out
}

fn by_indent(indents: &[usize], touched: &[bool], lo: u32, hi: u32) -> Vec<RawNode> {
    let mut out = Vec::new();
    let mut line = lo;
    while line <= hi {
        if !touched[line as usize] {
            line += 1;
            continue;
        }
        let indent = indents[line as usize - 1];
        let mut end = line;
        for l in line + 1..=hi {
            if !touched[l as usize] {
                continue;
            }
            if indents[l as usize - 1] <= indent {
                break;
            }
            end = l;
        }
        let children = by_indent(indents, touched, line + 1, end);
        out.push(leaf(line, end, children));
        line = end + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spans(src: &str) -> Vec<(u32, u32, u32)> {
        let t = build(SourceText::new(src));
        t.nodes()[1..]
            .iter()
            .map(|n| (n.level, n.span.start, n.span.end))
            .collect()
    }

    #[test]
    fn nested_blocks() {
        let src = "a {\n  b;\n  c {\n    d;\n  }\n}\ne;\n";
        assert_eq!(
            spans(src),
            vec![(1, 1, 6), (2, 2, 2), (2, 3, 5), (3, 4, 4), (1, 7, 7)]
        );
    }

    #[test]
    fn unbalanced_input_never_fails() {
        let t = build(SourceText::new("a {\n b {\n}\n}\n}\n{"));
        assert_eq!(t.root().span.end, 6);
    }

    #[test]
    fn indentation_fallback() {
        let src = "def f():\n    x = 1\n\n    y = 2\nz = 3\n";
        assert_eq!(spans(src), vec![(1, 1, 4), (2, 2, 2), (2, 3, 4), (1, 5, 5)]);
    }
}
