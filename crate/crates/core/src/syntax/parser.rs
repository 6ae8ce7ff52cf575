//! Recursive-descent parser for the mini-js grammar.
//!
//! Semicolons are optional: a statement may also end at a line break, a `}`
//! or end of input. Unlike full JavaScript, a `(` or `[` at the start of a
//! line never continues the previous expression. A small amount of
//! TypeScript surface syntax (parameter and declarator annotations,
//! `import x = require(...)`, `type` import modifiers) is accepted and
//! ignored.

use super::ast::*;
use super::lexer::{is_reserved, tokenize, tokenize_from, TokKind, Token};
use super::ParseError;

pub fn parse_program(src: &str) -> Result<(Program, Vec<Token>), ParseError> {
    let tokens = tokenize(src)?;
    let mut p = Parser {
        toks: &tokens,
        pos: 0,
        next_fn_id: 0,
    };
    let mut body = Vec::new();
    while !p.at_end() {
        body.push(p.statement()?);
    }
    let program = Program {
        body,
        function_count: p.next_fn_id,
    };
    Ok((program, tokens))
}

struct Parser<'t> {
    toks: &'t [Token],
    pos: usize,
    next_fn_id: usize,
}

const ASSIGN_OPS: &[&str] = &[
    "=", "+=", "-=", "*=", "/=", "%=", "**=", "<<=", ">>=", ">>>=", "&=", "|=", "^=", "&&=",
    "||=", "??=",
];

fn binary_prec(tok: &Token) -> Option<(u8, &'static str)> {
    let op: &'static str = match &tok.kind {
        TokKind::Punct(p) => p,
        TokKind::Ident(n) if n == "instanceof" => "instanceof",
        TokKind::Ident(n) if n == "in" => "in",
        _ => return None,
    };
    let prec = match op {
        "??" => 1,
        "||" => 2,
        "&&" => 3,
        "|" => 4,
        "^" => 5,
        "&" => 6,
        "==" | "!=" | "===" | "!==" => 7,
        "<" | ">" | "<=" | ">=" | "instanceof" | "in" => 8,
        "<<" | ">>" | ">>>" => 9,
        "+" | "-" => 10,
        "*" | "/" | "%" => 11,
        "**" => 12,
        _ => return None,
    };
    Some((prec, op))
}

impl<'t> Parser<'t> {
    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn peek(&self) -> Option<&'t Token> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, off: usize) -> Option<&'t Token> {
        self.toks.get(self.pos + off)
    }

    fn line(&self) -> u32 {
        self.peek()
            .or_else(|| self.toks.last())
            .map_or(1, |t| t.line)
    }

    fn prev_end_line(&self) -> u32 {
        self.pos
            .checked_sub(1)
            .and_then(|i| self.toks.get(i))
            .map_or(1, |t| t.end_line)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            line: self.line(),
            message: message.into(),
        })
    }

    fn is_punct(&self, p: &str) -> bool {
        self.peek().is_some_and(|t| t.is_punct(p))
    }

    fn is_ident(&self, name: &str) -> bool {
        self.peek().is_some_and(|t| t.is_ident(name))
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_ident(&mut self, name: &str) -> bool {
        if self.is_ident(name) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), ParseError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            match self.peek() {
                Some(t) => self.err(format!("expected `{p}`, found {}", describe(t))),
                None => self.err(format!("expected `{p}`, found end of input")),
            }
        }
    }

    fn binding_name(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Token {
                kind: TokKind::Ident(n),
                ..
            }) if !is_reserved(n) => {
                self.pos += 1;
                Ok(n.clone())
            }
            Some(t) => self.err(format!("expected identifier, found {}", describe(t))),
            None => self.err("expected identifier, found end of input"),
        }
    }

    /// Any identifier including reserved words (property names).
    fn property_name(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Token {
                kind: TokKind::Ident(n),
                ..
            }) => {
                self.pos += 1;
                Ok(n.clone())
            }
            Some(t) => self.err(format!("expected property name, found {}", describe(t))),
            None => self.err("expected property name, found end of input"),
        }
    }

    /// Automatic semicolon insertion.
    fn end_statement(&mut self) -> Result<(), ParseError> {
        if self.eat_punct(";") {
            return Ok(());
        }
        match self.peek() {
            None => Ok(()),
            Some(t) if t.is_punct("}") || t.nl_before => Ok(()),
            Some(t) => self.err(format!("expected `;`, found {}", describe(t))),
        }
    }

    fn finish(&self, kind: StmtKind, first_tok: usize, line: u32) -> Stmt {
        Stmt {
            kind,
            first_tok,
            last_tok: self.pos - 1,
            line,
            end_line: self.prev_end_line(),
        }
    }

    fn statement(&mut self) -> Result<Stmt, ParseError> {
        let start = self.pos;
        let line = self.line();
        let Some(tok) = self.peek() else {
            return self.err("expected statement, found end of input");
        };
        let kind = match &tok.kind {
            TokKind::Punct("{") => {
                self.pos += 1;
                StmtKind::Block(self.block_body()?)
            }
            TokKind::Punct(";") => {
                self.pos += 1;
                StmtKind::Empty
            }
            TokKind::Ident(word) => match word.as_str() {
                "import" if !self.peek_at(1).is_some_and(|t| t.is_punct("(") || t.is_punct(".")) => {
                    self.import()?
                }
                "export" => self.export()?,
                "var" | "const" => self.var_statement()?,
                "let" if self.peek_at(1).is_some_and(|t| {
                    matches!(&t.kind, TokKind::Ident(_)) || t.is_punct("{") || t.is_punct("[")
                }) =>
                {
                    self.var_statement()?
                }
                "function" => {
                    self.pos += 1;
                    StmtKind::Function(Box::new(self.function_rest(line, true)?))
                }
                "async" if self.peek_at(1).is_some_and(|t| t.is_ident("function") && !t.nl_before) => {
                    self.pos += 2;
                    StmtKind::Function(Box::new(self.function_rest(line, true)?))
                }
                "if" => {
                    self.pos += 1;
                    self.expect_punct("(")?;
                    let test = self.expression()?;
                    self.expect_punct(")")?;
                    let cons = Box::new(self.statement()?);
                    let alt = if self.eat_ident("else") {
                        Some(Box::new(self.statement()?))
                    } else {
                        None
                    };
                    StmtKind::If { test, cons, alt }
                }
                "while" => {
                    self.pos += 1;
                    self.expect_punct("(")?;
                    let test = self.expression()?;
                    self.expect_punct(")")?;
                    let body = Box::new(self.statement()?);
                    StmtKind::While { test, body }
                }
                "do" => {
                    self.pos += 1;
                    let body = Box::new(self.statement()?);
                    if !self.eat_ident("while") {
                        return self.err("expected `while` after do body");
                    }
                    self.expect_punct("(")?;
                    let test = self.expression()?;
                    self.expect_punct(")")?;
                    self.eat_punct(";");
                    StmtKind::DoWhile { body, test }
                }
                "for" => self.for_statement()?,
                "return" => {
                    self.pos += 1;
                    let arg = match self.peek() {
                        None => None,
                        Some(t) if t.nl_before || t.is_punct(";") || t.is_punct("}") => None,
                        Some(_) => Some(self.expression()?),
                    };
                    self.end_statement()?;
                    StmtKind::Return(arg)
                }
                "throw" => {
                    self.pos += 1;
                    let arg = self.expression()?;
                    self.end_statement()?;
                    StmtKind::Throw(arg)
                }
                "try" => self.try_statement()?,
                "break" | "continue" => {
                    let is_break = word == "break";
                    self.pos += 1;
                    if let Some(t) = self.peek() {
                        if !t.nl_before && matches!(&t.kind, TokKind::Ident(n) if !is_reserved(n)) {
                            self.pos += 1;
                        }
                    }
                    self.end_statement()?;
                    if is_break {
                        StmtKind::Break
                    } else {
                        StmtKind::Continue
                    }
                }
                "class" | "switch" | "with" => {
                    return self.err(format!("`{word}` is not supported by mini-js"));
                }
                "else" | "catch" | "finally" | "case" | "default" => {
                    return self.err(format!("unexpected `{word}`"));
                }
                _ => self.expression_statement()?,
            },
            _ => self.expression_statement()?,
        };
        Ok(self.finish(kind, start, line))
    }

    fn expression_statement(&mut self) -> Result<StmtKind, ParseError> {
        let e = self.expression()?;
        self.end_statement()?;
        Ok(StmtKind::Expr(e))
    }

    /// Statements up to and including the closing `}`; the `{` is consumed.
    fn block_body(&mut self) -> Result<Vec<Stmt>, ParseError> {
        let mut body = Vec::new();
        loop {
            match self.peek() {
                None => return self.err("unterminated block, expected `}`"),
                Some(t) if t.is_punct("}") => {
                    self.pos += 1;
                    return Ok(body);
                }
                Some(_) => body.push(self.statement()?),
            }
        }
    }

    fn braced_block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect_punct("{")?;
        self.block_body()
    }

    fn import(&mut self) -> Result<StmtKind, ParseError> {
        self.pos += 1;
        if let Some(Token {
            kind: TokKind::Str(s),
            ..
        }) = self.peek()
        {
            self.pos += 1;
            self.end_statement()?;
            return Ok(StmtKind::Import {
                bindings: vec![],
                source: s.clone(),
            });
        }
        // `import type X from` / `import type {X} from`
        if self.is_ident("type")
            && self
                .peek_at(1)
                .is_some_and(|t| t.is_punct("{") || matches!(&t.kind, TokKind::Ident(n) if n != "from" && n != "="))
        {
            self.pos += 1;
        }
        let mut bindings = Vec::new();
        if self.is_punct("*") {
            self.pos += 1;
            if !self.eat_ident("as") {
                return self.err("expected `as` in namespace import");
            }
            bindings.push(ImportBinding {
                local: self.binding_name()?,
                imported: None,
            });
        } else if !self.is_punct("{") {
            let local = self.binding_name()?;
            if self.eat_punct("=") {
                // TypeScript `import x = require('m')`
                if !self.eat_ident("require") {
                    return self.err("expected `require` in import assignment");
                }
                self.expect_punct("(")?;
                let source = self.string_literal()?;
                self.expect_punct(")")?;
                self.end_statement()?;
                return Ok(StmtKind::Import {
                    bindings: vec![ImportBinding {
                        local,
                        imported: None,
                    }],
                    source,
                });
            }
            bindings.push(ImportBinding {
                local,
                imported: None,
            });
            if self.eat_punct(",") {
                if self.is_punct("*") {
                    self.pos += 1;
                    if !self.eat_ident("as") {
                        return self.err("expected `as` in namespace import");
                    }
                    bindings.push(ImportBinding {
                        local: self.binding_name()?,
                        imported: None,
                    });
                } else {
                    self.named_imports(&mut bindings)?;
                }
            }
        } else {
            self.named_imports(&mut bindings)?;
        }
        if !self.eat_ident("from") {
            return self.err("expected `from` in import");
        }
        let source = self.string_literal()?;
        self.end_statement()?;
        Ok(StmtKind::Import { bindings, source })
    }

    fn named_imports(&mut self, out: &mut Vec<ImportBinding>) -> Result<(), ParseError> {
        self.expect_punct("{")?;
        while !self.eat_punct("}") {
            if self.is_ident("type")
                && self
                    .peek_at(1)
                    .is_some_and(|t| matches!(&t.kind, TokKind::Ident(n) if n != "as"))
            {
                self.pos += 1;
            }
            let imported = self.property_name()?;
            let local = if self.eat_ident("as") {
                self.binding_name()?
            } else {
                imported.clone()
            };
            out.push(ImportBinding {
                local,
                imported: Some(imported),
            });
            if !self.eat_punct(",") {
                self.expect_punct("}")?;
                break;
            }
        }
        Ok(())
    }

    fn string_literal(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Token {
                kind: TokKind::Str(s),
                ..
            }) => {
                self.pos += 1;
                Ok(s.clone())
            }
            _ => self.err("expected string literal"),
        }
    }

    fn export(&mut self) -> Result<StmtKind, ParseError> {
        self.pos += 1;
        if self.eat_ident("default") {
            if self.is_ident("function")
                || (self.is_ident("async") && self.peek_at(1).is_some_and(|t| t.is_ident("function")))
            {
                let inner = self.statement_as_function_decl()?;
                return Ok(StmtKind::Export(Box::new(inner)));
            }
            let e = self.assignment()?;
            self.end_statement()?;
            return Ok(StmtKind::ExportDefault(e));
        }
        if self.is_punct("{") || self.is_punct("*") {
            let start = self.pos;
            let line = self.line();
            if self.eat_punct("*") {
                if self.eat_ident("as") {
                    self.property_name()?;
                }
            } else {
                self.pos += 1;
                while !self.eat_punct("}") {
                    self.property_name()?;
                    if self.eat_ident("as") {
                        self.property_name()?;
                    }
                    if !self.eat_punct(",") {
                        self.expect_punct("}")?;
                        break;
                    }
                }
            }
            if self.eat_ident("from") {
                self.string_literal()?;
            }
            self.end_statement()?;
            let inner = self.finish(StmtKind::Empty, start, line);
            return Ok(StmtKind::Export(Box::new(inner)));
        }
        let inner = self.statement()?;
        match inner.kind {
            StmtKind::Var { .. } | StmtKind::Function(_) => Ok(StmtKind::Export(Box::new(inner))),
            _ => self.err("expected declaration after `export`"),
        }
    }

    fn statement_as_function_decl(&mut self) -> Result<Stmt, ParseError> {
        let start = self.pos;
        let line = self.line();
        self.eat_ident("async");
        self.pos += 1; // function
        let f = self.function_rest(line, false)?;
        Ok(self.finish(StmtKind::Function(Box::new(f)), start, line))
    }

    fn var_kind(&mut self) -> Option<VarKind> {
        let kind = match self.peek()?.kind {
            TokKind::Ident(ref n) if n == "var" => VarKind::Var,
            TokKind::Ident(ref n) if n == "let" => VarKind::Let,
            TokKind::Ident(ref n) if n == "const" => VarKind::Const,
            _ => return None,
        };
        self.pos += 1;
        Some(kind)
    }

    fn var_statement(&mut self) -> Result<StmtKind, ParseError> {
        let kind = self.var_kind().expect("caller checked keyword");
        let decls = self.declarators(true)?;
        self.end_statement()?;
        Ok(StmtKind::Var { kind, decls })
    }

    fn declarators(&mut self, allow_in: bool) -> Result<Vec<Declarator>, ParseError> {
        let mut decls = Vec::new();
        loop {
            let line = self.line();
            let target = self.pattern()?;
            self.skip_type_annotation();
            let init = if self.eat_punct("=") {
                Some(if allow_in {
                    self.assignment()?
                } else {
                    self.assignment_no_in()?
                })
            } else {
                None
            };
            decls.push(Declarator { target, init, line });
            if !self.eat_punct(",") {
                break;
            }
        }
        Ok(decls)
    }

    fn for_statement(&mut self) -> Result<StmtKind, ParseError> {
        self.pos += 1;
        self.eat_ident("await");
        self.expect_punct("(")?;
        let init_start = self.pos;
        let init_line = self.line();
        let mut init: Option<Box<Stmt>> = None;
        if let Some(decl) = self.var_kind() {
            let save = self.pos;
            let pat = self.pattern()?;
            if self.is_ident("of") || self.is_ident("in") {
                self.pos += 1;
                let right = self.expression()?;
                self.expect_punct(")")?;
                let body = Box::new(self.statement()?);
                return Ok(StmtKind::ForInOf {
                    decl: Some(decl),
                    left: pat,
                    right,
                    body,
                });
            }
            self.pos = save;
            let decls = self.declarators(false)?;
            init = Some(Box::new(self.finish(
                StmtKind::Var { kind: decl, decls },
                init_start,
                init_line,
            )));
        } else if !self.is_punct(";") {
            // `for (x of xs)` with a bare identifier
            if let (Some(Token { kind: TokKind::Ident(name), .. }), Some(next)) =
                (self.peek(), self.peek_at(1))
            {
                if (next.is_ident("of") || next.is_ident("in")) && !is_reserved(name) {
                    let left = Pattern::Ident(name.clone(), init_line);
                    self.pos += 2;
                    let right = self.expression()?;
                    self.expect_punct(")")?;
                    let body = Box::new(self.statement()?);
                    return Ok(StmtKind::ForInOf {
                        decl: None,
                        left,
                        right,
                        body,
                    });
                }
            }
            let e = self.expression_no_in()?;
            init = Some(Box::new(self.finish(StmtKind::Expr(e), init_start, init_line)));
        }
        self.expect_punct(";")?;
        let test = if self.is_punct(";") {
            None
        } else {
            Some(self.expression()?)
        };
        self.expect_punct(";")?;
        let update = if self.is_punct(")") {
            None
        } else {
            Some(self.expression()?)
        };
        self.expect_punct(")")?;
        let body = Box::new(self.statement()?);
        Ok(StmtKind::For {
            init,
            test,
            update,
            body,
        })
    }

    fn try_statement(&mut self) -> Result<StmtKind, ParseError> {
        self.pos += 1;
        let block = self.braced_block()?;
        let mut param = None;
        let mut handler = None;
        let mut finalizer = None;
        if self.eat_ident("catch") {
            if self.eat_punct("(") {
                param = Some(self.pattern()?);
                self.skip_type_annotation();
                self.expect_punct(")")?;
            }
            handler = Some(self.braced_block()?);
        }
        if self.eat_ident("finally") {
            finalizer = Some(self.braced_block()?);
        }
        if handler.is_none() && finalizer.is_none() {
            return self.err("expected `catch` or `finally` after try block");
        }
        Ok(StmtKind::Try {
            block,
            param,
            handler,
            finalizer,
        })
    }

    // ---------------------------------------------------------------------
    // Functions and patterns
    // ---------------------------------------------------------------------

    /// After the `function` keyword.
    fn function_rest(&mut self, line: u32, require_name: bool) -> Result<Function, ParseError> {
        self.eat_punct("*");
        let name = if matches!(self.peek(), Some(Token { kind: TokKind::Ident(_), .. })) && !self.is_punct("(") {
            Some(self.binding_name()?)
        } else if require_name {
            return self.err("expected function name");
        } else {
            None
        };
        let params = self.params()?;
        self.skip_return_type();
        let body = FnBody::Block(self.braced_block()?);
        Ok(self.make_function(name, params, body, false, line))
    }

    fn make_function(
        &mut self,
        name: Option<String>,
        params: Vec<Pattern>,
        body: FnBody,
        is_arrow: bool,
        line: u32,
    ) -> Function {
        let id = self.next_fn_id;
        self.next_fn_id += 1;
        Function {
            id,
            name,
            params,
            body,
            is_arrow,
            line,
            end_line: self.prev_end_line(),
        }
    }

    fn params(&mut self) -> Result<Vec<Pattern>, ParseError> {
        self.expect_punct("(")?;
        let mut params = Vec::new();
        while !self.eat_punct(")") {
            let p = if self.eat_punct("...") {
                Pattern::Rest(Box::new(self.pattern()?))
            } else {
                self.pattern()?
            };
            self.eat_punct("?");
            self.skip_type_annotation();
            let p = if self.eat_punct("=") {
                Pattern::Default(Box::new(p), Box::new(self.assignment()?))
            } else {
                p
            };
            params.push(p);
            if !self.eat_punct(",") {
                self.expect_punct(")")?;
                break;
            }
        }
        Ok(params)
    }

    fn pattern(&mut self) -> Result<Pattern, ParseError> {
        let line = self.line();
        if self.eat_punct("{") {
            let mut props = Vec::new();
            while !self.eat_punct("}") {
                if self.eat_punct("...") {
                    let inner = self.pattern()?;
                    props.push((String::new(), Pattern::Rest(Box::new(inner))));
                } else {
                    let key = match self.peek() {
                        Some(Token {
                            kind: TokKind::Str(s),
                            ..
                        }) => {
                            self.pos += 1;
                            s.clone()
                        }
                        _ => self.property_name()?,
                    };
                    let key_line = self.prev_end_line();
                    let mut value = if self.eat_punct(":") {
                        self.pattern()?
                    } else {
                        if is_reserved(&key) {
                            return self.err(format!("`{key}` cannot be used as a binding"));
                        }
                        Pattern::Ident(key.clone(), key_line)
                    };
                    if self.eat_punct("=") {
                        value = Pattern::Default(Box::new(value), Box::new(self.assignment()?));
                    }
                    props.push((key, value));
                }
                if !self.eat_punct(",") {
                    self.expect_punct("}")?;
                    break;
                }
            }
            return Ok(Pattern::Object(props));
        }
        if self.eat_punct("[") {
            let mut items = Vec::new();
            while !self.eat_punct("]") {
                if self.eat_punct(",") {
                    items.push(None);
                    continue;
                }
                let mut item = if self.eat_punct("...") {
                    Pattern::Rest(Box::new(self.pattern()?))
                } else {
                    self.pattern()?
                };
                if self.eat_punct("=") {
                    item = Pattern::Default(Box::new(item), Box::new(self.assignment()?));
                }
                items.push(Some(item));
                if !self.eat_punct(",") {
                    self.expect_punct("]")?;
                    break;
                }
            }
            return Ok(Pattern::Array(items));
        }
        Ok(Pattern::Ident(self.binding_name()?, line))
    }

    /// Skip a `: Type` annotation if present.
    fn skip_type_annotation(&mut self) {
        if !self.is_punct(":") {
            return;
        }
        self.pos += 1;
        self.skip_type(&[",", ")", "=", ";"]);
    }

    fn skip_return_type(&mut self) {
        if self.is_punct(":") {
            self.pos += 1;
            self.skip_type(&["{", "=>"]);
        }
    }

    fn skip_type(&mut self, stops: &[&str]) {
        let mut depth = 0i32;
        let start_line = self.line();
        while let Some(t) = self.peek() {
            if depth == 0 {
                if stops.iter().any(|s| t.is_punct(s)) && !(t.is_punct("{") && self.prev_is_type_op()) {
                    return;
                }
                if t.nl_before && t.line != start_line && !self.prev_is_type_op() {
                    return;
                }
            }
            match &t.kind {
                TokKind::Punct("(" | "[" | "{" | "<") => depth += 1,
                TokKind::Punct(")" | "]" | "}" | ">") => {
                    if depth == 0 {
                        return;
                    }
                    depth -= 1;
                }
                TokKind::Punct(">>") => depth -= 2,
                _ => {}
            }
            self.pos += 1;
        }
    }

    fn prev_is_type_op(&self) -> bool {
        self.pos
            .checked_sub(1)
            .and_then(|i| self.toks.get(i))
            .is_some_and(|t| t.is_punct("|") || t.is_punct("&") || t.is_punct(":"))
    }

    // ---------------------------------------------------------------------
    // Expressions
    // ---------------------------------------------------------------------

    fn expression(&mut self) -> Result<Expr, ParseError> {
        self.sequence(true)
    }

    fn expression_no_in(&mut self) -> Result<Expr, ParseError> {
        self.sequence(false)
    }

    fn sequence(&mut self, allow_in: bool) -> Result<Expr, ParseError> {
        let line = self.line();
        let first = self.assignment_with(allow_in)?;
        if !self.is_punct(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_punct(",") {
            items.push(self.assignment_with(allow_in)?);
        }
        Ok(Expr {
            kind: ExprKind::Seq(items),
            line,
        })
    }

    fn assignment(&mut self) -> Result<Expr, ParseError> {
        self.assignment_with(true)
    }

    fn assignment_no_in(&mut self) -> Result<Expr, ParseError> {
        self.assignment_with(false)
    }

    fn assignment_with(&mut self, allow_in: bool) -> Result<Expr, ParseError> {
        if let Some(f) = self.try_arrow()? {
            return Ok(f);
        }
        let line = self.line();
        let left = self.conditional(allow_in)?;
        if let Some(TokKind::Punct(op)) = self.peek().map(|t| &t.kind) {
            if ASSIGN_OPS.contains(op) {
                let op: &'static str = op;
                if !is_assignable(&left) {
                    return self.err("invalid assignment target");
                }
                self.pos += 1;
                let value = self.assignment_with(allow_in)?;
                return Ok(Expr {
                    kind: ExprKind::Assign {
                        op,
                        target: Box::new(left),
                        value: Box::new(value),
                    },
                    line,
                });
            }
        }
        Ok(left)
    }

    /// Recognize an arrow function at the current position.
    fn try_arrow(&mut self) -> Result<Option<Expr>, ParseError> {
        let line = self.line();
        let save = self.pos;
        let is_async = self.is_ident("async")
            && self.peek_at(1).is_some_and(|t| {
                !t.nl_before && (t.is_punct("(") || matches!(&t.kind, TokKind::Ident(n) if !is_reserved(n)))
            });
        if is_async {
            self.pos += 1;
        }
        let params = match self.peek() {
            Some(Token {
                kind: TokKind::Ident(n),
                ..
            }) if !is_reserved(n) && self.peek_at(1).is_some_and(|t| t.is_punct("=>")) => {
                self.pos += 1;
                vec![Pattern::Ident(n.clone(), line)]
            }
            Some(t) if t.is_punct("(") => {
                let Some(close) = self.matching_close(self.pos) else {
                    self.pos = save;
                    return Ok(None);
                };
                let after = self.toks.get(close + 1);
                let is_arrow = after.is_some_and(|t| t.is_punct("=>"))
                    || (after.is_some_and(|t| t.is_punct(":")) && self.has_arrow_after_type(close + 1));
                if !is_arrow {
                    self.pos = save;
                    return Ok(None);
                }
                let params = self.params()?;
                self.skip_return_type();
                params
            }
            _ => {
                self.pos = save;
                return Ok(None);
            }
        };
        if !self.eat_punct("=>") {
            return self.err("expected `=>`");
        }
        let body = if self.is_punct("{") {
            FnBody::Block(self.braced_block()?)
        } else {
            FnBody::Expr(Box::new(self.assignment()?))
        };
        let f = self.make_function(None, params, body, true, line);
        Ok(Some(Expr {
            kind: ExprKind::Function(Box::new(f)),
            line,
        }))
    }

    fn has_arrow_after_type(&self, colon: usize) -> bool {
        let mut depth = 0i32;
        for t in &self.toks[colon + 1..] {
            match &t.kind {
                TokKind::Punct("(" | "[" | "{" | "<") => depth += 1,
                TokKind::Punct(")" | "]" | "}" | ">") => depth -= 1,
                TokKind::Punct("=>") if depth == 0 => return true,
                TokKind::Punct(";" | "," | "=") if depth == 0 => return false,
                _ => {}
            }
            if depth < 0 {
                return false;
            }
        }
        false
    }

    fn matching_close(&self, open: usize) -> Option<usize> {
        let mut depth = 0usize;
        for (i, t) in self.toks.iter().enumerate().skip(open) {
            match &t.kind {
                TokKind::Punct("(" | "[" | "{") => depth += 1,
                TokKind::Punct(")" | "]" | "}") => {
                    depth = depth.checked_sub(1)?;
                    if depth == 0 {
                        return Some(i);
                    }
                }
                _ => {}
            }
        }
        None
    }

    fn conditional(&mut self, allow_in: bool) -> Result<Expr, ParseError> {
        let line = self.line();
        let test = self.binary(0, allow_in)?;
        if !self.eat_punct("?") {
            return Ok(test);
        }
        let cons = self.assignment()?;
        self.expect_punct(":")?;
        let alt = self.assignment_with(allow_in)?;
        Ok(Expr {
            kind: ExprKind::Cond {
                test: Box::new(test),
                cons: Box::new(cons),
                alt: Box::new(alt),
            },
            line,
        })
    }

    fn binary(&mut self, min_prec: u8, allow_in: bool) -> Result<Expr, ParseError> {
        let line = self.line();
        let mut left = self.unary()?;
        while let Some((prec, op)) = self.peek().and_then(binary_prec) {
            if prec <= min_prec || (op == "in" && !allow_in) {
                break;
            }
            self.pos += 1;
            // `**` is right associative
            let next_min = if op == "**" { prec - 1 } else { prec };
            let right = self.binary(next_min, allow_in)?;
            left = Expr {
                kind: ExprKind::Binary {
                    op,
                    left: Box::new(left),
                    right: Box::new(right),
                },
                line,
            };
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        let line = self.line();
        let Some(tok) = self.peek() else {
            return self.err("expected expression, found end of input");
        };
        let op: Option<&'static str> = match &tok.kind {
            TokKind::Punct(p @ ("!" | "~" | "+" | "-")) => Some(p),
            TokKind::Ident(n) if n == "typeof" => Some("typeof"),
            TokKind::Ident(n) if n == "void" => Some("void"),
            TokKind::Ident(n) if n == "delete" => Some("delete"),
            _ => None,
        };
        if let Some(op) = op {
            self.pos += 1;
            let arg = self.unary()?;
            return Ok(Expr {
                kind: ExprKind::Unary {
                    op,
                    arg: Box::new(arg),
                },
                line,
            });
        }
        if let TokKind::Punct(op @ ("++" | "--")) = &tok.kind {
            let op: &'static str = op;
            self.pos += 1;
            let arg = self.unary()?;
            return Ok(Expr {
                kind: ExprKind::Update {
                    op,
                    arg: Box::new(arg),
                },
                line,
            });
        }
        if tok.is_ident("await")
            && self.peek_at(1).is_some_and(|t| !t.nl_before && !t.is_punct(")") && !t.is_punct(";"))
        {
            self.pos += 1;
            let arg = self.unary()?;
            return Ok(Expr {
                kind: ExprKind::Await(Box::new(arg)),
                line,
            });
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let line = self.line();
        let e = self.call_member()?;
        if let Some(t) = self.peek() {
            if !t.nl_before {
                if let TokKind::Punct(op @ ("++" | "--")) = &t.kind {
                    let op: &'static str = op;
                    self.pos += 1;
                    return Ok(Expr {
                        kind: ExprKind::Update {
                            op,
                            arg: Box::new(e),
                        },
                        line,
                    });
                }
                // TypeScript non-null assertion
                if t.is_punct("!") && self.peek_at(1).is_some_and(|n| n.is_punct(".")) {
                    self.pos += 1;
                    return self.member_tail(e);
                }
            }
        }
        Ok(e)
    }

    fn call_member(&mut self) -> Result<Expr, ParseError> {
        let e = if self.is_ident("new") {
            self.new_expression()?
        } else {
            self.primary()?
        };
        self.member_tail(e)
    }

    fn new_expression(&mut self) -> Result<Expr, ParseError> {
        let line = self.line();
        self.pos += 1;
        if self.eat_punct(".") {
            // new.target
            let property = self.property_name()?;
            return Ok(Expr {
                kind: ExprKind::Member {
                    object: Box::new(Expr {
                        kind: ExprKind::Ident("new".into()),
                        line,
                    }),
                    property,
                },
                line,
            });
        }
        let mut callee = if self.is_ident("new") {
            self.new_expression()?
        } else {
            self.primary()?
        };
        // member accesses bind tighter than `new`'s argument list
        loop {
            if self.eat_punct(".") {
                let property = self.property_name()?;
                callee = Expr {
                    kind: ExprKind::Member {
                        object: Box::new(callee),
                        property,
                    },
                    line,
                };
            } else if self.is_punct("[") && !self.peek().unwrap().nl_before {
                self.pos += 1;
                let index = self.expression()?;
                self.expect_punct("]")?;
                callee = Expr {
                    kind: ExprKind::Index {
                        object: Box::new(callee),
                        index: Box::new(index),
                    },
                    line,
                };
            } else {
                break;
            }
        }
        let args = if self.is_punct("(") {
            self.arguments()?
        } else {
            Vec::new()
        };
        Ok(Expr {
            kind: ExprKind::New {
                callee: Box::new(callee),
                args,
            },
            line,
        })
    }

    fn member_tail(&mut self, mut e: Expr) -> Result<Expr, ParseError> {
        while let Some(t) = self.peek() {
            let line = t.line;
            if t.is_punct(".") || t.is_punct("?.") {
                self.pos += 1;
                if self.is_punct("(") {
                    let args = self.arguments()?;
                    e = Expr {
                        kind: ExprKind::Call {
                            callee: Box::new(e),
                            args,
                        },
                        line,
                    };
                    continue;
                }
                if self.is_punct("[") {
                    self.pos += 1;
                    let index = self.expression()?;
                    self.expect_punct("]")?;
                    e = Expr {
                        kind: ExprKind::Index {
                            object: Box::new(e),
                            index: Box::new(index),
                        },
                        line,
                    };
                    continue;
                }
                let property = self.property_name()?;
                e = Expr {
                    kind: ExprKind::Member {
                        object: Box::new(e),
                        property,
                    },
                    line,
                };
            } else if t.is_punct("(") && !t.nl_before {
                let args = self.arguments()?;
                e = Expr {
                    kind: ExprKind::Call {
                        callee: Box::new(e),
                        args,
                    },
                    line,
                };
            } else if t.is_punct("[") && !t.nl_before {
                self.pos += 1;
                let index = self.expression()?;
                self.expect_punct("]")?;
                e = Expr {
                    kind: ExprKind::Index {
                        object: Box::new(e),
                        index: Box::new(index),
                    },
                    line,
                };
            } else if matches!(t.kind, TokKind::Template(_)) && !t.nl_before {
                // tagged template
                let arg = self.primary()?;
                e = Expr {
                    kind: ExprKind::Call {
                        callee: Box::new(e),
                        args: vec![arg],
                    },
                    line,
                };
            } else {
                break;
            }
        }
        Ok(e)
    }

    fn arguments(&mut self) -> Result<Vec<Expr>, ParseError> {
        self.expect_punct("(")?;
        let mut args = Vec::new();
        while !self.eat_punct(")") {
            let line = self.line();
            if self.eat_punct("...") {
                let inner = self.assignment()?;
                args.push(Expr {
                    kind: ExprKind::Spread(Box::new(inner)),
                    line,
                });
            } else {
                args.push(self.assignment()?);
            }
            if !self.eat_punct(",") {
                self.expect_punct(")")?;
                break;
            }
        }
        Ok(args)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let line = self.line();
        let Some(tok) = self.peek() else {
            return self.err("expected expression, found end of input");
        };
        let kind = match &tok.kind {
            TokKind::Num(n) => {
                self.pos += 1;
                ExprKind::Num(n.clone())
            }
            TokKind::Str(s) => {
                self.pos += 1;
                ExprKind::Str(s.clone())
            }
            TokKind::Regex(r) => {
                self.pos += 1;
                ExprKind::Regex(r.clone())
            }
            TokKind::Template(t) => {
                self.pos += 1;
                let mut holes = Vec::new();
                for (src, hole_line) in &t.holes {
                    holes.push(parse_hole(src, *hole_line)?);
                }
                ExprKind::Template(holes)
            }
            TokKind::Punct("(") => {
                self.pos += 1;
                let inner = self.expression()?;
                self.expect_punct(")")?;
                return Ok(inner);
            }
            TokKind::Punct("[") => {
                self.pos += 1;
                let mut items = Vec::new();
                while !self.eat_punct("]") {
                    if self.is_punct(",") {
                        self.pos += 1;
                        continue;
                    }
                    let item_line = self.line();
                    if self.eat_punct("...") {
                        let inner = self.assignment()?;
                        items.push(Expr {
                            kind: ExprKind::Spread(Box::new(inner)),
                            line: item_line,
                        });
                    } else {
                        items.push(self.assignment()?);
                    }
                    if !self.eat_punct(",") {
                        self.expect_punct("]")?;
                        break;
                    }
                }
                ExprKind::Array(items)
            }
            TokKind::Punct("{") => {
                self.pos += 1;
                ExprKind::Object(self.object_body()?)
            }
            TokKind::Ident(word) => match word.as_str() {
                "function" => {
                    self.pos += 1;
                    ExprKind::Function(Box::new(self.function_rest(line, false)?))
                }
                "async" if self.peek_at(1).is_some_and(|t| t.is_ident("function")) => {
                    self.pos += 2;
                    ExprKind::Function(Box::new(self.function_rest(line, false)?))
                }
                "true" => {
                    self.pos += 1;
                    ExprKind::Bool(true)
                }
                "false" => {
                    self.pos += 1;
                    ExprKind::Bool(false)
                }
                "null" => {
                    self.pos += 1;
                    ExprKind::Null
                }
                "this" => {
                    self.pos += 1;
                    ExprKind::This
                }
                "super" | "import" => {
                    self.pos += 1;
                    ExprKind::Ident(word.clone())
                }
                w if is_reserved(w) => {
                    return self.err(format!("unexpected keyword `{w}`"));
                }
                _ => {
                    self.pos += 1;
                    ExprKind::Ident(word.clone())
                }
            },
            TokKind::Punct(p) => return self.err(format!("unexpected `{p}`")),
        };
        Ok(Expr { kind, line })
    }

    /// Object literal members up to and including `}`.
    fn object_body(&mut self) -> Result<Vec<Prop>, ParseError> {
        let mut props = Vec::new();
        while !self.eat_punct("}") {
            let first_tok = self.pos;
            let line = self.line();
            let (key, value) = if self.eat_punct("...") {
                (PropKey::Spread, self.assignment()?)
            } else {
                // get/set/async modifiers on methods
                if (self.is_ident("get") || self.is_ident("set") || self.is_ident("async"))
                    && self.peek_at(1).is_some_and(|t| {
                        matches!(&t.kind, TokKind::Ident(_) | TokKind::Str(_) | TokKind::Num(_))
                            || t.is_punct("[")
                    })
                {
                    self.pos += 1;
                }
                self.eat_punct("*");
                let key = match self.peek() {
                    Some(Token {
                        kind: TokKind::Ident(n),
                        ..
                    }) => {
                        self.pos += 1;
                        PropKey::Named(n.clone())
                    }
                    Some(Token {
                        kind: TokKind::Str(s) | TokKind::Num(s),
                        ..
                    }) => {
                        self.pos += 1;
                        PropKey::Named(s.clone())
                    }
                    Some(t) if t.is_punct("[") => {
                        self.pos += 1;
                        let k = self.assignment()?;
                        self.expect_punct("]")?;
                        PropKey::Computed(Box::new(k))
                    }
                    _ => return self.err("expected property key"),
                };
                if self.eat_punct(":") {
                    (key, self.assignment()?)
                } else if self.is_punct("(") {
                    let params = self.params()?;
                    self.skip_return_type();
                    let body = FnBody::Block(self.braced_block()?);
                    let name = match &key {
                        PropKey::Named(n) => Some(n.clone()),
                        _ => None,
                    };
                    let f = self.make_function(name, params, body, false, line);
                    (
                        key,
                        Expr {
                            kind: ExprKind::Function(Box::new(f)),
                            line,
                        },
                    )
                } else {
                    let PropKey::Named(name) = &key else {
                        return self.err("expected `:` after computed key");
                    };
                    if is_reserved(name) {
                        return self.err(format!("unexpected keyword `{name}`"));
                    }
                    let value = if self.eat_punct("=") {
                        // shorthand with default (only valid in patterns)
                        self.assignment()?
                    } else {
                        Expr {
                            kind: ExprKind::Ident(name.clone()),
                            line,
                        }
                    };
                    (key, value)
                }
            };
            props.push(Prop {
                key,
                value,
                line,
                first_tok,
                last_tok: self.pos - 1,
            });
            if self.eat_punct(",") {
                // trailing comma belongs to the property
                if let Some(p) = props.last_mut() {
                    p.last_tok = self.pos - 1;
                }
                continue;
            }
            self.expect_punct("}")?;
            break;
        }
        Ok(props)
    }
}

fn parse_hole(src: &str, line: u32) -> Result<Expr, ParseError> {
    let tokens = tokenize_from(src, line)?;
    let mut p = Parser {
        toks: &tokens,
        pos: 0,
        next_fn_id: 0,
    };
    let e = p.expression()?;
    if !p.at_end() {
        return p.err("unexpected token in template expression");
    }
    if p.next_fn_id > 0 {
        return Err(ParseError {
            line,
            message: "functions inside template expressions are not supported".into(),
        });
    }
    Ok(e)
}

fn is_assignable(e: &Expr) -> bool {
    matches!(
        e.kind,
        ExprKind::Ident(_)
            | ExprKind::Member { .. }
            | ExprKind::Index { .. }
            | ExprKind::Object(_)
            | ExprKind::Array(_)
    )
}

fn describe(t: &Token) -> String {
    match &t.kind {
        TokKind::Ident(n) => format!("`{n}`"),
        TokKind::Num(n) => format!("number `{n}`"),
        TokKind::Str(_) => "string literal".into(),
        TokKind::Template(_) => "template literal".into(),
        TokKind::Regex(_) => "regular expression".into(),
        TokKind::Punct(p) => format!("`{p}`"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok(src: &str) -> Program {
        parse_program(src)
            .unwrap_or_else(|e| panic!("failed to parse: {e}\n{src}"))
            .0
    }

    #[test]
    fn asi_and_member_continuation() {
        let p = ok("const a = b\n  .then(x => x)\nfoo()\n");
        assert_eq!(p.body.len(), 2);
        assert_eq!((p.body[0].line, p.body[0].end_line), (1, 2));
    }

    #[test]
    fn rejects_unbalanced_function_header() {
        assert!(parse_program("function f( {").is_err());
        assert!(parse_program("if (x) {").is_err());
        assert!(parse_program("a b").is_err());
    }

    #[test]
    fn arrow_forms() {
        let p = ok("f((req, res) => { g() })\nh(x => x + 1)\nk(async () => await y)\n");
        assert_eq!(p.body.len(), 3);
        assert_eq!(p.function_count, 3);
    }

    #[test]
    fn typescript_surface_is_skipped() {
        ok("import fs = require('fs')\nimport { type Request, type Response } from 'express'\n\
            f((req: Request, res: Response, next: NextFunction) => {})\n\
            const x: string = 'a'\nfunction g(err: unknown): void {}\n");
    }

    #[test]
    fn return_is_restricted() {
        let p = ok("function f() {\n  return\n  g()\n}\n");
        match &p.body[0].kind {
            StmtKind::Function(f) => match &f.body {
                FnBody::Block(b) => {
                    assert_eq!(b.len(), 2);
                    assert!(matches!(b[0].kind, StmtKind::Return(None)));
                }
                _ => unreachable!(),
            },
            _ => unreachable!(),
        }
    }

    #[test]
    fn object_props_track_tokens() {
        let (p, toks) = parse_program("x = {\n  a: 1,\n  b: 2\n}").unwrap();
        let StmtKind::Expr(e) = &p.body[0].kind else { panic!() };
        let ExprKind::Assign { value, .. } = &e.kind else { panic!() };
        let ExprKind::Object(props) = &value.kind else { panic!() };
        assert_eq!(props.len(), 2);
        assert!(toks[props[0].last_tok].is_punct(","));
        assert_eq!(props[1].line, 3);
    }

    #[test]
    fn for_loops() {
        ok("for (let i = 0; i < n; i++) { f(i) }\nfor (const x of xs) g(x)\nfor (k in o) {}\n");
    }
}
