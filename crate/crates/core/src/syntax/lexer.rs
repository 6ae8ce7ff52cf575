//! Tokenizer for the mini-js grammar.

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum TokKind {
    Ident(String),
    Num(String),
    Str(String),
    Template(TemplateLit),
    Regex(String),
    Punct(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateLit {
    pub quasis: Vec<String>,
    /// Source of each `${...}` hole with the line it starts on.
    pub holes: Vec<(String, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokKind,
    pub line: u32,
    pub end_line: u32,
    /// A line break separates this token from the previous one.
    pub nl_before: bool,
}

impl Token {
    pub fn is_punct(&self, p: &str) -> bool {
        matches!(&self.kind, TokKind::Punct(q) if *q == p)
    }

    pub fn is_ident(&self, name: &str) -> bool {
        matches!(&self.kind, TokKind::Ident(n) if n == name)
    }
}

const PUNCTS: &[&str] = &[
    ">>>=", "...", "===", "!==", "**=", "<<=", ">>=", ">>>", "&&=", "||=", "??=", "=>", "==",
    "!=", "<=", ">=", "&&", "||", "??", "?.", "++", "--", "+=", "-=", "*=", "/=", "%=", "&=",
    "|=", "^=", "**", "<<", ">>", "{", "}", "(", ")", "[", "]", ";", ",", "<", ">", "+", "-",
    "*", "/", "%", "&", "|", "^", "!", "~", "?", ":", "=", ".", "@", "#",
];

/// Keywords after which a `/` starts a regular expression.
const REGEX_PRECEDERS: &[&str] = &[
    "return", "typeof", "instanceof", "in", "of", "new", "delete", "void", "throw", "case", "do",
    "else", "await", "yield",
];

pub fn is_reserved(word: &str) -> bool {
    matches!(
        word,
        "break"
            | "case"
            | "catch"
            | "const"
            | "continue"
            | "default"
            | "delete"
            | "do"
            | "else"
            | "export"
            | "finally"
            | "for"
            | "function"
            | "if"
            | "import"
            | "in"
            | "instanceof"
            | "let"
            | "new"
            | "return"
            | "switch"
            | "throw"
            | "try"
            | "typeof"
            | "var"
            | "void"
            | "while"
            | "class"
            | "extends"
            | "super"
    )
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: u32,
    tokens: Vec<Token>,
    saw_newline: bool,
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    tokenize_from(src, 1)
}

/// Tokenize with line numbering starting at `first_line`.
pub fn tokenize_from(src: &str, first_line: u32) -> Result<Vec<Token>, ParseError> {
    let mut lx = Lexer {
        chars: src.chars().collect(),
        pos: 0,
        line: first_line,
        tokens: Vec::new(),
        saw_newline: false,
    };
    lx.run()?;
    Ok(lx.tokens)
}

impl Lexer {
    fn peek(&self, off: usize) -> Option<char> {
        self.chars.get(self.pos + off).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.pos).copied()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
        }
        Some(c)
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            line: self.line,
            message: message.into(),
        }
    }

    fn push(&mut self, kind: TokKind, line: u32) {
        let nl_before = self.saw_newline;
        self.saw_newline = false;
        self.tokens.push(Token {
            kind,
            line,
            end_line: self.line,
            nl_before,
        });
    }

    fn regex_allowed(&self) -> bool {
        match self.tokens.last() {
            None => true,
            Some(t) => match &t.kind {
                TokKind::Ident(name) => REGEX_PRECEDERS.contains(&name.as_str()),
                TokKind::Num(_) | TokKind::Str(_) | TokKind::Template(_) | TokKind::Regex(_) => {
                    false
                }
                TokKind::Punct(p) => !matches!(*p, ")" | "]" | "}" | "++" | "--"),
            },
        }
    }

    fn run(&mut self) -> Result<(), ParseError> {
        while let Some(c) = self.peek(0) {
            match c {
                '\n' => {
                    self.bump();
                    self.saw_newline = true;
                }
                c if c.is_whitespace() => {
                    self.bump();
                }
                '/' if self.peek(1) == Some('/') => {
                    while let Some(c) = self.peek(0) {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                '/' if self.peek(1) == Some('*') => {
                    let start = self.line;
                    self.bump();
                    self.bump();
                    loop {
                        match self.bump() {
                            None => {
                                return Err(ParseError {
                                    line: start,
                                    message: "unterminated block comment".into(),
                                })
                            }
                            Some('\n') => self.saw_newline = true,
                            Some('*') if self.peek(0) == Some('/') => {
                                self.bump();
                                break;
                            }
                            _ => {}
                        }
                    }
                }
                '/' if self.regex_allowed() => self.regex()?,
                '"' | '\'' => self.string(c)?,
                '`' => self.template()?,
                c if c.is_ascii_digit() || (c == '.' && self.peek(1).is_some_and(|d| d.is_ascii_digit())) => {
                    self.number()
                }
                c if c == '_' || c == '$' || c.is_alphabetic() => self.ident(),
                _ => self.punct()?,
            }
        }
        Ok(())
    }

    fn ident(&mut self) {
        let line = self.line;
        let mut s = String::new();
        while let Some(c) = self.peek(0) {
            if c == '_' || c == '$' || c.is_alphanumeric() {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        self.push(TokKind::Ident(s), line);
    }

    fn number(&mut self) {
        let line = self.line;
        let mut s = String::new();
        while let Some(c) = self.peek(0) {
            let exp_sign = (c == '+' || c == '-') && s.ends_with(['e', 'E']) && !s.starts_with("0x");
            if c.is_ascii_alphanumeric() || c == '.' || c == '_' || exp_sign {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        self.push(TokKind::Num(s), line);
    }

    fn string(&mut self, quote: char) -> Result<(), ParseError> {
        let line = self.line;
        self.bump();
        let mut s = String::new();
        loop {
            match self.bump() {
                None => {
                    return Err(ParseError {
                        line,
                        message: "unterminated string literal".into(),
                    })
                }
                Some('\n') => {
                    return Err(ParseError {
                        line,
                        message: "unterminated string literal".into(),
                    })
                }
                Some('\\') => match self.bump() {
                    // line continuation
                    Some('\n') => {}
                    Some('n') => s.push('\n'),
                    Some('t') => s.push('\t'),
                    Some(c) => s.push(c),
                    None => return Err(self.err("unterminated string literal")),
                },
                Some(c) if c == quote => break,
                Some(c) => s.push(c),
            }
        }
        self.push(TokKind::Str(s), line);
        Ok(())
    }

    fn template(&mut self) -> Result<(), ParseError> {
        let line = self.line;
        self.bump();
        let mut quasis = Vec::new();
        let mut holes = Vec::new();
        let mut cur = String::new();
        loop {
            match self.bump() {
                None => {
                    return Err(ParseError {
                        line,
                        message: "unterminated template literal".into(),
                    })
                }
                Some('`') => break,
                Some('\\') => {
                    if let Some(c) = self.bump() {
                        cur.push(c);
                    }
                }
                Some('$') if self.peek(0) == Some('{') => {
                    self.bump();
                    quasis.push(std::mem::take(&mut cur));
                    let hole_line = self.line;
                    let mut depth = 1usize;
                    let mut hole = String::new();
                    loop {
                        match self.bump() {
                            None => {
                                return Err(ParseError {
                                    line,
                                    message: "unterminated template hole".into(),
                                })
                            }
                            Some('{') => {
                                depth += 1;
                                hole.push('{');
                            }
                            Some('}') => {
                                depth -= 1;
                                if depth == 0 {
                                    break;
                                }
                                hole.push('}');
                            }
                            Some(c) => hole.push(c),
                        }
                    }
                    holes.push((hole, hole_line));
                }
                Some(c) => cur.push(c),
            }
        }
        quasis.push(cur);
        self.push(TokKind::Template(TemplateLit { quasis, holes }), line);
        Ok(())
    }

    fn regex(&mut self) -> Result<(), ParseError> {
        let line = self.line;
        self.bump();
        let mut s = String::new();
        let mut in_class = false;
        loop {
            match self.bump() {
                None | Some('\n') => {
                    return Err(ParseError {
                        line,
                        message: "unterminated regular expression".into(),
                    })
                }
                Some('\\') => {
                    s.push('\\');
                    match self.bump() {
                        Some('\n') | None => {
                            return Err(ParseError {
                                line,
                                message: "unterminated regular expression".into(),
                            })
                        }
                        Some(c) => s.push(c),
                    }
                }
                Some('[') => {
                    in_class = true;
                    s.push('[');
                }
                Some(']') => {
                    in_class = false;
                    s.push(']');
                }
                Some('/') if !in_class => break,
                Some(c) => s.push(c),
            }
        }
        while let Some(c) = self.peek(0) {
            if c.is_ascii_alphabetic() {
                self.bump();
            } else {
                break;
            }
        }
        self.push(TokKind::Regex(s), line);
        Ok(())
    }

    fn punct(&mut self) -> Result<(), ParseError> {
        let line = self.line;
        for p in PUNCTS {
            let matches = p
                .chars()
                .enumerate()
                .all(|(i, c)| self.peek(i) == Some(c));
            if matches {
                for _ in 0..p.chars().count() {
                    self.bump();
                }
                self.push(TokKind::Punct(p), line);
                return Ok(());
            }
        }
        let c = self.peek(0).unwrap_or(' ');
        Err(self.err(format!("unexpected character {c:?}")))
    }
}
