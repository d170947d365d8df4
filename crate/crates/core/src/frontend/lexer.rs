//! Tokenizer for the C subset, with `#pragma` lines kept as single tokens.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Identifier,
    Keyword,
    Punctuator,
    Number,
    String,
    Char,
    /// Text of a `#pragma` line after the `pragma` word.
    Pragma,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexToken {
    pub kind: TokenKind,
    pub text: String,
    /// 1-based line of the first character.
    pub line: usize,
    /// 1-based column (in characters) of the first character.
    pub col: usize,
    /// Last physical line the token touches; differs from `line` only for
    /// pragmas continued with a backslash.
    pub end_line: usize,
}

impl LexToken {
    pub fn is_punct(&self, p: &str) -> bool {
        self.kind == TokenKind::Punctuator && self.text == p
    }

    pub fn is_keyword(&self, k: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text == k
    }
}

impl fmt::Display for LexToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} `{}` at {}:{}",
            self.kind, self.text, self.line, self.col
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("lex error at line {line}: {message}")]
pub struct LexError {
    pub line: usize,
    pub message: String,
}

pub const KEYWORDS: &[&str] = &[
    "auto",
    "break",
    "case",
    "char",
    "const",
    "continue",
    "default",
    "do",
    "double",
    "else",
    "enum",
    "extern",
    "float",
    "for",
    "goto",
    "if",
    "inline",
    "int",
    "long",
    "register",
    "restrict",
    "return",
    "short",
    "signed",
    "sizeof",
    "static",
    "struct",
    "switch",
    "typedef",
    "union",
    "unsigned",
    "void",
    "volatile",
    "while",
    "_Bool",
    "_Complex",
    "_Thread_local",
];

const PUNCTUATORS: &[&str] = &[
    "...", "<<=", ">>=", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "*=",
    "/=", "%=", "+=", "-=", "&=", "^=", "|=", "##",
];

struct Cursor<'a> {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    col: usize,
    _src: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Cursor {
            chars: src.chars().collect(),
            pos: 0,
            line: 1,
            col: 1,
            _src: src,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_at(&self, k: usize) -> Option<char> {
        self.chars.get(self.pos + k).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn starts_with(&self, s: &str) -> bool {
        s.chars()
            .enumerate()
            .all(|(k, c)| self.peek_at(k) == Some(c))
    }

    /// Only whitespace between the previous newline and the cursor.
    fn at_line_start(&self) -> bool {
        let mut k = self.pos;
        while k > 0 {
            match self.chars[k - 1] {
                '\n' => return true,
                ' ' | '\t' | '\r' | '\x0c' | '\x0b' => k -= 1,
                _ => return false,
            }
        }
        true
    }
}

/// Tokenize `source`. Comments, whitespace and non-pragma preprocessor
/// directives are dropped.
pub fn lex(source: &str) -> Result<Vec<LexToken>, LexError> {
    let mut cur = Cursor::new(source);
    let mut out = Vec::new();

    while let Some(c) = cur.peek() {
        if c.is_whitespace() {
            cur.bump();
            continue;
        }
        if cur.starts_with("//") {
            while let Some(c) = cur.peek() {
                if c == '\n' {
                    break;
                }
                cur.bump();
            }
            continue;
        }
        if cur.starts_with("/*") {
            skip_block_comment(&mut cur)?;
            continue;
        }
        if c == '#' && cur.at_line_start() {
            if let Some(tok) = directive(&mut cur)? {
                out.push(tok);
            }
            continue;
        }

        let (line, col) = (cur.line, cur.col);
        let tok = |kind, text| LexToken {
            kind,
            text,
            line,
            col,
            end_line: line,
        };

        if c.is_ascii_alphabetic() || c == '_' || c == '$' {
            // Wide/unicode string and char prefixes.
            if matches!(c, 'L' | 'u' | 'U') && matches!(cur.peek_at(1), Some('"' | '\'')) {
                cur.bump();
                let q = cur.peek().unwrap();
                let body = quoted(&mut cur, q)?;
                let kind = if q == '"' {
                    TokenKind::String
                } else {
                    TokenKind::Char
                };
                out.push(tok(kind, format!("{c}{body}")));
                continue;
            }
            let mut s = String::new();
            while let Some(c) = cur.peek() {
                if c.is_ascii_alphanumeric() || c == '_' || c == '$' {
                    s.push(c);
                    cur.bump();
                } else {
                    break;
                }
            }
            let kind = if KEYWORDS.contains(&s.as_str()) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            };
            out.push(tok(kind, s));
            continue;
        }

        if c.is_ascii_digit() || (c == '.' && cur.peek_at(1).is_some_and(|d| d.is_ascii_digit())) {
            let mut s = String::new();
            while let Some(c) = cur.peek() {
                let last = s.chars().last();
                let hex = s.starts_with("0x") || s.starts_with("0X");
                let exp_sign = matches!(c, '+' | '-')
                    && (matches!(last, Some('e' | 'E')) && !hex || matches!(last, Some('p' | 'P')));
                if c.is_ascii_alphanumeric() || c == '.' || c == '_' || exp_sign {
                    s.push(c);
                    cur.bump();
                } else {
                    break;
                }
            }
            out.push(tok(TokenKind::Number, s));
            continue;
        }

        if c == '"' || c == '\'' {
            let body = quoted(&mut cur, c)?;
            let kind = if c == '"' {
                TokenKind::String
            } else {
                TokenKind::Char
            };
            out.push(tok(kind, body));
            continue;
        }

        let p = PUNCTUATORS
            .iter()
            .find(|p| cur.starts_with(p))
            .map(|p| p.to_string())
            .unwrap_or_else(|| c.to_string());
        for _ in 0..p.chars().count() {
            cur.bump();
        }
        out.push(tok(TokenKind::Punctuator, p));
    }
    Ok(out)
}

fn skip_block_comment(cur: &mut Cursor<'_>) -> Result<(), LexError> {
    let line = cur.line;
    cur.bump();
    cur.bump();
    loop {
        if cur.starts_with("*/") {
            cur.bump();
            cur.bump();
            return Ok(());
        }
        if cur.bump().is_none() {
            return Err(LexError {
                line,
                message: "unterminated comment".into(),
            });
        }
    }
}

/// Consume a quoted literal starting at the opening quote `q`.
fn quoted(cur: &mut Cursor<'_>, q: char) -> Result<String, LexError> {
    let line = cur.line;
    let what = if q == '"' {
        "string"
    } else {
        "character constant"
    };
    let mut s = String::new();
    s.push(cur.bump().unwrap());
    loop {
        match cur.bump() {
            None | Some('\n') => {
                return Err(LexError {
                    line,
                    message: format!("unterminated {what}"),
                })
            }
            Some('\\') => {
                s.push('\\');
                match cur.bump() {
                    Some(e) => s.push(e),
                    None => {
                        return Err(LexError {
                            line,
                            message: format!("unterminated {what}"),
                        })
                    }
                }
            }
            Some(c) if c == q => {
                s.push(c);
                return Ok(s);
            }
            Some(c) => s.push(c),
        }
    }
}

/// Consume a preprocessor directive line; only `#pragma` yields a token.
fn directive(cur: &mut Cursor<'_>) -> Result<Option<LexToken>, LexError> {
    let (line, col) = (cur.line, cur.col);
    let mut text = String::new();
    cur.bump(); // '#'
    loop {
        match cur.peek() {
            None | Some('\n') => break,
            Some('\\') if matches!(cur.peek_at(1), Some('\n')) => {
                cur.bump();
                cur.bump();
                text.push(' ');
            }
            Some('\\') if cur.peek_at(1) == Some('\r') && cur.peek_at(2) == Some('\n') => {
                cur.bump();
                cur.bump();
                cur.bump();
                text.push(' ');
            }
            Some('/') if cur.peek_at(1) == Some('*') => {
                skip_block_comment(cur)?;
                text.push(' ');
            }
            Some('/') if cur.peek_at(1) == Some('/') => {
                while !matches!(cur.peek(), None | Some('\n')) {
                    cur.bump();
                }
            }
            Some(c) => {
                text.push(c);
                cur.bump();
            }
        }
    }
    let end_line = cur.line;
    let trimmed = text.trim_start();
    let Some(rest) = trimmed.strip_prefix("pragma") else {
        return Ok(None);
    };
    if rest
        .chars()
        .next()
        .is_some_and(|c| c.is_alphanumeric() || c == '_')
    {
        return Ok(None);
    }
    let body = rest.split_whitespace().collect::<Vec<_>>().join(" ");
    Ok(Some(LexToken {
        kind: TokenKind::Pragma,
        text: body,
        line,
        col,
        end_line,
    }))
}
