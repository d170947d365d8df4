//! Recursive-descent parser for a C subset with first-class OpenMP pragmas.
//!
//! Constructs the parser does not understand degrade to `Unknown` nodes
//! covering the offending declaration or statement. Only unbalanced
//! brackets are fatal.

use std::collections::HashSet;

use super::ast::{AstNode, NodeClass};
use super::lexer::{LexToken, TokenKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parse error at line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

type PResult<T> = Result<T, ParseError>;

/// Parse a token stream into a `FileAST` root.
pub fn parse(tokens: &[LexToken]) -> Result<AstNode, ParseError> {
    check_balance(tokens)?;
    let mut p = Parser {
        toks: tokens,
        pos: 0,
        typedefs: builtin_typedefs(),
    };
    Ok(p.translation_unit())
}

fn builtin_typedefs() -> HashSet<String> {
    [
        "size_t",
        "ssize_t",
        "ptrdiff_t",
        "pthread_t",
        "pthread_mutex_t",
        "pthread_attr_t",
        "pthread_cond_t",
        "pthread_mutexattr_t",
        "pthread_condattr_t",
        "pthread_barrier_t",
        "pthread_rwlock_t",
        "pthread_spinlock_t",
        "pthread_key_t",
        "pthread_once_t",
        "sem_t",
        "FILE",
        "omp_lock_t",
        "omp_nest_lock_t",
        "int8_t",
        "int16_t",
        "int32_t",
        "int64_t",
        "uint8_t",
        "uint16_t",
        "uint32_t",
        "uint64_t",
        "intptr_t",
        "uintptr_t",
        "bool",
        "time_t",
        "clock_t",
        "off_t",
        "pid_t",
        "va_list",
        "wchar_t",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn check_balance(tokens: &[LexToken]) -> PResult<()> {
    let mut stack: Vec<&LexToken> = Vec::new();
    for t in tokens.iter().filter(|t| t.kind == TokenKind::Punctuator) {
        match t.text.as_str() {
            "(" | "[" | "{" => stack.push(t),
            close @ (")" | "]" | "}") => {
                let want = match close {
                    ")" => "(",
                    "]" => "[",
                    _ => "{",
                };
                match stack.pop() {
                    Some(open) if open.text == want => {}
                    Some(open) => {
                        return Err(ParseError {
                            line: t.line,
                            message: format!(
                                "`{close}` does not match `{}` opened at line {}",
                                open.text, open.line
                            ),
                        })
                    }
                    None => {
                        return Err(ParseError {
                            line: t.line,
                            message: format!("unbalanced `{close}`"),
                        })
                    }
                }
            }
            _ => {}
        }
    }
    match stack.pop() {
        Some(open) => Err(ParseError {
            line: open.line,
            message: format!("`{}` is never closed", open.text),
        }),
        None => Ok(()),
    }
}

const TYPE_KEYWORDS: &[&str] = &[
    "void", "char", "short", "int", "long", "float", "double", "signed", "unsigned", "_Bool",
    "_Complex",
];

const SKIPPED_SPECIFIERS: &[&str] = &[
    "extern",
    "static",
    "auto",
    "register",
    "inline",
    "const",
    "volatile",
    "restrict",
    "_Thread_local",
    "__inline",
    "__inline__",
    "__restrict",
    "__restrict__",
    "__extension__",
    "__const",
    "__volatile__",
];

const ASSIGN_OPS: &[&str] = &[
    "=", "+=", "-=", "*=", "/=", "%=", "<<=", ">>=", "&=", "^=", "|=",
];

fn binary_precedence(op: &str) -> Option<u8> {
    Some(match op {
        "||" => 1,
        "&&" => 2,
        "|" => 3,
        "^" => 4,
        "&" => 5,
        "==" | "!=" => 6,
        "<" | ">" | "<=" | ">=" => 7,
        "<<" | ">>" => 8,
        "+" | "-" => 9,
        "*" | "/" | "%" => 10,
        _ => return None,
    })
}

struct Specs {
    base: AstNode,
    is_typedef: bool,
}

enum Suffix {
    Array(Option<AstNode>, usize),
    Func(Option<AstNode>, usize),
}

struct Declarator {
    name: Option<String>,
    line: usize,
    pointers: usize,
    suffixes: Vec<Suffix>,
}

impl Declarator {
    fn is_function(&self) -> bool {
        matches!(self.suffixes.first(), Some(Suffix::Func(..)))
    }

    /// Nest the base type inside the declarator's modifiers.
    fn build(self, base: AstNode) -> AstNode {
        use NodeClass::*;
        let mut node = AstNode {
            name: self.name.clone(),
            ..AstNode::new(TypeDecl, self.line)
        }
        .with_children(vec![base]);
        for _ in 0..self.pointers {
            node = AstNode::new(PtrDecl, self.line).with_children(vec![node]);
        }
        for s in self.suffixes.into_iter().rev() {
            node = match s {
                Suffix::Array(dim, line) => {
                    let mut kids = vec![node];
                    kids.extend(dim);
                    AstNode::new(ArrayDecl, line).with_children(kids)
                }
                Suffix::Func(params, line) => {
                    let mut kids: Vec<AstNode> = params.into_iter().collect();
                    kids.push(node);
                    AstNode::new(FuncDecl, line).with_children(kids)
                }
            };
        }
        node
    }
}

struct Parser<'t> {
    toks: &'t [LexToken],
    pos: usize,
    typedefs: HashSet<String>,
}

impl<'t> Parser<'t> {
    // ---- token helpers -------------------------------------------------

    fn peek(&self) -> Option<&'t LexToken> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, k: usize) -> Option<&'t LexToken> {
        self.toks.get(self.pos + k)
    }

    fn eof(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn line(&self) -> usize {
        self.peek()
            .or_else(|| self.toks.last())
            .map_or(1, |t| t.line)
    }

    fn prev_line(&self) -> usize {
        self.pos
            .checked_sub(1)
            .and_then(|i| self.toks.get(i))
            .map_or(1, |t| t.end_line)
    }

    fn at_punct(&self, p: &str) -> bool {
        self.peek().is_some_and(|t| t.is_punct(p))
    }

    fn at_keyword(&self, k: &str) -> bool {
        self.peek().is_some_and(|t| t.is_keyword(k))
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.at_punct(p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn fail<T>(&self, message: impl Into<String>) -> PResult<T> {
        Err(ParseError {
            line: self.line(),
            message: message.into(),
        })
    }

    fn expect_punct(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            let found = self
                .peek()
                .map_or("end of input".to_string(), |t| format!("`{}`", t.text));
            self.fail(format!("expected `{p}`, found {found}"))
        }
    }

    fn expect_ident(&mut self) -> PResult<&'t LexToken> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                self.pos += 1;
                Ok(t)
            }
            _ => self.fail("expected identifier"),
        }
    }

    /// Skip `__attribute__((...))`-style annotations.
    fn skip_attributes(&mut self) {
        while let Some(t) = self.peek() {
            if t.kind == TokenKind::Identifier
                && matches!(
                    t.text.as_str(),
                    "__attribute__" | "__attribute" | "__declspec" | "__asm__"
                )
            {
                self.pos += 1;
                if self.at_punct("(") {
                    self.skip_group();
                }
            } else {
                break;
            }
        }
    }

    /// Skip a balanced bracket group starting at the current opener.
    fn skip_group(&mut self) {
        let mut depth = 0usize;
        while let Some(t) = self.peek() {
            self.pos += 1;
            if t.kind != TokenKind::Punctuator {
                continue;
            }
            match t.text.as_str() {
                "(" | "[" | "{" => depth += 1,
                ")" | "]" | "}" => {
                    depth -= 1;
                    if depth == 0 {
                        return;
                    }
                }
                _ => {}
            }
        }
    }

    // ---- recovery ------------------------------------------------------

    /// Consume one unparsable declaration or statement as an `Unknown` node.
    fn unknown(&mut self, top_level: bool) -> AstNode {
        let line = self.line();
        let start = self.pos;
        let mut depth = 0usize;
        while let Some(t) = self.peek() {
            if t.kind == TokenKind::Pragma && depth == 0 && self.pos > start {
                break;
            }
            if t.kind == TokenKind::Punctuator {
                match t.text.as_str() {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" => depth = depth.saturating_sub(1),
                    "}" => {
                        if depth == 0 {
                            break;
                        }
                        depth -= 1;
                        if depth == 0 {
                            self.pos += 1;
                            match self.peek() {
                                Some(n) if n.is_punct(";") => self.pos += 1,
                                Some(n)
                                    if top_level
                                        && (n.kind == TokenKind::Identifier
                                            || n.is_punct("*")
                                            || n.is_punct(",")) =>
                                {
                                    continue
                                }
                                _ => {}
                            }
                            break;
                        }
                    }
                    ";" if depth == 0 => {
                        self.pos += 1;
                        break;
                    }
                    _ => {}
                }
            }
            self.pos += 1;
        }
        if self.pos == start {
            self.pos += 1;
        }
        let mut node = AstNode::new(NodeClass::Unknown, line);
        node.end_line = self.prev_line();
        node
    }

    // ---- top level -----------------------------------------------------

    fn translation_unit(&mut self) -> AstNode {
        let mut root = AstNode::new(NodeClass::FileAST, 1);
        while let Some(t) = self.peek() {
            if t.kind == TokenKind::Pragma {
                self.pos += 1;
                let (mut node, _) = pragma_node(t);
                node.end_line = t.end_line;
                root.push(node);
                continue;
            }
            if self.eat_punct(";") {
                continue;
            }
            let start = self.pos;
            match self.external_declaration() {
                Ok(nodes) => nodes.into_iter().for_each(|n| root.push(n)),
                Err(e) => {
                    log::debug!("top-level fallback to Unknown: {e}");
                    self.pos = start;
                    let u = self.unknown(true);
                    root.push(u);
                }
            }
        }
        root
    }

    fn external_declaration(&mut self) -> PResult<Vec<AstNode>> {
        let line = self.line();
        let specs = self.decl_specifiers()?;
        if self.eat_punct(";") {
            return Ok(vec![
                AstNode::new(NodeClass::Decl, line).with_children(vec![specs.base])
            ]);
        }
        let decl = self.declarator(false)?;
        self.skip_attributes();
        if self.at_punct("{") && decl.is_function() && !specs.is_typedef {
            let name = decl.name.clone().unwrap_or_default();
            let decl_line = decl.line;
            let ty = decl.build(specs.base);
            let d =
                AstNode::named(NodeClass::Decl, decl_line, name.clone()).with_children(vec![ty]);
            let body = self.compound()?;
            let mut f = AstNode::named(NodeClass::FuncDef, line, name).with_children(vec![d, body]);
            f.end_line = self.prev_line();
            return Ok(vec![f]);
        }
        self.declaration_rest(line, specs, decl)
    }

    // ---- declarations --------------------------------------------------

    fn is_type_name_start(&self, tok: Option<&LexToken>) -> bool {
        let Some(t) = tok else { return false };
        match t.kind {
            TokenKind::Keyword => {
                TYPE_KEYWORDS.contains(&t.text.as_str())
                    || SKIPPED_SPECIFIERS.contains(&t.text.as_str())
                    || matches!(t.text.as_str(), "struct" | "union" | "enum")
            }
            TokenKind::Identifier => {
                self.typedefs.contains(&t.text) || t.text.ends_with("_t") && t.text.len() > 2
            }
            _ => false,
        }
    }

    fn at_declaration(&self) -> bool {
        let Some(t) = self.peek() else { return false };
        match t.kind {
            TokenKind::Keyword => {
                t.text == "typedef"
                    || TYPE_KEYWORDS.contains(&t.text.as_str())
                    || SKIPPED_SPECIFIERS.contains(&t.text.as_str())
                    || matches!(t.text.as_str(), "struct" | "union" | "enum")
            }
            TokenKind::Identifier => {
                let next = self.peek_at(1);
                let next_is_ident = next.is_some_and(|n| n.kind == TokenKind::Identifier);
                if self.is_type_name_start(Some(t)) {
                    next_is_ident || next.is_some_and(|n| n.is_punct("*"))
                } else {
                    next_is_ident
                        || SKIPPED_SPECIFIERS.contains(&t.text.as_str())
                        || t.text == "__attribute__"
                }
            }
            _ => false,
        }
    }

    fn decl_specifiers(&mut self) -> PResult<Specs> {
        let line = self.line();
        let mut names: Vec<String> = Vec::new();
        let mut base: Option<AstNode> = None;
        let mut is_typedef = false;
        while let Some(t) = self.peek() {
            let text = t.text.as_str();
            match t.kind {
                TokenKind::Keyword if text == "typedef" => {
                    is_typedef = true;
                    self.pos += 1;
                }
                TokenKind::Keyword | TokenKind::Identifier
                    if SKIPPED_SPECIFIERS.contains(&text) =>
                {
                    self.pos += 1;
                }
                TokenKind::Identifier
                    if matches!(text, "__attribute__" | "__attribute" | "__declspec") =>
                {
                    self.skip_attributes();
                }
                TokenKind::Keyword if TYPE_KEYWORDS.contains(&text) => {
                    if base.is_some() {
                        return self.fail("type keyword after a complete type");
                    }
                    names.push(text.to_string());
                    self.pos += 1;
                }
                TokenKind::Keyword if matches!(text, "struct" | "union") => {
                    if base.is_some() || !names.is_empty() {
                        return self.fail("conflicting type specifiers");
                    }
                    base = Some(self.struct_or_union()?);
                }
                TokenKind::Keyword if text == "enum" => {
                    if base.is_some() || !names.is_empty() {
                        return self.fail("conflicting type specifiers");
                    }
                    base = Some(self.enum_spec()?);
                }
                TokenKind::Identifier if base.is_none() && names.is_empty() => {
                    let next = self.peek_at(1);
                    let known = self.is_type_name_start(Some(t));
                    let looks_like_type = next.is_some_and(|n| {
                        n.kind == TokenKind::Identifier
                            || known && (n.is_punct("*") || n.is_punct(")") || n.is_punct("["))
                    });
                    if known || looks_like_type {
                        base = Some(AstNode::named(NodeClass::IdentifierType, t.line, text));
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                _ => break,
            }
        }
        let base = match base {
            Some(b) => b,
            None if !names.is_empty() => {
                AstNode::named(NodeClass::IdentifierType, line, names.join(" "))
            }
            None => return self.fail("expected a type"),
        };
        Ok(Specs { base, is_typedef })
    }

    fn struct_or_union(&mut self) -> PResult<AstNode> {
        let t = self.peek().unwrap();
        let class = if t.text == "struct" {
            NodeClass::Struct
        } else {
            NodeClass::Union
        };
        let line = t.line;
        self.pos += 1;
        self.skip_attributes();
        let mut node = AstNode::new(class, line);
        if let Some(n) = self.peek().filter(|n| n.kind == TokenKind::Identifier) {
            node.name = Some(n.text.clone());
            self.pos += 1;
        }
        if self.eat_punct("{") {
            while !self.at_punct("}") {
                if self.eof() {
                    return self.fail("unterminated struct body");
                }
                let fline = self.line();
                let specs = self.decl_specifiers()?;
                if self.eat_punct(";") {
                    node.push(AstNode::new(NodeClass::Decl, fline).with_children(vec![specs.base]));
                    continue;
                }
                loop {
                    let d = self.declarator(true)?;
                    let name = d.name.clone();
                    let dline = d.line;
                    let mut kids = vec![d.build(specs.base.clone())];
                    if self.eat_punct(":") {
                        kids.push(self.conditional()?);
                    }
                    let mut field = AstNode::new(NodeClass::Decl, dline).with_children(kids);
                    field.name = name;
                    node.push(field);
                    if !self.eat_punct(",") {
                        break;
                    }
                }
                self.expect_punct(";")?;
            }
            self.pos += 1;
            node.end_line = self.prev_line();
        } else if node.name.is_none() {
            return self.fail("anonymous struct without body");
        }
        self.skip_attributes();
        Ok(node)
    }

    fn enum_spec(&mut self) -> PResult<AstNode> {
        let line = self.line();
        self.pos += 1;
        let mut node = AstNode::new(NodeClass::Enum, line);
        if let Some(n) = self.peek().filter(|n| n.kind == TokenKind::Identifier) {
            node.name = Some(n.text.clone());
            self.pos += 1;
        }
        if self.eat_punct("{") {
            while !self.at_punct("}") {
                let id = self.expect_ident()?;
                let mut e = AstNode::named(NodeClass::Enumerator, id.line, id.text.clone());
                if self.eat_punct("=") {
                    e.push(self.conditional()?);
                }
                node.push(e);
                if !self.eat_punct(",") {
                    break;
                }
            }
            self.expect_punct("}")?;
            node.end_line = self.prev_line();
        } else if node.name.is_none() {
            return self.fail("anonymous enum without body");
        }
        Ok(node)
    }

    fn declarator(&mut self, allow_abstract: bool) -> PResult<Declarator> {
        let mut pointers = 0;
        while self.eat_punct("*") {
            pointers += 1;
            while self
                .peek()
                .is_some_and(|t| SKIPPED_SPECIFIERS.contains(&t.text.as_str()))
            {
                self.pos += 1;
            }
        }
        self.skip_attributes();
        let line = self.line();
        let name = match self.peek() {
            Some(t) if t.kind == TokenKind::Identifier => {
                self.pos += 1;
                Some(t.text.clone())
            }
            Some(t)
                if t.is_punct("(")
                    && self
                        .peek_at(1)
                        .is_some_and(|n| n.is_punct("*") || n.is_punct("^")) =>
            {
                return self.fail("function pointer declarators are not supported");
            }
            _ if allow_abstract => None,
            _ => return self.fail("expected declarator"),
        };
        let mut suffixes = Vec::new();
        loop {
            let sline = self.line();
            if self.eat_punct("[") {
                while self.peek().is_some_and(|t| {
                    t.is_keyword("static") || SKIPPED_SPECIFIERS.contains(&t.text.as_str())
                }) {
                    self.pos += 1;
                }
                let dim = if self.at_punct("]") {
                    None
                } else {
                    Some(self.assignment()?)
                };
                self.expect_punct("]")?;
                suffixes.push(Suffix::Array(dim, sline));
            } else if self.at_punct("(") {
                let params = self.parameter_list()?;
                suffixes.push(Suffix::Func(params, sline));
            } else {
                break;
            }
        }
        Ok(Declarator {
            name,
            line,
            pointers,
            suffixes,
        })
    }

    fn parameter_list(&mut self) -> PResult<Option<AstNode>> {
        let line = self.line();
        self.expect_punct("(")?;
        if self.eat_punct(")") {
            return Ok(None);
        }
        let mut list = AstNode::new(NodeClass::ParamList, line);
        loop {
            if self.at_punct("...") {
                let l = self.line();
                self.pos += 1;
                list.push(AstNode::new(NodeClass::EllipsisParam, l));
            } else {
                let pline = self.line();
                let specs = self.decl_specifiers()?;
                let d = self.declarator(true)?;
                let node = match d.name.clone() {
                    Some(n) => {
                        let l = d.line;
                        AstNode::named(NodeClass::Decl, l, n)
                            .with_children(vec![d.build(specs.base)])
                    }
                    None => AstNode::new(NodeClass::Typename, pline)
                        .with_children(vec![d.build(specs.base)]),
                };
                list.push(node);
            }
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(")")?;
        Ok(Some(list))
    }

    /// After specifiers and the first declarator: initializers, further
    /// declarators, and the terminating `;`.
    fn declaration_rest(
        &mut self,
        line: usize,
        specs: Specs,
        first: Declarator,
    ) -> PResult<Vec<AstNode>> {
        let mut out = Vec::new();
        let mut d = first;
        loop {
            self.skip_attributes();
            let name = d.name.clone();
            let dline = d.line;
            let ty = d.build(specs.base.clone());
            let node = if specs.is_typedef {
                if let Some(n) = &name {
                    self.typedefs.insert(n.clone());
                }
                let mut t = AstNode::new(NodeClass::Typedef, dline).with_children(vec![ty]);
                t.name = name;
                t
            } else {
                let mut kids = vec![ty];
                if self.eat_punct("=") {
                    kids.push(self.initializer()?);
                }
                let mut decl = AstNode::new(NodeClass::Decl, dline).with_children(kids);
                decl.name = name;
                decl
            };
            out.push(node);
            if !self.eat_punct(",") {
                break;
            }
            d = self.declarator(false)?;
        }
        self.expect_punct(";")?;
        let _ = line;
        Ok(out)
    }

    fn declaration(&mut self) -> PResult<Vec<AstNode>> {
        let line = self.line();
        let specs = self.decl_specifiers()?;
        if self.eat_punct(";") {
            return Ok(vec![
                AstNode::new(NodeClass::Decl, line).with_children(vec![specs.base])
            ]);
        }
        let d = self.declarator(false)?;
        self.declaration_rest(line, specs, d)
    }

    fn initializer(&mut self) -> PResult<AstNode> {
        if !self.at_punct("{") {
            return self.assignment();
        }
        let line = self.line();
        self.pos += 1;
        let mut list = AstNode::new(NodeClass::InitList, line);
        while !self.at_punct("}") {
            if self.at_punct(".") || self.at_punct("[") {
                let l = self.line();
                let mut named = AstNode::new(NodeClass::NamedInitializer, l);
                while self.at_punct(".") || self.at_punct("[") {
                    if self.eat_punct(".") {
                        let id = self.expect_ident()?;
                        named.push(AstNode::named(NodeClass::ID, id.line, id.text.clone()));
                    } else {
                        self.pos += 1;
                        named.push(self.conditional()?);
                        self.expect_punct("]")?;
                    }
                }
                self.expect_punct("=")?;
                named.push(self.initializer()?);
                list.push(named);
            } else {
                list.push(self.initializer()?);
            }
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct("}")?;
        list.end_line = self.prev_line();
        Ok(list)
    }

    fn type_name(&mut self) -> PResult<AstNode> {
        let line = self.line();
        let specs = self.decl_specifiers()?;
        let d = self.declarator(true)?;
        if d.name.is_some() {
            return self.fail("unexpected identifier in type name");
        }
        Ok(AstNode::new(NodeClass::Typename, line).with_children(vec![d.build(specs.base)]))
    }

    // ---- statements ----------------------------------------------------

    fn compound(&mut self) -> PResult<AstNode> {
        let line = self.line();
        self.expect_punct("{")?;
        let mut node = AstNode::new(NodeClass::Compound, line);
        while !self.at_punct("}") {
            if self.eof() {
                return self.fail("unterminated block");
            }
            for item in self.block_item() {
                node.push(item);
            }
        }
        self.pos += 1;
        node.end_line = self.prev_line();
        Ok(node)
    }

    /// A declaration or statement, falling back to `Unknown`.
    fn block_item(&mut self) -> Vec<AstNode> {
        if self.at_declaration() && !self.at_label() {
            let start = self.pos;
            match self.declaration() {
                Ok(nodes) => return nodes,
                Err(e) => {
                    log::debug!("declaration fallback to Unknown: {e}");
                    self.pos = start;
                    return vec![self.unknown(false)];
                }
            }
        }
        vec![self.statement()]
    }

    fn at_label(&self) -> bool {
        self.peek().is_some_and(|t| t.kind == TokenKind::Identifier)
            && self.peek_at(1).is_some_and(|t| t.is_punct(":"))
    }

    fn statement(&mut self) -> AstNode {
        let start = self.pos;
        match self.statement_inner() {
            Ok(mut n) => {
                n.end_line = n.end_line.max(self.prev_line());
                n
            }
            Err(e) => {
                log::debug!("statement fallback to Unknown: {e}");
                self.pos = start;
                self.unknown(false)
            }
        }
    }

    fn paren_expr(&mut self) -> PResult<AstNode> {
        self.expect_punct("(")?;
        let e = self.expr()?;
        self.expect_punct(")")?;
        Ok(e)
    }

    fn statement_inner(&mut self) -> PResult<AstNode> {
        use NodeClass::*;
        let Some(t) = self.peek() else {
            return self.fail("expected statement");
        };
        let line = t.line;
        if t.kind == TokenKind::Pragma {
            self.pos += 1;
            let (mut node, standalone) = pragma_node(t);
            node.end_line = t.end_line;
            if !standalone && !self.eof() && !self.at_punct("}") {
                let body = self.block_item();
                for b in body {
                    node.push(b);
                }
            }
            return Ok(node);
        }
        if self.at_label() {
            self.pos += 2;
            let mut node = AstNode::named(Label, line, t.text.clone());
            if !self.at_punct("}") {
                node.push(self.statement());
            }
            return Ok(node);
        }
        if t.kind == TokenKind::Punctuator {
            if t.text == "{" {
                return self.compound();
            }
            if t.text == ";" {
                self.pos += 1;
                return Ok(AstNode::new(EmptyStatement, line));
            }
        }
        if t.kind == TokenKind::Keyword {
            match t.text.as_str() {
                "if" => {
                    self.pos += 1;
                    let cond = self.paren_expr()?;
                    let then = self.statement();
                    let mut kids = vec![cond, then];
                    if self.at_keyword("else") {
                        self.pos += 1;
                        kids.push(self.statement());
                    }
                    return Ok(AstNode::new(If, line).with_children(kids));
                }
                "for" => {
                    self.pos += 1;
                    self.expect_punct("(")?;
                    let mut kids = Vec::new();
                    if self.at_declaration() {
                        let dline = self.line();
                        let decls = self.declaration()?;
                        kids.push(AstNode::new(DeclList, dline).with_children(decls));
                    } else {
                        if !self.at_punct(";") {
                            kids.push(self.expr()?);
                        }
                        self.expect_punct(";")?;
                    }
                    if !self.at_punct(";") {
                        kids.push(self.expr()?);
                    }
                    self.expect_punct(";")?;
                    if !self.at_punct(")") {
                        kids.push(self.expr()?);
                    }
                    self.expect_punct(")")?;
                    kids.push(self.statement());
                    return Ok(AstNode::new(For, line).with_children(kids));
                }
                "while" => {
                    self.pos += 1;
                    let cond = self.paren_expr()?;
                    let body = self.statement();
                    return Ok(AstNode::new(While, line).with_children(vec![cond, body]));
                }
                "do" => {
                    self.pos += 1;
                    let body = self.statement();
                    if !self.at_keyword("while") {
                        return self.fail("expected `while` after do body");
                    }
                    self.pos += 1;
                    let cond = self.paren_expr()?;
                    self.expect_punct(";")?;
                    return Ok(AstNode::new(DoWhile, line).with_children(vec![cond, body]));
                }
                "switch" => {
                    self.pos += 1;
                    let cond = self.paren_expr()?;
                    let body = self.statement();
                    return Ok(AstNode::new(Switch, line).with_children(vec![cond, body]));
                }
                "case" => {
                    self.pos += 1;
                    let e = self.conditional()?;
                    self.expect_punct(":")?;
                    let mut kids = vec![e];
                    if !self.at_punct("}") {
                        kids.push(self.statement());
                    }
                    return Ok(AstNode::new(Case, line).with_children(kids));
                }
                "default" => {
                    self.pos += 1;
                    self.expect_punct(":")?;
                    let mut node = AstNode::new(Default, line);
                    if !self.at_punct("}") {
                        node.push(self.statement());
                    }
                    return Ok(node);
                }
                "return" => {
                    self.pos += 1;
                    let mut node = AstNode::new(Return, line);
                    if !self.at_punct(";") {
                        node.push(self.expr()?);
                    }
                    self.expect_punct(";")?;
                    return Ok(node);
                }
                "break" | "continue" => {
                    self.pos += 1;
                    self.expect_punct(";")?;
                    let class = if t.text == "break" { Break } else { Continue };
                    return Ok(AstNode::new(class, line));
                }
                "goto" => {
                    self.pos += 1;
                    let id = self.expect_ident()?;
                    self.expect_punct(";")?;
                    return Ok(AstNode::named(Goto, line, id.text.clone()));
                }
                _ => {}
            }
        }
        let e = self.expr()?;
        self.expect_punct(";")?;
        Ok(e)
    }

    // ---- expressions ---------------------------------------------------

    fn expr(&mut self) -> PResult<AstNode> {
        let first = self.assignment()?;
        if !self.at_punct(",") {
            return Ok(first);
        }
        let mut list = AstNode::new(NodeClass::ExprList, first.line);
        list.push(first);
        while self.eat_punct(",") {
            list.push(self.assignment()?);
        }
        Ok(list)
    }

    fn assignment(&mut self) -> PResult<AstNode> {
        let lhs = self.conditional()?;
        if let Some(t) = self.peek() {
            if t.kind == TokenKind::Punctuator && ASSIGN_OPS.contains(&t.text.as_str()) {
                self.pos += 1;
                let rhs = self.assignment()?;
                let mut node =
                    AstNode::new(NodeClass::Assignment, lhs.line).with_children(vec![lhs, rhs]);
                node.name = Some(t.text.clone());
                return Ok(node);
            }
        }
        Ok(lhs)
    }

    fn conditional(&mut self) -> PResult<AstNode> {
        let cond = self.binary(1)?;
        if !self.eat_punct("?") {
            return Ok(cond);
        }
        let a = self.expr()?;
        self.expect_punct(":")?;
        let b = self.conditional()?;
        Ok(AstNode::new(NodeClass::TernaryOp, cond.line).with_children(vec![cond, a, b]))
    }

    fn binary(&mut self, min_prec: u8) -> PResult<AstNode> {
        let mut lhs = self.cast()?;
        while let Some(t) = self.peek() {
            if t.kind != TokenKind::Punctuator {
                break;
            }
            let Some(prec) = binary_precedence(&t.text) else {
                break;
            };
            if prec < min_prec {
                break;
            }
            self.pos += 1;
            let rhs = self.binary(prec + 1)?;
            let mut node =
                AstNode::new(NodeClass::BinaryOp, lhs.line).with_children(vec![lhs, rhs]);
            node.name = Some(t.text.clone());
            lhs = node;
        }
        Ok(lhs)
    }

    fn cast(&mut self) -> PResult<AstNode> {
        if self.at_punct("(") && self.is_type_name_start(self.peek_at(1)) {
            let line = self.line();
            self.pos += 1;
            let ty = self.type_name()?;
            self.expect_punct(")")?;
            let operand = if self.at_punct("{") {
                self.initializer()?
            } else {
                self.cast()?
            };
            return Ok(AstNode::new(NodeClass::Cast, line).with_children(vec![ty, operand]));
        }
        self.unary()
    }

    fn unary(&mut self) -> PResult<AstNode> {
        let Some(t) = self.peek() else {
            return self.fail("expected expression");
        };
        let line = t.line;
        if t.kind == TokenKind::Punctuator {
            match t.text.as_str() {
                "++" | "--" => {
                    self.pos += 1;
                    let operand = self.unary()?;
                    let mut n = AstNode::new(NodeClass::UnaryOp, line).with_children(vec![operand]);
                    n.name = Some(t.text.clone());
                    return Ok(n);
                }
                "&" | "*" | "+" | "-" | "~" | "!" => {
                    self.pos += 1;
                    let operand = self.cast()?;
                    let mut n = AstNode::new(NodeClass::UnaryOp, line).with_children(vec![operand]);
                    n.name = Some(t.text.clone());
                    return Ok(n);
                }
                _ => {}
            }
        }
        if t.is_keyword("sizeof") {
            self.pos += 1;
            let operand = if self.at_punct("(") && self.is_type_name_start(self.peek_at(1)) {
                self.pos += 1;
                let ty = self.type_name()?;
                self.expect_punct(")")?;
                ty
            } else {
                self.unary()?
            };
            return Ok(
                AstNode::named(NodeClass::UnaryOp, line, "sizeof").with_children(vec![operand])
            );
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<AstNode> {
        let mut node = self.primary()?;
        loop {
            let line = self.line();
            if self.eat_punct("[") {
                let idx = self.expr()?;
                self.expect_punct("]")?;
                node = AstNode::new(NodeClass::ArrayRef, node.line).with_children(vec![node, idx]);
            } else if self.at_punct("(") {
                node = self.call(node)?;
            } else if self.at_punct(".") || self.at_punct("->") {
                let op = self.peek().unwrap().text.clone();
                self.pos += 1;
                let id = self.expect_ident()?;
                let field = AstNode::named(NodeClass::ID, id.line, id.text.clone());
                node = AstNode::named(NodeClass::StructRef, node.line, op)
                    .with_children(vec![node, field]);
            } else if self.at_punct("++") || self.at_punct("--") {
                let op = self.peek().unwrap().text.clone();
                self.pos += 1;
                node = AstNode::named(NodeClass::UnaryOp, node.line, format!("p{op}"))
                    .with_children(vec![node]);
            } else {
                let _ = line;
                break;
            }
        }
        Ok(node)
    }

    fn call(&mut self, callee: AstNode) -> PResult<AstNode> {
        let args_line = self.line();
        let open = self.pos;
        self.expect_punct("(")?;
        let mut args = None;
        if !self.at_punct(")") {
            let mut list = AstNode::new(NodeClass::ExprList, args_line);
            loop {
                list.push(self.assignment()?);
                if !self.eat_punct(",") {
                    break;
                }
            }
            args = Some(list);
        }
        self.expect_punct(")")?;
        let arg_text: String = self.toks[open + 1..self.pos - 1]
            .iter()
            .map(|t| t.text.as_str())
            .collect();

        let callee_name = (callee.class == NodeClass::ID)
            .then(|| callee.name.clone())
            .flatten();
        let (class, name) = match callee_name.as_deref() {
            Some("pthread_mutex_lock") => (NodeClass::PthreadLockCall, Some(arg_text)),
            Some("pthread_mutex_unlock") => (NodeClass::PthreadUnlockCall, Some(arg_text)),
            _ => (NodeClass::FuncCall, callee_name),
        };
        let mut kids = vec![callee];
        kids.extend(args);
        let line = kids[0].line;
        let mut node = AstNode::new(class, line).with_children(kids);
        node.name = name;
        Ok(node)
    }

    fn primary(&mut self) -> PResult<AstNode> {
        let Some(t) = self.peek() else {
            return self.fail("expected expression");
        };
        match t.kind {
            TokenKind::Identifier => {
                self.pos += 1;
                Ok(AstNode::named(NodeClass::ID, t.line, t.text.clone()))
            }
            TokenKind::Number | TokenKind::Char => {
                self.pos += 1;
                Ok(AstNode::named(NodeClass::Constant, t.line, t.text.clone()))
            }
            TokenKind::String => {
                let mut text = String::new();
                while let Some(s) = self.peek().filter(|s| s.kind == TokenKind::String) {
                    text.push_str(&s.text);
                    self.pos += 1;
                }
                let mut node = AstNode::named(NodeClass::Constant, t.line, text);
                node.end_line = self.prev_line();
                Ok(node)
            }
            TokenKind::Punctuator if t.text == "(" => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            _ => self.fail(format!("unexpected `{}` in expression", t.text)),
        }
    }
}

// ---- pragmas -------------------------------------------------------------

const OMP_DIRECTIVE_WORDS: &[&str] = &[
    "parallel",
    "for",
    "simd",
    "critical",
    "single",
    "master",
    "masked",
    "barrier",
    "atomic",
    "sections",
    "section",
    "task",
    "taskwait",
    "taskyield",
    "taskgroup",
    "taskloop",
    "flush",
    "threadprivate",
    "ordered",
    "target",
    "teams",
    "distribute",
    "declare",
    "cancel",
    "cancellation",
    "point",
    "requires",
    "loop",
    "read",
    "write",
    "update",
    "capture",
    "data",
    "enter",
    "exit",
];

const OMP_STANDALONE: &[&str] = &[
    "barrier",
    "taskwait",
    "taskyield",
    "flush",
    "threadprivate",
    "cancel",
    "cancellation",
    "declare",
    "requires",
    "enter",
    "exit",
];

#[derive(Debug, PartialEq)]
enum PragmaPiece {
    Word(String),
    Group(String),
    Other(char),
}

fn pragma_pieces(text: &str) -> Vec<PragmaPiece> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(PragmaPiece::Word(chars[start..i].iter().collect()));
        } else if c == '(' {
            let start = i + 1;
            let mut depth = 0;
            while i < chars.len() {
                match chars[i] {
                    '(' => depth += 1,
                    ')' => {
                        depth -= 1;
                        if depth == 0 {
                            break;
                        }
                    }
                    _ => {}
                }
                i += 1;
            }
            out.push(PragmaPiece::Group(
                chars[start..i.min(chars.len())].iter().collect(),
            ));
            i += 1;
        } else {
            out.push(PragmaPiece::Other(c));
            i += 1;
        }
    }
    out
}

/// Build the node for a pragma token. The flag is true when the directive
/// takes no structured block.
fn pragma_node(tok: &LexToken) -> (AstNode, bool) {
    use NodeClass::*;
    let line = tok.line;
    let pieces = pragma_pieces(&tok.text);
    let mut it = pieces.into_iter().peekable();
    if !matches!(it.peek(), Some(PragmaPiece::Word(w)) if w == "omp") {
        return (AstNode::named(Pragma, line, tok.text.clone()), true);
    }
    it.next();

    let mut words: Vec<String> = Vec::new();
    let mut directive_arg: Option<String> = None;
    while let Some(PragmaPiece::Word(w)) = it.peek() {
        if !OMP_DIRECTIVE_WORDS.contains(&w.as_str()) {
            break;
        }
        let w = w.clone();
        it.next();
        let takes_arg = matches!(w.as_str(), "critical" | "flush" | "threadprivate");
        words.push(w);
        if takes_arg {
            if let Some(PragmaPiece::Group(g)) = it.peek() {
                directive_arg = Some(g.clone());
                it.next();
            }
        }
    }

    let first = words.first().map(String::as_str).unwrap_or("");
    let second = words.get(1).map(String::as_str).unwrap_or("");
    let class = match (first, second) {
        ("parallel", "for") => OmpParallelFor,
        ("parallel", "sections") => OmpSections,
        ("parallel", _) => OmpParallel,
        ("for", _) => OmpFor,
        ("critical", _) => OmpCritical,
        ("single", _) => OmpSingle,
        ("master" | "masked", _) => OmpMaster,
        ("barrier", _) => OmpBarrier,
        ("atomic", _) => OmpAtomic,
        ("sections", _) => OmpSections,
        ("section", _) => OmpSection,
        ("task", _) => OmpTask,
        _ => OmpOther,
    };
    let standalone = OMP_STANDALONE.contains(&first)
        || (first == "ordered" && tok.text.contains("depend"))
        || (first == "target" && matches!(second, "update" | "enter" | "exit"));

    let mut node = AstNode::new(class, line);
    node.name = Some(match directive_arg {
        Some(a) => format!("{} ({})", words.join(" "), a.trim()),
        None => words.join(" "),
    });

    while let Some(piece) = it.next() {
        let PragmaPiece::Word(clause) = piece else {
            continue;
        };
        let args = match it.peek() {
            Some(PragmaPiece::Group(g)) => {
                let g = g.clone();
                it.next();
                Some(g)
            }
            _ => None,
        };
        let cclass = match clause.as_str() {
            "private" => OmpPrivateClause,
            "firstprivate" => OmpFirstprivateClause,
            "lastprivate" => OmpLastprivateClause,
            "shared" => OmpSharedClause,
            "reduction" => OmpReductionClause,
            _ => OmpOtherClause,
        };
        let mut cnode = AstNode::named(cclass, line, clause.clone());
        if cclass != OmpOtherClause {
            if let Some(a) = args {
                let modified = matches!(cclass, OmpReductionClause | OmpLastprivateClause);
                let list = match a.split_once(':') {
                    Some((_, vars)) if modified => vars.to_string(),
                    _ => a,
                };
                for v in list.split(',') {
                    let v = v.trim();
                    let ident: String = v
                        .chars()
                        .take_while(|c| c.is_alphanumeric() || *c == '_')
                        .collect();
                    if !ident.is_empty() {
                        cnode.push(AstNode::named(OmpClauseVar, line, ident));
                    }
                }
            }
        }
        node.push(cnode);
    }
    (node, standalone)
}
