//! C-subset frontend: lexing, parsing, unit extraction and vocabulary encoding.

mod ast;
mod lexer;
mod parser;
mod units;
mod vocab;

pub use ast::{AstNode, NodeClass, Preorder};
pub use lexer::{lex, LexError, LexToken, TokenKind, KEYWORDS};
pub use parser::{parse, ParseError};
pub use units::{extract_units, token_vector, TokenItem, TokenVector};
pub use vocab::{encode, EncodedSample, Vocabulary, PAD};

use crate::corpus::PatternKind;
use crate::Result;

/// Lex, parse and extract units in one step.
pub fn units_of_source(source: &str, pattern: PatternKind) -> Result<Vec<TokenVector>> {
    let tokens = lex(source)?;
    let root = parse(&tokens)?;
    Ok(extract_units(&root, pattern))
}
