use super::ast::{AstNode, NodeClass};
use crate::corpus::PatternKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenItem {
    pub class: NodeClass,
    pub line: usize,
}

/// DFS-preorder node classes of one unit (a function, or a whole file).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenVector {
    pub items: Vec<TokenItem>,
    pub unit_name: String,
    pub start_line: usize,
    pub end_line: usize,
}

impl TokenVector {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains_line(&self, line: usize) -> bool {
        (self.start_line..=self.end_line).contains(&line)
    }

    /// Number of source lines the unit spans.
    pub fn line_count(&self) -> usize {
        self.end_line + 1 - self.start_line
    }
}

pub fn token_vector(node: &AstNode, unit_name: impl Into<String>) -> TokenVector {
    let items: Vec<TokenItem> = node
        .preorder()
        .map(|n| TokenItem {
            class: n.class,
            line: n.line,
        })
        .collect();
    let start_line = items.iter().map(|t| t.line).min().unwrap_or(node.line);
    let end_line = node
        .end_line
        .max(items.iter().map(|t| t.line).max().unwrap_or(0));
    TokenVector {
        items,
        unit_name: unit_name.into(),
        start_line,
        end_line,
    }
}

/// OpenMP patterns work per function definition; pthread files are one unit.
pub fn extract_units(root: &AstNode, pattern: PatternKind) -> Vec<TokenVector> {
    match pattern {
        PatternKind::PthreadMutex => vec![token_vector(root, "<file>")],
        PatternKind::OmpPrivate | PatternKind::OmpCritical => root
            .children
            .iter()
            .filter(|n| n.class == NodeClass::FuncDef)
            .map(|f| token_vector(f, f.name().unwrap_or("<anonymous>")))
            .collect(),
    }
}
