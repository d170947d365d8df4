use std::fmt;
use std::str::FromStr;

macro_rules! node_classes {
    ($($name:ident),* $(,)?) => {
        /// Class of an AST node. The token vectors fed to the model are
        /// sequences of these names.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum NodeClass {
            $($name),*
        }

        impl NodeClass {
            pub const ALL: &'static [NodeClass] = &[$(NodeClass::$name),*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(NodeClass::$name => stringify!($name)),*
                }
            }
        }

        impl FromStr for NodeClass {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $(stringify!($name) => Ok(NodeClass::$name),)*
                    other => Err(format!("unknown node class `{other}`")),
                }
            }
        }
    };
}

node_classes! {
    FileAST,
    FuncDef,
    FuncDecl,
    ParamList,
    EllipsisParam,
    TypeDecl,
    PtrDecl,
    ArrayDecl,
    Typename,
    Typedef,
    IdentifierType,
    Struct,
    Union,
    Enum,
    Enumerator,
    Decl,
    DeclList,
    InitList,
    NamedInitializer,
    Compound,
    FuncCall,
    ExprList,
    For,
    While,
    DoWhile,
    If,
    Switch,
    Case,
    Default,
    Break,
    Continue,
    Goto,
    Label,
    Return,
    EmptyStatement,
    Assignment,
    BinaryOp,
    UnaryOp,
    TernaryOp,
    Cast,
    ArrayRef,
    StructRef,
    ID,
    Constant,
    Pragma,
    OmpParallel,
    OmpParallelFor,
    OmpFor,
    OmpCritical,
    OmpSingle,
    OmpMaster,
    OmpBarrier,
    OmpAtomic,
    OmpSections,
    OmpSection,
    OmpTask,
    OmpOther,
    OmpPrivateClause,
    OmpFirstprivateClause,
    OmpLastprivateClause,
    OmpSharedClause,
    OmpReductionClause,
    OmpOtherClause,
    OmpClauseVar,
    PthreadLockCall,
    PthreadUnlockCall,
    Unknown,
}

impl fmt::Display for NodeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl NodeClass {
    pub fn is_omp_directive(self) -> bool {
        use NodeClass::*;
        matches!(
            self,
            OmpParallel
                | OmpParallelFor
                | OmpFor
                | OmpCritical
                | OmpSingle
                | OmpMaster
                | OmpBarrier
                | OmpAtomic
                | OmpSections
                | OmpSection
                | OmpTask
                | OmpOther
        )
    }

    pub fn is_omp_clause(self) -> bool {
        use NodeClass::*;
        matches!(
            self,
            OmpPrivateClause
                | OmpFirstprivateClause
                | OmpLastprivateClause
                | OmpSharedClause
                | OmpReductionClause
                | OmpOtherClause
        )
    }
}

/// A syntax tree node. `name` holds the identifier, callee, constant text or
/// mutex expression where one exists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstNode {
    pub class: NodeClass,
    pub line: usize,
    pub end_line: usize,
    pub name: Option<String>,
    pub children: Vec<AstNode>,
}

impl AstNode {
    pub fn new(class: NodeClass, line: usize) -> Self {
        AstNode {
            class,
            line,
            end_line: line,
            name: None,
            children: Vec::new(),
        }
    }

    pub fn named(class: NodeClass, line: usize, name: impl Into<String>) -> Self {
        AstNode {
            name: Some(name.into()),
            ..AstNode::new(class, line)
        }
    }

    pub fn with_children(mut self, children: Vec<AstNode>) -> Self {
        self.children = children;
        self.fix_end();
        self
    }

    pub fn push(&mut self, child: AstNode) {
        self.end_line = self.end_line.max(child.end_line);
        self.children.push(child);
    }

    /// Recompute `end_line` from the children.
    pub fn fix_end(&mut self) {
        for c in &self.children {
            self.end_line = self.end_line.max(c.end_line);
        }
    }

    /// Depth-first preorder walk.
    pub fn preorder(&self) -> Preorder<'_> {
        Preorder { stack: vec![self] }
    }

    pub fn count(&self, class: NodeClass) -> usize {
        self.preorder().filter(|n| n.class == class).count()
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }
}

pub struct Preorder<'a> {
    stack: Vec<&'a AstNode>,
}

impl<'a> Iterator for Preorder<'a> {
    type Item = &'a AstNode;

    fn next(&mut self) -> Option<Self::Item> {
        let node = self.stack.pop()?;
        self.stack.extend(node.children.iter().rev());
        Some(node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_names_roundtrip_and_are_unique() {
        let mut seen = std::collections::HashSet::new();
        for c in NodeClass::ALL {
            assert!(seen.insert(c.as_str()));
            assert_eq!(c.as_str().parse::<NodeClass>().unwrap(), *c);
        }
        assert!("Bogus".parse::<NodeClass>().is_err());
    }

    #[test]
    fn preorder_visits_parent_before_children_left_to_right() {
        let tree = AstNode::new(NodeClass::Compound, 1).with_children(vec![
            AstNode::new(NodeClass::For, 2).with_children(vec![AstNode::new(NodeClass::ID, 2)]),
            AstNode::new(NodeClass::Return, 3),
        ]);
        let order: Vec<_> = tree.preorder().map(|n| n.class).collect();
        use NodeClass::*;
        assert_eq!(order, vec![Compound, For, ID, Return]);
        assert_eq!(tree.end_line, 3);
    }
}
