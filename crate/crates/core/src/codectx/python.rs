//! Function spans of Python source, from a tree-sitter concrete syntax tree.

use tree_sitter::{Node, Parser};

/// A `def` (including any decorators) with its 1-based inclusive line span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionSpan {
    pub name: String,
    pub start_line: usize,
    pub end_line: usize,
    /// Byte offset of the start of `start_line` (so indentation is kept).
    pub start_byte: usize,
    pub end_byte: usize,
    pub depth: usize,
}

impl FunctionSpan {
    pub fn contains(&self, line: usize) -> bool {
        self.start_line <= line && line <= self.end_line
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("python source does not parse cleanly (first error near line {line})")]
pub struct ParseFailure {
    pub line: usize,
}

fn first_error(node: Node) -> Option<usize> {
    if node.is_error() || node.is_missing() {
        return Some(node.start_position().row + 1);
    }
    let mut cursor = node.walk();
    let found = node.children(&mut cursor).find_map(first_error);
    found
}

pub fn function_spans(source: &str) -> Result<Vec<FunctionSpan>, ParseFailure> {
    let mut parser = Parser::new();
    parser
        .set_language(&tree_sitter_python::LANGUAGE.into())
        .expect("python grammar is ABI compatible");
    let tree = parser.parse(source, None).ok_or(ParseFailure { line: 1 })?;
    let root = tree.root_node();
    if root.has_error() {
        return Err(ParseFailure {
            line: first_error(root).unwrap_or(1),
        });
    }
    let mut spans = Vec::new();
    collect(root, source, 0, &mut spans);
    spans.sort_by_key(|s| (s.start_byte, s.depth));
    Ok(spans)
}

fn collect(node: Node, source: &str, depth: usize, out: &mut Vec<FunctionSpan>) {
    let mut child_depth = depth;
    if node.kind() == "function_definition" {
        let outer = match node.parent() {
            Some(p) if p.kind() == "decorated_definition" => p,
            _ => node,
        };
        let name = node
            .child_by_field_name("name")
            .and_then(|n| n.utf8_text(source.as_bytes()).ok())
            .unwrap_or("<anonymous>")
            .to_string();
        let start = outer.start_byte();
        let line_start = source[..start].rfind('\n').map_or(0, |i| i + 1);
        out.push(FunctionSpan {
            name,
            start_line: outer.start_position().row + 1,
            end_line: node.end_position().row + 1,
            start_byte: line_start,
            end_byte: node.end_byte(),
            depth,
        });
        child_depth += 1;
    }
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        collect(child, source, child_depth, out);
    }
}

/// The innermost function whose span covers `line`.
pub fn innermost_at(spans: &[FunctionSpan], line: usize) -> Option<&FunctionSpan> {
    spans
        .iter()
        .filter(|s| s.contains(line))
        .max_by_key(|s| (s.depth, s.start_byte))
}
