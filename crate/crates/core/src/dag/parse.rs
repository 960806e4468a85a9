//! Text format: `NAME;` declares a node, `A -> B;` declares an edge and
//! `#` starts a comment that runs to the end of the line.

use super::{Dag, DagError};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Arrow,
    Semi,
}

struct Lexed {
    tok: Tok,
    line: usize,
    column: usize,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> DagError {
    DagError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Lexed>, DagError> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let chars: Vec<char> = raw.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let column = i + 1;
            if c == '#' {
                break;
            } else if c.is_whitespace() {
                i += 1;
            } else if c == ';' {
                out.push(Lexed { tok: Tok::Semi, line, column });
                i += 1;
            } else if c == '-' {
                if chars.get(i + 1) == Some(&'>') {
                    out.push(Lexed { tok: Tok::Arrow, line, column });
                    i += 2;
                } else {
                    return Err(syntax(line, column, "expected `->`"));
                }
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let name: String = chars[start..i].iter().collect();
                out.push(Lexed { tok: Tok::Ident(name), line, column });
            } else {
                return Err(syntax(line, column, format!("unexpected character `{c}`")));
            }
        }
    }
    Ok(out)
}

/// Parses the DAG text format. Statements may appear in any order, so an
/// edge can precede the declaration of its endpoints.
pub fn parse_dag(text: &str) -> Result<Dag, DagError> {
    let toks = lex(text)?;
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut i = 0;
    let eof = || {
        let line = text.lines().count().max(1);
        let column = text.lines().last().map_or(0, |l| l.chars().count()) + 1;
        syntax(line, column, "unexpected end of input; expected `;`")
    };
    while i < toks.len() {
        let first = &toks[i];
        let Tok::Ident(a) = &first.tok else {
            return Err(syntax(first.line, first.column, "expected a node name"));
        };
        match toks.get(i + 1) {
            Some(Lexed { tok: Tok::Semi, .. }) => {
                nodes.push(a.clone());
                i += 2;
            }
            Some(Lexed { tok: Tok::Arrow, .. }) => {
                let b = match toks.get(i + 2) {
                    Some(Lexed { tok: Tok::Ident(b), .. }) => b.clone(),
                    Some(t) => return Err(syntax(t.line, t.column, "expected a node name after `->`")),
                    None => return Err(eof()),
                };
                match toks.get(i + 3) {
                    Some(Lexed { tok: Tok::Semi, .. }) => {}
                    Some(t) => return Err(syntax(t.line, t.column, "expected `;`")),
                    None => return Err(eof()),
                }
                edges.push((a.clone(), b));
                i += 4;
            }
            Some(t) => return Err(syntax(t.line, t.column, "expected `;` or `->`")),
            None => return Err(eof()),
        }
    }
    Dag::new(nodes, edges)
}

/// Canonical rendering: one node declaration per line, then one edge per
/// line, both in construction order.
pub fn render(dag: &Dag) -> String {
    let mut out = String::new();
    for n in dag.nodes() {
        out.push_str(n);
        out.push_str(";\n");
    }
    for (a, b) in dag.edges() {
        out.push_str(&format!("{a} -> {b};\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_graph() {
        let d = parse_dag("A; B; A -> B;").unwrap();
        assert_eq!(d, Dag::new(["A", "B"], [("A", "B")]).unwrap());
        assert_eq!(d, parse_dag("A -> B;\n# comment\nB;\nA; # trailing").unwrap());
    }

    #[test]
    fn two_cycle() {
        assert!(matches!(
            parse_dag("A; B; A -> B; B -> A;"),
            Err(DagError::Cycle(_))
        ));
    }

    #[test]
    fn syntax_errors_carry_position() {
        assert_eq!(
            parse_dag("A;\nB -> ;").unwrap_err(),
            DagError::Syntax { line: 2, column: 6, message: "expected a node name after `->`".into() }
        );
        assert!(matches!(parse_dag("A"), Err(DagError::Syntax { line: 1, .. })));
        assert!(matches!(
            parse_dag("A;\n  B - C;"),
            Err(DagError::Syntax { line: 2, column: 5, .. })
        ));
        assert!(matches!(parse_dag("A; 9;"), Err(DagError::Syntax { column: 4, .. })));
    }

    #[test]
    fn undeclared_and_duplicate() {
        assert!(matches!(parse_dag("A; A -> B;"), Err(DagError::UndeclaredNode { .. })));
        assert!(matches!(parse_dag("A; A;"), Err(DagError::DuplicateNode(_))));
    }

    #[test]
    fn reference_graph_shape() {
        let d = parse_dag(super::super::FRAMINGHAM_DAG).unwrap();
        assert_eq!(d.nodes().len(), 11);
        assert_eq!(d.edges().len(), 24);
    }
}
