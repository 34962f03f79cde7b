//! Untyped syntax tree: a document is a list of `key: value` / `key { ... }`
//! entries. Net and solver semantics are layered on top of this.

use super::diagnostic::{Diagnostic, Span, Stage};
use super::lexer::{lex, Token, TokenKind};

#[derive(Debug, Clone, PartialEq)]
pub enum ScalarKind {
    Str,
    Number,
    Ident,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scalar {
    pub kind: ScalarKind,
    pub text: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(Scalar),
    Block(Vec<Entry>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub key_span: Span,
    pub value: Value,
    /// Whole entry, key through closing brace or value.
    pub span: Span,
}

impl Entry {
    pub fn value_span(&self) -> Span {
        match &self.value {
            Value::Scalar(s) => s.span,
            Value::Block(_) => self.span,
        }
    }
}

/// Lexes and parses `src` into top-level entries.
pub fn parse_tree(src: &str) -> Result<Vec<Entry>, Vec<Diagnostic>> {
    let lexed = lex(src);
    if !lexed.errors.is_empty() {
        return Err(lexed.errors);
    }
    let mut p = Parser { tokens: &lexed.tokens, idx: 0 };
    let entries = p.entries(None)?;
    Ok(entries)
}

struct Parser<'t> {
    tokens: &'t [Token],
    idx: usize,
}

impl<'t> Parser<'t> {
    fn peek(&self) -> Option<&'t Token> {
        self.tokens.get(self.idx)
    }

    fn next(&mut self) -> Option<&'t Token> {
        let t = self.tokens.get(self.idx);
        self.idx += 1;
        t
    }

    fn end_span(&self) -> Span {
        let end = self.tokens.last().map(|t| t.span.end).unwrap_or_default();
        Span::new(end, end)
    }

    /// Parses entries until EOF (top level) or the `}` closing `open`.
    fn entries(&mut self, open: Option<Span>) -> Result<Vec<Entry>, Vec<Diagnostic>> {
        let mut out = Vec::new();
        loop {
            let Some(tok) = self.next() else {
                return match open {
                    None => Ok(out),
                    Some(span) => {
                        Err(vec![Diagnostic::error(Stage::Syntax, span, "unbalanced scope: '{' is never closed")])
                    }
                };
            };
            let key = match &tok.kind {
                TokenKind::Ident(k) => k.clone(),
                TokenKind::RBrace => {
                    return match open {
                        Some(_) => Ok(out),
                        None => {
                            Err(vec![Diagnostic::error(Stage::Syntax, tok.span, "unbalanced scope: unexpected '}'")])
                        }
                    };
                }
                _ => {
                    return Err(vec![Diagnostic::error(Stage::Syntax, tok.span, "expected a field name")]);
                }
            };
            let key_span = tok.span;
            let mut colon = false;
            if matches!(self.peek().map(|t| &t.kind), Some(TokenKind::Colon)) {
                self.next();
                colon = true;
            }
            let value_tok = match self.next() {
                Some(t) => t,
                None => {
                    return Err(vec![Diagnostic::error(
                        Stage::Syntax,
                        key_span.to(self.end_span()),
                        format!("missing value for '{key}'"),
                    )]);
                }
            };
            let (value, end) = match &value_tok.kind {
                TokenKind::LBrace => {
                    let children = self.entries(Some(value_tok.span))?;
                    let end = self.tokens[self.idx - 1].span;
                    (Value::Block(children), end)
                }
                TokenKind::Str(s) if colon => (scalar(ScalarKind::Str, s, value_tok.span), value_tok.span),
                TokenKind::Number(s) if colon => (scalar(ScalarKind::Number, s, value_tok.span), value_tok.span),
                TokenKind::Ident(s) if colon => (scalar(ScalarKind::Ident, s, value_tok.span), value_tok.span),
                _ if !colon => {
                    return Err(vec![Diagnostic::error(
                        Stage::Syntax,
                        value_tok.span,
                        format!("expected ':' or '{{' after '{key}'"),
                    )]);
                }
                _ => {
                    return Err(vec![Diagnostic::error(
                        Stage::Syntax,
                        value_tok.span,
                        format!("missing value for '{key}'"),
                    )]);
                }
            };
            out.push(Entry { key, key_span, value, span: key_span.to(end) });
        }
    }
}

fn scalar(kind: ScalarKind, text: &str, span: Span) -> Value {
    Value::Scalar(Scalar { kind, text: text.to_string(), span })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_blocks() {
        let t = parse_tree("a: 1 b { c: \"x\" d: MAX e: { } }").unwrap();
        assert_eq!(t.len(), 2);
        let Value::Block(inner) = &t[1].value else { panic!() };
        assert_eq!(inner.len(), 3);
        assert!(matches!(&inner[1].value, Value::Scalar(s) if s.kind == ScalarKind::Ident));
        assert_eq!(t[1].span.text("a: 1 b { c: \"x\" d: MAX e: { } }"), "b { c: \"x\" d: MAX e: { } }");
    }

    #[test]
    fn unclosed_scope_points_at_brace() {
        let src = "layer {\n  name: \"a\"\n";
        let err = parse_tree(src).unwrap_err();
        assert_eq!(err[0].stage, Stage::Syntax);
        assert_eq!(err[0].span.text(src), "{");
    }

    #[test]
    fn stray_close_brace() {
        let src = "name: \"a\" }";
        let err = parse_tree(src).unwrap_err();
        assert!(err[0].message.contains("unexpected '}'"));
        assert_eq!(err[0].span.text(src), "}");
    }

    #[test]
    fn missing_value() {
        let err = parse_tree("name:").unwrap_err();
        assert!(err[0].message.contains("missing value"));
        let err = parse_tree("name: }").unwrap_err();
        assert!(err[0].message.contains("missing value"), "{err:?}");
    }
}
