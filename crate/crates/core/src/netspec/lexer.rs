//! Tokenizer for the prototxt subset: identifiers, double-quoted strings,
//! numbers, `:`, `{`, `}` and `#` line comments.

use super::diagnostic::{Diagnostic, Pos, Span, Stage};

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Ident(String),
    Str(String),
    Number(String),
    Colon,
    LBrace,
    RBrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}

/// Result of lexing; in tolerant mode an unterminated trailing string is
/// reported through `open_string` instead of an error.
#[derive(Debug, Default)]
pub struct Lexed {
    pub tokens: Vec<Token>,
    pub errors: Vec<Diagnostic>,
    pub open_string: Option<Pos>,
}

struct Cursor<'a> {
    src: &'a str,
    pos: Pos,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos.offset..].chars().next()
    }

    fn peek2(&self) -> Option<char> {
        let mut it = self.src[self.pos.offset..].chars();
        it.next();
        it.next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos.offset += c.len_utf8();
        if c == '\n' {
            self.pos.line += 1;
            self.pos.column = 1;
        } else {
            self.pos.column += 1;
        }
        Some(c)
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

pub fn lex(src: &str) -> Lexed {
    lex_inner(src, false)
}

/// Lexes a possibly incomplete document (editor prefix).
pub fn lex_tolerant(src: &str) -> Lexed {
    lex_inner(src, true)
}

fn lex_inner(src: &str, tolerant: bool) -> Lexed {
    let mut cur = Cursor { src, pos: Pos::start() };
    let mut out = Lexed::default();

    while let Some(c) = cur.peek() {
        let start = cur.pos;
        match c {
            c if c.is_whitespace() => {
                cur.bump();
            }
            '#' => {
                while let Some(c) = cur.peek() {
                    if c == '\n' {
                        break;
                    }
                    cur.bump();
                }
            }
            ':' | '{' | '}' => {
                cur.bump();
                let kind = match c {
                    ':' => TokenKind::Colon,
                    '{' => TokenKind::LBrace,
                    _ => TokenKind::RBrace,
                };
                out.tokens.push(Token { kind, span: Span::new(start, cur.pos) });
            }
            '"' => {
                cur.bump();
                let mut value = String::new();
                let mut closed = false;
                while let Some(c) = cur.peek() {
                    match c {
                        '"' => {
                            cur.bump();
                            closed = true;
                            break;
                        }
                        '\n' => break,
                        '\\' => {
                            cur.bump();
                            let esc_start = cur.pos;
                            match cur.bump() {
                                Some('n') => value.push('\n'),
                                Some('t') => value.push('\t'),
                                Some('\\') => value.push('\\'),
                                Some('"') => value.push('"'),
                                Some(other) => {
                                    out.errors.push(Diagnostic::error(
                                        Stage::Lexical,
                                        Span::new(esc_start, cur.pos),
                                        format!("unknown escape sequence '\\{other}'"),
                                    ));
                                }
                                None => break,
                            }
                        }
                        _ => {
                            value.push(c);
                            cur.bump();
                        }
                    }
                }
                if closed {
                    out.tokens.push(Token { kind: TokenKind::Str(value), span: Span::new(start, cur.pos) });
                } else if tolerant && cur.peek().is_none() {
                    out.open_string = Some(start);
                } else {
                    out.errors.push(Diagnostic::error(
                        Stage::Lexical,
                        Span::new(start, cur.pos),
                        "unterminated string literal",
                    ));
                }
            }
            c if c.is_ascii_digit()
                || ((c == '-' || c == '+' || c == '.')
                    && cur.peek2().is_some_and(|d| d.is_ascii_digit() || d == '.')) =>
            {
                let text = lex_number(&mut cur);
                let span = Span::new(start, cur.pos);
                if text.parse::<f64>().is_ok() {
                    out.tokens.push(Token { kind: TokenKind::Number(text), span });
                } else {
                    out.errors.push(Diagnostic::error(Stage::Lexical, span, format!("malformed number '{text}'")));
                }
            }
            c if is_ident_start(c) => {
                let mut text = String::new();
                while let Some(c) = cur.peek() {
                    if !is_ident_continue(c) {
                        break;
                    }
                    text.push(c);
                    cur.bump();
                }
                out.tokens.push(Token { kind: TokenKind::Ident(text), span: Span::new(start, cur.pos) });
            }
            other => {
                cur.bump();
                out.errors.push(Diagnostic::error(
                    Stage::Lexical,
                    Span::new(start, cur.pos),
                    format!("unexpected character '{}'", other.escape_default()),
                ));
            }
        }
    }
    out
}

fn lex_number(cur: &mut Cursor<'_>) -> String {
    let mut text = String::new();
    if let Some(c @ ('-' | '+')) = cur.peek() {
        text.push(c);
        cur.bump();
    }
    // Greedy over the characters a number can contain; validity is checked
    // by the caller so `1.2.3` becomes one malformed token.
    while let Some(c) = cur.peek() {
        let prev_is_exp = text.ends_with(['e', 'E']);
        if c.is_ascii_alphanumeric() || c == '.' || c == '_' || ((c == '-' || c == '+') && prev_is_exp) {
            text.push(c);
            cur.bump();
        } else {
            break;
        }
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<TokenKind> {
        let l = lex(src);
        assert!(l.errors.is_empty(), "{:?}", l.errors);
        l.tokens.into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn basic_tokens() {
        assert_eq!(
            kinds("layer { num_output: 4 } # trailing\nname: \"a b\""),
            vec![
                TokenKind::Ident("layer".into()),
                TokenKind::LBrace,
                TokenKind::Ident("num_output".into()),
                TokenKind::Colon,
                TokenKind::Number("4".into()),
                TokenKind::RBrace,
                TokenKind::Ident("name".into()),
                TokenKind::Colon,
                TokenKind::Str("a b".into()),
            ]
        );
    }

    #[test]
    fn numbers_with_sign_and_exponent() {
        assert_eq!(
            kinds("-1 1e-3 .5 +2.0"),
            vec![
                TokenKind::Number("-1".into()),
                TokenKind::Number("1e-3".into()),
                TokenKind::Number(".5".into()),
                TokenKind::Number("+2.0".into()),
            ]
        );
    }

    #[test]
    fn spans_are_one_based() {
        let l = lex("a\n  bc");
        assert_eq!(l.tokens[1].span.start, Pos { line: 2, column: 3, offset: 4 });
        assert_eq!(l.tokens[1].span.end, Pos { line: 2, column: 5, offset: 6 });
    }

    #[test]
    fn bad_character_is_lexical_error() {
        let l = lex("name: $");
        assert_eq!(l.errors.len(), 1);
        assert_eq!(l.errors[0].stage, Stage::Lexical);
        assert_eq!(l.errors[0].span.text("name: $"), "$");
    }

    #[test]
    fn unterminated_string() {
        let l = lex("name: \"abc");
        assert_eq!(l.errors.len(), 1);
        let t = lex_tolerant("name: \"abc");
        assert!(t.errors.is_empty());
        assert_eq!(t.open_string.map(|p| p.offset), Some(6));
    }

    #[test]
    fn malformed_number() {
        let l = lex("pad: 1.2.3");
        assert_eq!(l.errors.len(), 1);
        assert!(l.errors[0].message.contains("malformed number"));
    }
}
