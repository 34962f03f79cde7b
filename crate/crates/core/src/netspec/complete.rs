//! Cursor-context suggestions for the net editor.

use super::lexer::{lex_tolerant, TokenKind};
use super::net::{kind_param_keys, LayerKind};

const TOP_KEYS: &[&str] = &["input", "layer", "name"];
const LAYER_KEYS: &[&str] =
    &["bottom", "convolution_param", "data_param", "inner_product_param", "name", "pooling_param", "top", "type"];

/// Whether a key opens a `{ }` scope in the net grammar.
pub fn is_scope_key(key: &str) -> bool {
    key == "layer" || key.ends_with("_param")
}

fn scope_keys(stack: &[String]) -> Vec<&'static str> {
    match stack {
        [] => TOP_KEYS.to_vec(),
        [l] if l == "layer" => LAYER_KEYS.to_vec(),
        [l, p] if l == "layer" => {
            let kind = match p.as_str() {
                "data_param" => LayerKind::Data,
                "convolution_param" => LayerKind::Convolution,
                "pooling_param" => LayerKind::Pooling,
                "inner_product_param" => LayerKind::InnerProduct,
                _ => return Vec::new(),
            };
            kind_param_keys(kind).to_vec()
        }
        _ => Vec::new(),
    }
}

fn value_options(key: &str) -> Vec<&'static str> {
    match key {
        "type" => LayerKind::ALL.iter().map(|k| k.as_str()).collect(),
        "pool" => vec!["AVE", "MAX"],
        _ => Vec::new(),
    }
}

/// Byte offset of a 1-based (line, column) position, clamped to the text.
pub fn offset_of(source: &str, line: u32, column: u32) -> usize {
    let mut cur_line = 1;
    let mut cur_col = 1;
    for (i, c) in source.char_indices() {
        if cur_line > line || (cur_line == line && cur_col >= column) {
            return i;
        }
        if c == '\n' {
            if cur_line == line {
                return i;
            }
            cur_line += 1;
            cur_col = 1;
        } else {
            cur_col += 1;
        }
    }
    source.len()
}

/// Legal keys or enum values at `cursor` (1-based line, column), sorted.
pub fn completion_context(source: &str, cursor: (u32, u32)) -> Vec<String> {
    let offset = offset_of(source, cursor.0, cursor.1);
    let prefix = &source[..offset];
    let lexed = lex_tolerant(prefix);
    let fallback = || TOP_KEYS.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    if !lexed.errors.is_empty() {
        return fallback();
    }

    let mut stack: Vec<String> = Vec::new();
    let mut key: Option<String> = None;
    let mut after_colon = false;
    // Key of a value token that ends exactly at the cursor (partially typed).
    let mut touching_value: Option<String> = None;

    for tok in &lexed.tokens {
        touching_value = None;
        match &tok.kind {
            TokenKind::Colon => after_colon = true,
            TokenKind::LBrace => {
                stack.push(key.take().unwrap_or_default());
                after_colon = false;
            }
            TokenKind::RBrace => {
                if stack.pop().is_none() {
                    return fallback();
                }
                key = None;
                after_colon = false;
            }
            TokenKind::Ident(s) if !after_colon => key = Some(s.clone()),
            TokenKind::Ident(_) | TokenKind::Str(_) | TokenKind::Number(_) => {
                if after_colon {
                    if tok.span.end.offset == offset {
                        touching_value = key.clone();
                    }
                    key = None;
                    after_colon = false;
                } else {
                    return fallback();
                }
            }
        }
    }

    let mut out: Vec<&str> = match (lexed.open_string, touching_value, after_colon, &key) {
        (Some(_), _, true, Some(k)) => value_options(k),
        (None, Some(k), _, _) => value_options(&k),
        (None, None, true, Some(k)) => value_options(k),
        (Some(_), _, _, _) => Vec::new(),
        _ => scope_keys(&stack),
    };
    out.sort_unstable();
    out.into_iter().map(String::from).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at_marker(doc: &str) -> Vec<String> {
        let offset = doc.find('|').unwrap();
        let text = doc.replacen('|', "", 1);
        let before = &text[..offset];
        let line = before.matches('\n').count() as u32 + 1;
        let column = before.rsplit('\n').next().unwrap().chars().count() as u32 + 1;
        completion_context(&text, (line, column))
    }

    #[test]
    fn inside_convolution_param() {
        assert_eq!(
            at_marker("layer { name: \"c\" convolution_param { | } }"),
            ["kernel_size", "num_output", "pad", "stride"]
        );
    }

    #[test]
    fn empty_document() {
        assert_eq!(completion_context("", (1, 1)), ["input", "layer", "name"]);
    }

    #[test]
    fn layer_type_value() {
        let got = at_marker("layer { type: \"|\" }");
        assert_eq!(
            got,
            ["Accuracy", "Convolution", "Data", "InnerProduct", "Pooling", "ReLU", "Softmax", "SoftmaxWithLoss"]
        );
    }

    #[test]
    fn layer_scope_and_partial_key() {
        let expected = LAYER_KEYS.to_vec();
        assert_eq!(at_marker("layer {\n  |\n}"), expected);
        assert_eq!(at_marker("layer {\n  na|\n}"), expected);
        assert_eq!(at_marker("layer { name: \"a\" } |"), TOP_KEYS.to_vec());
    }

    #[test]
    fn pool_values_and_partial_value() {
        assert_eq!(at_marker("layer { pooling_param { pool: | } }"), ["AVE", "MAX"]);
        assert_eq!(at_marker("layer { pooling_param { pool: MA| } }"), ["AVE", "MAX"]);
        assert!(at_marker("layer { pooling_param { stride: | } }").is_empty());
    }

    #[test]
    fn broken_prefix_falls_back_to_top_level() {
        assert_eq!(at_marker("} } |"), TOP_KEYS.to_vec());
        assert_eq!(at_marker("layer { $ |"), TOP_KEYS.to_vec());
    }

    #[test]
    fn offset_clamps() {
        assert_eq!(offset_of("ab\ncd", 1, 99), 2);
        assert_eq!(offset_of("ab\ncd", 9, 1), 5);
        assert_eq!(offset_of("ab\ncd", 2, 2), 4);
    }
}
