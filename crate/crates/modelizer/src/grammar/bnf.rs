//! Plain-text BNF dialect for grammar files.
//!
//! ```text
//! %placeholders: TEXT URL
//!
//! <start> ::= <block>
//! <block> ::= "**" TEXT "**" @p=0.25 | <link>
//!     | "`" TEXT "`"
//! <link> ::= "[" TEXT "](" URL ")"
//! ```
//!
//! Rules are `<name> ::= alternative | alternative`; alternatives may wrap
//! onto following lines starting with `|`. Inside an alternative, `<name>`
//! references a rule, `"..."` is a literal terminal (escapes: `\n`, `\t`,
//! `\r`, `\\`, `\"`), a bare word is a placeholder declared in the
//! `%placeholders:` header, and `""` alone is the empty expansion. A
//! trailing `@p=0.25` assigns that alternative an explicit probability.
//! Lines starting with `#` are comments. The first rule's non-terminal is
//! the start symbol.

use super::{Alternative, Grammar, GrammarError, Symbol};
use std::collections::{BTreeMap, BTreeSet};

pub fn parse_bnf(text: &str) -> Result<Grammar, GrammarError> {
    let mut placeholders = BTreeSet::new();
    let mut rules: BTreeMap<String, Vec<Alternative>> = BTreeMap::new();
    let mut start_symbol: Option<String> = None;
    let mut current_rule: Option<String> = None;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("%placeholders:") {
            for name in rest.split_whitespace() {
                placeholders.insert(name.to_string());
            }
            continue;
        }
        let body = if let Some((head, tail)) = line.split_once("::=") {
            let head = head.trim();
            let name = head
                .strip_prefix('<')
                .and_then(|h| h.strip_suffix('>'))
                .ok_or_else(|| GrammarError::Syntax {
                    line: line_no,
                    msg: format!("rule head must be <name>, got {head:?}"),
                })?;
            if rules.contains_key(name) {
                return Err(GrammarError::Syntax {
                    line: line_no,
                    msg: format!("rule <{name}> defined twice"),
                });
            }
            rules.insert(name.to_string(), Vec::new());
            start_symbol.get_or_insert_with(|| name.to_string());
            current_rule = Some(name.to_string());
            tail.trim()
        } else if line.starts_with('|') {
            line.trim_start_matches('|').trim()
        } else {
            return Err(GrammarError::Syntax {
                line: line_no,
                msg: "expected `<name> ::= ...` or continuation starting with `|`".into(),
            });
        };
        let rule = current_rule.as_ref().ok_or_else(|| GrammarError::Syntax {
            line: line_no,
            msg: "alternative before any rule head".into(),
        })?;
        for alt_text in split_alternatives(body) {
            let alt = parse_alternative(&alt_text, &placeholders, line_no)?;
            rules.get_mut(rule).unwrap().push(alt);
        }
    }

    let start_symbol = start_symbol.ok_or(GrammarError::Syntax {
        line: 0,
        msg: "grammar defines no rules".into(),
    })?;
    Ok(Grammar {
        start_symbol,
        rules,
        placeholders,
    })
}

/// Splits on `|` outside of quoted literals. An empty body yields nothing
/// (continuation lines starting with `|` leave an empty prefix).
fn split_alternatives(body: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut current = String::new();
    let mut in_quotes = false;
    let mut escaped = false;
    for ch in body.chars() {
        if in_quotes {
            current.push(ch);
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_quotes = false;
            }
        } else if ch == '"' {
            in_quotes = true;
            current.push(ch);
        } else if ch == '|' {
            parts.push(current.trim().to_string());
            current.clear();
        } else {
            current.push(ch);
        }
    }
    parts.push(current.trim().to_string());
    parts.retain(|p| !p.is_empty());
    parts
}

fn parse_alternative(
    text: &str,
    placeholders: &BTreeSet<String>,
    line: usize,
) -> Result<Alternative, GrammarError> {
    let mut symbols = Vec::new();
    let mut probability = None;
    let mut rest = text;
    while !rest.is_empty() {
        rest = rest.trim_start();
        if rest.is_empty() {
            break;
        }
        if let Some(tail) = rest.strip_prefix("@p=") {
            let (num, after) = tail.split_once(char::is_whitespace).unwrap_or((tail, ""));
            let p: f64 = num.parse().map_err(|_| GrammarError::Syntax {
                line,
                msg: format!("bad probability {num:?}"),
            })?;
            if !(0.0 < p && p <= 1.0) {
                return Err(GrammarError::Syntax {
                    line,
                    msg: format!("probability {p} outside (0, 1]"),
                });
            }
            probability = Some(p);
            rest = after;
        } else if rest.starts_with('<') {
            let end = rest.find('>').ok_or_else(|| GrammarError::Syntax {
                line,
                msg: "unterminated <non-terminal>".into(),
            })?;
            symbols.push(Symbol::NonTerminal(rest[1..end].to_string()));
            rest = &rest[end + 1..];
        } else if rest.starts_with('"') {
            let (literal, after) = parse_quoted(rest, line)?;
            if !literal.is_empty() {
                symbols.push(Symbol::Terminal(literal));
            }
            rest = after;
        } else {
            let end = rest
                .find(char::is_whitespace)
                .unwrap_or(rest.len());
            let word = &rest[..end];
            if !placeholders.contains(word) {
                return Err(GrammarError::Syntax {
                    line,
                    msg: format!("bare word {word:?} is not a declared placeholder"),
                });
            }
            symbols.push(Symbol::Placeholder(word.to_string()));
            rest = &rest[end..];
        }
    }
    Ok(Alternative {
        symbols,
        probability,
    })
}

fn parse_quoted<'a>(text: &'a str, line: usize) -> Result<(String, &'a str), GrammarError> {
    debug_assert!(text.starts_with('"'));
    let mut out = String::new();
    let mut chars = text[1..].char_indices();
    while let Some((i, ch)) = chars.next() {
        match ch {
            '"' => return Ok((out, &text[1 + i + 1..])),
            '\\' => match chars.next() {
                Some((_, 'n')) => out.push('\n'),
                Some((_, 't')) => out.push('\t'),
                Some((_, 'r')) => out.push('\r'),
                Some((_, '\\')) => out.push('\\'),
                Some((_, '"')) => out.push('"'),
                other => {
                    return Err(GrammarError::Syntax {
                        line,
                        msg: format!("bad escape in literal: {other:?}"),
                    })
                }
            },
            _ => out.push(ch),
        }
    }
    Err(GrammarError::Syntax {
        line,
        msg: "unterminated string literal".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_rules_probabilities_and_placeholders() {
        let g = parse_bnf(concat!(
            "%placeholders: TEXT URL\n",
            "# comment\n",
            "<start> ::= <inline>\n",
            "<inline> ::= TEXT @p=0.4 | \"**\" TEXT \"**\"\n",
            "    | \"[\" TEXT \"](\" URL \")\"\n",
        ))
        .unwrap();
        assert_eq!(g.start_symbol, "start");
        assert_eq!(g.rules["inline"].len(), 3);
        assert_eq!(g.rules["inline"][0].probability, Some(0.4));
        assert_eq!(
            g.rules["inline"][2].symbols[3],
            Symbol::Placeholder("URL".into())
        );
        g.validate().unwrap();
    }

    #[test]
    fn empty_literal_is_empty_expansion() {
        let g = parse_bnf("<s> ::= \"\" | \"a\"\n").unwrap();
        assert!(g.rules["s"][0].symbols.is_empty());
    }

    #[test]
    fn escapes_in_literals() {
        let g = parse_bnf("<s> ::= \"a\\n\\\"b\\\\\"\n").unwrap();
        assert_eq!(g.rules["s"][0].symbols[0], Symbol::Terminal("a\n\"b\\".into()));
    }

    #[test]
    fn undeclared_bare_word_rejected() {
        assert!(matches!(
            parse_bnf("<s> ::= TEXT\n"),
            Err(GrammarError::Syntax { .. })
        ));
    }
}
