//! Builtin deterministic Markdown-to-HTML converter.
//!
//! A strict subset of CommonMark, small enough that every string produced
//! by the bundled grammar is accepted. The complete rule table:
//!
//! | Markdown            | HTML                          |
//! |---------------------|-------------------------------|
//! | `# T` (line start)  | `<h1>T</h1>`                  |
//! | `**T**`             | `<strong>T</strong>`          |
//! | `` `T` ``           | `<code>T</code>`              |
//! | `[T](U)`            | `<a href="U">T</a>`           |
//! | `*T*`               | `<em>T</em>`                  |
//! | `_T_` (word bounds) | `<em>T</em>`                  |
//! | other line          | `<p>...</p>`                  |
//!
//! Every input line must end with a newline; each output line ends with a
//! newline. Blank lines produce no output. Inline markers do not nest.
//! The characters `<`, `>`, `&` and `#` (outside a heading prefix) are out
//! of subset, as are unclosed markers; they fail with a position
//! diagnostic.

use thiserror::Error;

#[derive(Debug, Error)]
#[error("cannot convert at position {position}: {msg}")]
pub struct ConvertError {
    pub position: usize,
    pub msg: String,
}

/// Converts a Markdown-subset document to HTML.
pub fn builtin_convert(markdown: &str) -> Result<String, ConvertError> {
    let mut out = String::new();
    let mut offset = 0;
    for line in split_lines(markdown) {
        if line.is_empty() {
            offset += 1;
            continue;
        }
        if let Some(rest) = line.strip_prefix("# ") {
            out.push_str("<h1>");
            out.push_str(&convert_inline(rest, offset + 2)?);
            out.push_str("</h1>\n");
        } else {
            out.push_str("<p>");
            out.push_str(&convert_inline(line, offset)?);
            out.push_str("</p>\n");
        }
        offset += line.len() + 1;
    }
    Ok(out)
}

/// Splits on `\n`, dropping the final empty piece when the text ends with a
/// newline. An unterminated final line is converted like any other.
fn split_lines(text: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    lines
}

fn convert_inline(line: &str, base: usize) -> Result<String, ConvertError> {
    let bytes = line.as_bytes();
    let mut out = String::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let rest = &line[pos..];
        if rest.starts_with("**") {
            let inner_len = find_closer(rest, 2, "**")
                .ok_or_else(|| err(base + pos, "unclosed **"))?;
            let inner = &rest[2..2 + inner_len];
            check_plain(inner, base + pos + 2)?;
            out.push_str("<strong>");
            out.push_str(inner);
            out.push_str("</strong>");
            pos += 2 + inner_len + 2;
        } else if rest.starts_with('*') {
            let inner_len =
                find_closer(rest, 1, "*").ok_or_else(|| err(base + pos, "unclosed *"))?;
            let inner = &rest[1..1 + inner_len];
            check_plain(inner, base + pos + 1)?;
            out.push_str("<em>");
            out.push_str(inner);
            out.push_str("</em>");
            pos += 1 + inner_len + 1;
        } else if rest.starts_with('`') {
            let inner_len =
                find_closer(rest, 1, "`").ok_or_else(|| err(base + pos, "unclosed `"))?;
            let inner = &rest[1..1 + inner_len];
            check_plain(inner, base + pos + 1)?;
            out.push_str("<code>");
            out.push_str(inner);
            out.push_str("</code>");
            pos += 1 + inner_len + 1;
        } else if rest.starts_with('[') {
            let text_len =
                find_substr(rest, 1, "](").ok_or_else(|| err(base + pos, "unclosed ["))?;
            let text = &rest[1..1 + text_len];
            check_plain(text, base + pos + 1)?;
            let url_start = 1 + text_len + 2;
            let url_len = find_substr(rest, url_start, ")")
                .ok_or_else(|| err(base + pos + url_start, "unclosed link target"))?;
            let url = &rest[url_start..url_start + url_len];
            check_plain(url, base + pos + url_start)?;
            out.push_str("<a href=\"");
            out.push_str(url);
            out.push_str("\">");
            out.push_str(text);
            out.push_str("</a>");
            pos += url_start + url_len + 1;
        } else if rest.starts_with('_') && at_word_boundary_left(line, pos) {
            match find_em_underscore(line, pos) {
                Some(inner_len) => {
                    let inner = &rest[1..1 + inner_len];
                    check_plain(inner, base + pos + 1)?;
                    out.push_str("<em>");
                    out.push_str(inner);
                    out.push_str("</em>");
                    pos += 1 + inner_len + 1;
                }
                None => return Err(err(base + pos, "unclosed _")),
            }
        } else {
            let ch = rest.chars().next().unwrap();
            check_plain_char(ch, base + pos)?;
            out.push(ch);
            pos += ch.len_utf8();
        }
    }
    Ok(out)
}

fn err(position: usize, msg: &str) -> ConvertError {
    ConvertError {
        position,
        msg: msg.to_string(),
    }
}

/// Length of the inner run starting at `from` up to the closing marker.
/// The inner run must be non-empty and free of the marker itself.
fn find_closer(rest: &str, from: usize, marker: &str) -> Option<usize> {
    let inner = &rest[from..];
    let idx = inner.find(marker)?;
    if idx == 0 {
        return None;
    }
    Some(idx)
}

fn find_substr(rest: &str, from: usize, needle: &str) -> Option<usize> {
    rest.get(from..).and_then(|s| s.find(needle))
}

fn at_word_boundary_left(line: &str, pos: usize) -> bool {
    pos == 0
        || line[..pos]
            .chars()
            .next_back()
            .map(|c| !c.is_alphanumeric() && c != '_')
            .unwrap_or(true)
}

/// Closing `_` for emphasis: followed by a non-word character (or end of
/// line) so identifier-augmented placeholders like `TEXT_1` stay literal.
fn find_em_underscore(line: &str, open: usize) -> Option<usize> {
    let inner_start = open + 1;
    for (i, c) in line[inner_start..].char_indices() {
        if c == '_' {
            let after = line[inner_start + i + 1..].chars().next();
            let closes = after.map(|a| !a.is_alphanumeric() && a != '_').unwrap_or(true);
            if closes && i > 0 {
                return Some(i);
            }
        }
    }
    None
}

fn check_plain(text: &str, base: usize) -> Result<(), ConvertError> {
    for (i, c) in text.char_indices() {
        check_plain_char(c, base + i)?;
    }
    Ok(())
}

fn check_plain_char(c: char, position: usize) -> Result<(), ConvertError> {
    if matches!(c, '<' | '>' | '&' | '#') {
        return Err(err(position, "character outside the supported subset"));
    }
    Ok(())
}
