//! Structural tokenizer for the HTML subset emitted by the builtin
//! converter.
//!
//! Anchors are split into an opening `<a` token and a compound
//! `href="URL_k">` token whose placeholder is masked like any other
//! content. Tags or attributes outside the subset fail with a position
//! diagnostic.

use super::{
    FormatTokenizer, MappedText, MappedTokenizeState, MaskPolicy, Masker, TokenizeError,
};

const TAGS: [&str; 7] = ["h1", "p", "strong", "em", "code", "a", "i"];

pub struct HtmlTokenizer {
    names: Vec<String>,
}

impl HtmlTokenizer {
    pub fn new() -> Self {
        HtmlTokenizer {
            names: vec!["TEXT".to_string(), "URL".to_string()],
        }
    }
}

impl Default for HtmlTokenizer {
    fn default() -> Self {
        Self::new()
    }
}

impl FormatTokenizer for HtmlTokenizer {
    fn mapped_tokenize(&self, text: &str, policy: MaskPolicy) -> Result<MappedText, TokenizeError> {
        let mut masker = Masker::new(policy, &self.names);
        masker.reserve_existing(text);
        let mut state = MappedTokenizeState::new(masker);
        let mut run = String::new();
        let mut pos = 0;

        while pos < text.len() {
            if text[pos..].starts_with('<') {
                state.flush_run(&mut run, "TEXT");
                pos = tokenize_tag(text, pos, &mut state)?;
            } else if text[pos..].starts_with('\n') {
                // Line breaks separate converter output lines; keep them as
                // structural tokens so reconstruction without a layout still
                // preserves them.
                state.flush_run(&mut run, "TEXT");
                state.push_structural("\n");
                pos += 1;
            } else {
                let c = text[pos..].chars().next().unwrap();
                run.push(c);
                pos += c.len_utf8();
            }
        }
        state.flush_run(&mut run, "TEXT");
        Ok(state.finish())
    }

    fn placeholder_names(&self) -> &[String] {
        &self.names
    }
}

fn fail(position: usize, msg: impl Into<String>) -> TokenizeError {
    TokenizeError::TokenizeFailure {
        position,
        msg: msg.into(),
    }
}

/// Tokenizes one tag starting at `pos` (which points at `<`); returns the
/// position just past the closing `>`.
fn tokenize_tag(
    text: &str,
    pos: usize,
    state: &mut MappedTokenizeState,
) -> Result<usize, TokenizeError> {
    let rest = &text[pos..];
    let closing = rest.starts_with("</");
    let name_start = if closing { 2 } else { 1 };
    let name_len = rest[name_start..]
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric())
        .count();
    let name = &rest[name_start..name_start + name_len];
    if !TAGS.contains(&name) {
        return Err(fail(pos, format!("tag <{name}> outside the supported subset")));
    }
    let mut cursor = name_start + name_len;

    if closing {
        if !rest[cursor..].starts_with('>') {
            return Err(fail(pos + cursor, "malformed closing tag"));
        }
        state.push_structural(&format!("</{name}>"));
        return Ok(pos + cursor + 1);
    }

    if rest[cursor..].starts_with('>') {
        state.push_structural(&format!("<{name}>"));
        return Ok(pos + cursor + 1);
    }

    // Attributes: only `href` on anchors is in subset.
    let ws_len = rest[cursor..].chars().take_while(|c| c.is_whitespace()).count();
    if ws_len == 0 {
        return Err(fail(pos + cursor, "malformed tag"));
    }
    let ws: String = rest[cursor..cursor + ws_len].to_string();
    cursor += ws_len;
    if name != "a" || !rest[cursor..].starts_with("href=\"") {
        return Err(fail(pos + cursor, "attribute outside the supported subset"));
    }
    cursor += "href=\"".len();
    let value_len = rest[cursor..]
        .find('"')
        .ok_or_else(|| fail(pos + cursor, "unterminated attribute value"))?;
    let value = rest[cursor..cursor + value_len].to_string();
    cursor += value_len + 1;
    if !rest[cursor..].starts_with('>') {
        return Err(fail(pos + cursor, "attribute outside the supported subset"));
    }
    cursor += 1;

    state.push_structural("<a");
    state.set_pending_gap(ws);
    state.push_compound("URL", &value, |p| format!("href=\"{p}\">"));
    Ok(pos + cursor)
}
