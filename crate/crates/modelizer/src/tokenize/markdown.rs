//! Structural tokenizer for the Markdown subset.

use super::{
    FormatTokenizer, MappedText, MappedTokenizeState, MaskPolicy, Masker, TokenizeError,
};

pub struct MarkdownTokenizer {
    names: Vec<String>,
}

impl MarkdownTokenizer {
    pub fn new() -> Self {
        MarkdownTokenizer {
            names: vec!["TEXT".to_string(), "URL".to_string()],
        }
    }
}

impl Default for MarkdownTokenizer {
    fn default() -> Self {
        Self::new()
    }
}

impl FormatTokenizer for MarkdownTokenizer {
    fn mapped_tokenize(&self, text: &str, policy: MaskPolicy) -> Result<MappedText, TokenizeError> {
        let mut masker = Masker::new(policy, &self.names);
        masker.reserve_existing(text);
        let mut state = MappedTokenizeState::new(masker);
        let mut run = String::new();
        let mut pos = 0;
        let mut line_start = true;
        let mut in_url = false;

        while pos < text.len() {
            let rest = &text[pos..];
            let marker: Option<&str> = if rest.starts_with('\n') {
                Some("\n")
            } else if line_start && rest.starts_with("# ") {
                Some("# ")
            } else if rest.starts_with("**") {
                Some("**")
            } else if rest.starts_with('*') {
                Some("*")
            } else if rest.starts_with('`') {
                Some("`")
            } else if rest.starts_with("](") {
                Some("](")
            } else if rest.starts_with('[') {
                Some("[")
            } else if rest.starts_with(')') && in_url {
                Some(")")
            } else {
                None
            };

            if let Some(marker) = marker {
                state.flush_run(&mut run, if in_url { "URL" } else { "TEXT" });
                state.push_structural(marker);
                match marker {
                    "](" => in_url = true,
                    ")" => in_url = false,
                    _ => {}
                }
                line_start = marker == "\n";
                pos += marker.len();
            } else {
                let c = rest.chars().next().unwrap();
                if matches!(c, '<' | '>' | '&' | '#') {
                    return Err(TokenizeError::TokenizeFailure {
                        position: pos,
                        msg: format!("character {c:?} outside the supported subset"),
                    });
                }
                run.push(c);
                if !c.is_whitespace() {
                    line_start = false;
                }
                pos += c.len_utf8();
            }
        }
        state.flush_run(&mut run, if in_url { "URL" } else { "TEXT" });
        Ok(state.finish())
    }

    fn placeholder_names(&self) -> &[String] {
        &self.names
    }
}

#[cfg(test)]
mod tests {
    use super::super::{mapped_tokenize, reconstruct, Format, Instantiation};
    use super::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn synthetic_inline_sequence() {
        let text = "TEXT_1 [TEXT_2](URL_1) **TEXT_3**\n";
        let mt = mapped_tokenize(text, Format::Markdown, MaskPolicy::Optimizing).unwrap();
        assert_eq!(
            mt.tokens,
            toks(&["TEXT_1", "[", "TEXT_2", "](", "URL_1", ")", "**", "TEXT_3", "**", "\n"])
        );
        let rebuilt =
            reconstruct(&mt.tokens, Some(&mt.map), Instantiation::Early, Some(&mt.layout))
                .unwrap();
        assert_eq!(rebuilt, text);
    }

    #[test]
    fn real_content_is_masked() {
        let text = "# My heading\nSome body text\n";
        let mt = mapped_tokenize(text, Format::Markdown, MaskPolicy::Optimizing).unwrap();
        assert_eq!(mt.tokens, toks(&["# ", "TEXT_1", "\n", "TEXT_2", "\n"]));
        assert_eq!(mt.map.get("TEXT_1"), Some("My heading"));
        assert_eq!(mt.map.get("TEXT_2"), Some("Some body text"));
        let rebuilt =
            reconstruct(&mt.tokens, Some(&mt.map), Instantiation::Late, Some(&mt.layout)).unwrap();
        assert_eq!(rebuilt, text);
    }

    #[test]
    fn heading_marker_only_at_line_start() {
        let mt = mapped_tokenize("a # b\n", Format::Markdown, MaskPolicy::Optimizing);
        // '#' mid-line is out of subset.
        assert!(mt.is_err());
    }

    #[test]
    fn url_context_masks_with_url() {
        let text = "[click me](https://example.com/x)\n";
        let mt = mapped_tokenize(text, Format::Markdown, MaskPolicy::Optimizing).unwrap();
        assert_eq!(
            mt.tokens,
            toks(&["[", "TEXT_1", "](", "URL_1", ")", "\n"])
        );
        assert_eq!(mt.map.get("URL_1"), Some("https://example.com/x"));
        let rebuilt =
            reconstruct(&mt.tokens, Some(&mt.map), Instantiation::Early, Some(&mt.layout))
                .unwrap();
        assert_eq!(rebuilt, text);
    }

    #[test]
    fn out_of_subset_character_fails_with_position() {
        match mapped_tokenize("ab&c\n", Format::Markdown, MaskPolicy::Optimizing) {
            Err(TokenizeError::TokenizeFailure { position, .. }) => assert_eq!(position, 2),
            other => panic!("expected TokenizeFailure, got {other:?}"),
        }
    }

    #[test]
    fn whitespace_preserved_via_layout() {
        let text = "  spaced   words  \n";
        let mt = mapped_tokenize(text, Format::Markdown, MaskPolicy::Optimizing).unwrap();
        assert_eq!(mt.tokens, toks(&["TEXT_1", "\n"]));
        assert_eq!(mt.map.get("TEXT_1"), Some("spaced   words"));
        let rebuilt =
            reconstruct(&mt.tokens, Some(&mt.map), Instantiation::Early, Some(&mt.layout))
                .unwrap();
        assert_eq!(rebuilt, text);
    }
}
