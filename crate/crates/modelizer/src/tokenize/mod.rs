//! Masked tokenization: structural token streams with content replaced by
//! placeholder tokens, plus the mapping needed to reconstruct the text.

mod html;
mod markdown;
mod subword;
mod vocab;

pub use html::HtmlTokenizer;
pub use markdown::MarkdownTokenizer;
pub use subword::{subword_train, SubwordTokenizer};
pub use vocab::{build_vocabulary, Vocabulary, BOS_ID, EOS_ID, PAD_ID, UNK_ID};

use regex::Regex;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error("cannot tokenize at position {position}: {msg}")]
    TokenizeFailure { position: usize, msg: String },
    #[error("no content bound to placeholder token {0}")]
    UnboundPlaceholder(String),
    #[error("corpus too small to learn {0} subword merges")]
    CorpusTooSmall(usize),
}

/// How placeholder identifiers are assigned during masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskPolicy {
    /// Bare placeholder names, no identifiers; reconstruction pairs
    /// occurrences first-in-first-out.
    Simplified,
    /// Identical content within one document shares one identifier.
    #[default]
    Optimizing,
    /// Every content fragment gets a fresh identifier.
    Exhaustive,
}

impl std::str::FromStr for MaskPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "simplified" => Ok(MaskPolicy::Simplified),
            "optimizing" => Ok(MaskPolicy::Optimizing),
            "exhaustive" => Ok(MaskPolicy::Exhaustive),
            other => Err(format!(
                "unknown masking policy {other:?} (expected simplified, optimizing, or exhaustive)"
            )),
        }
    }
}

pub type TokenSequence = Vec<String>;

/// Ordered placeholder-token to content bindings. Under the SIMPLIFIED
/// policy this is an occurrence list (duplicate keys); under the keyed
/// policies every key is unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlaceholderMap {
    pub entries: Vec<(String, String)>,
}

impl PlaceholderMap {
    pub fn get(&self, token: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == token)
            .map(|(_, v)| v.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Whitespace surrounding each token: `gaps[i]` precedes token `i`,
/// `gaps[len]` trails the document. Content fragments are stored trimmed in
/// the [`PlaceholderMap`]; the trimmed whitespace lives here so
/// reconstruction can reproduce the text exactly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layout {
    pub gaps: Vec<String>,
}

/// The full result of mapped tokenization of one document.
#[derive(Debug, Clone)]
pub struct MappedText {
    pub tokens: TokenSequence,
    pub map: PlaceholderMap,
    pub layout: Layout,
}

/// When placeholder content is substituted during reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Instantiation {
    /// Substitute into individual tokens, then concatenate.
    #[default]
    Early,
    /// Concatenate tokens first, then substitute textually.
    Late,
}

/// A tokenizer for one concrete text format. Instances hold per-document
/// masking state and are single-use per document.
pub trait FormatTokenizer {
    fn mapped_tokenize(&self, text: &str, policy: MaskPolicy) -> Result<MappedText, TokenizeError>;
    /// Placeholder names this format masks with, in priority order.
    fn placeholder_names(&self) -> &[String];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Markdown,
    Html,
}

impl Format {
    pub fn tokenizer(self) -> Box<dyn FormatTokenizer> {
        match self {
            Format::Markdown => Box::new(MarkdownTokenizer::new()),
            Format::Html => Box::new(HtmlTokenizer::new()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Format::Markdown => "markdown",
            Format::Html => "html",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "markdown" | "md" => Ok(Format::Markdown),
            "html" => Ok(Format::Html),
            other => Err(format!("unknown format {other:?} (expected markdown or html)")),
        }
    }
}

/// Convenience entry point: tokenize `text` in the given format.
pub fn mapped_tokenize(
    text: &str,
    format: Format,
    policy: MaskPolicy,
) -> Result<MappedText, TokenizeError> {
    format.tokenizer().mapped_tokenize(text, policy)
}

/// `NAME` or `NAME_k` for one of the given placeholder names.
pub(crate) fn placeholder_pattern(names: &[String]) -> Regex {
    let mut sorted: Vec<&String> = names.iter().collect();
    sorted.sort_by_key(|n| std::cmp::Reverse(n.len()));
    let alternation = sorted
        .iter()
        .map(|n| regex::escape(n))
        .collect::<Vec<_>>()
        .join("|");
    Regex::new(&format!("^(?:{alternation})(?:_[0-9]+)?$")).unwrap()
}

/// Per-document masking state shared by the format tokenizers.
pub(crate) struct Masker {
    policy: MaskPolicy,
    names: Vec<String>,
    pass_through: Regex,
    counters: HashMap<String, usize>,
    by_content: HashMap<(String, String), String>,
    entries: Vec<(String, String)>,
}

impl Masker {
    pub(crate) fn new(policy: MaskPolicy, names: &[String]) -> Self {
        Masker {
            policy,
            names: names.to_vec(),
            pass_through: placeholder_pattern(names),
            counters: HashMap::new(),
            by_content: HashMap::new(),
            entries: Vec::new(),
        }
    }

    /// Reserves every placeholder identifier already present in the raw
    /// document so freshly assigned ids never collide with pass-through
    /// ones, regardless of which comes first.
    pub(crate) fn reserve_existing(&mut self, text: &str) {
        let alternation = self
            .names
            .iter()
            .map(|n| regex::escape(n))
            .collect::<Vec<_>>()
            .join("|");
        let re = Regex::new(&format!(r"\b({alternation})_([0-9]+)\b")).unwrap();
        for caps in re.captures_iter(text) {
            let name = caps.get(1).unwrap().as_str().to_string();
            let id: usize = caps.get(2).unwrap().as_str().parse().unwrap_or(0);
            let counter = self.counters.entry(name).or_insert(0);
            *counter = (*counter).max(id);
        }
    }

    /// Masks one trimmed content fragment with the given placeholder name,
    /// returning the emitted token. Fragments that already are placeholder
    /// tokens (synthetic data) pass through and map to themselves.
    pub(crate) fn mask(&mut self, name: &str, content: &str) -> String {
        if self.pass_through.is_match(content) {
            return self.pass_through_token(content);
        }
        let token = match self.policy {
            MaskPolicy::Simplified => name.to_string(),
            MaskPolicy::Optimizing => {
                let key = (name.to_string(), content.to_string());
                if let Some(existing) = self.by_content.get(&key) {
                    return existing.clone();
                }
                let token = self.fresh(name);
                self.by_content.insert(key, token.clone());
                token
            }
            MaskPolicy::Exhaustive => self.fresh(name),
        };
        self.entries.push((token.clone(), content.to_string()));
        token
    }

    fn pass_through_token(&mut self, content: &str) -> String {
        let (base, id) = match content.split_once('_') {
            Some((base, id)) => (base.to_string(), id.parse::<usize>().ok()),
            None => (content.to_string(), None),
        };
        // Keep fresh identifiers clear of pass-through ones.
        if let Some(id) = id {
            let counter = self.counters.entry(base.clone()).or_insert(0);
            *counter = (*counter).max(id);
        }
        let token = match self.policy {
            MaskPolicy::Simplified => base,
            _ => content.to_string(),
        };
        self.entries.push((token.clone(), content.to_string()));
        token
    }

    fn fresh(&mut self, name: &str) -> String {
        let counter = self.counters.entry(name.to_string()).or_insert(0);
        *counter += 1;
        format!("{name}_{counter}")
    }

    pub(crate) fn into_map(self) -> PlaceholderMap {
        let mut entries = self.entries;
        if matches!(self.policy, MaskPolicy::Optimizing) {
            // Shared tokens appear once, at their first occurrence.
            let mut seen = std::collections::HashSet::new();
            entries.retain(|(k, _)| seen.insert(k.clone()));
        }
        PlaceholderMap { entries }
    }
}

/// Shared incremental state for mapped tokenization: the token stream so
/// far, the whitespace gaps around it, and the masking state.
pub(crate) struct MappedTokenizeState {
    masker: Masker,
    tokens: Vec<String>,
    gaps: Vec<String>,
    pending_gap: String,
}

impl MappedTokenizeState {
    pub(crate) fn new(masker: Masker) -> Self {
        MappedTokenizeState {
            masker,
            tokens: Vec::new(),
            gaps: Vec::new(),
            pending_gap: String::new(),
        }
    }

    /// Masks and emits a pending raw content run.
    pub(crate) fn flush_run(&mut self, run: &mut String, mask_name: &str) {
        if run.is_empty() {
            return;
        }
        emit_content_run(
            run,
            mask_name,
            &mut self.masker,
            &mut self.tokens,
            &mut self.gaps,
            &mut self.pending_gap,
        );
        run.clear();
    }

    pub(crate) fn push_structural(&mut self, token: &str) {
        self.gaps.push(std::mem::take(&mut self.pending_gap));
        self.tokens.push(token.to_string());
    }

    /// Overrides the whitespace preceding the next token (used for the gap
    /// inside split tags, e.g. between `<a` and `href=...`).
    pub(crate) fn set_pending_gap(&mut self, gap: String) {
        self.pending_gap = gap;
    }

    /// Emits a structural token produced from masked content (the HTML
    /// `href="URL_k">` compound). The fragment is masked first; the token is
    /// built from the returned placeholder token.
    pub(crate) fn push_compound(&mut self, mask_name: &str, content: &str, wrap: impl Fn(&str) -> String) {
        let placeholder = self.masker.mask(mask_name, content);
        self.gaps.push(std::mem::take(&mut self.pending_gap));
        self.tokens.push(wrap(&placeholder));
    }

    pub(crate) fn finish(self) -> MappedText {
        let mut gaps = self.gaps;
        gaps.push(self.pending_gap);
        MappedText {
            tokens: self.tokens,
            map: self.masker.into_map(),
            layout: Layout { gaps },
        }
    }
}

/// Splits a raw content run into pass-through placeholder tokens and
/// maskable fragments, pushing tokens and whitespace gaps. `pending_gap`
/// accumulates whitespace that precedes the next token.
pub(crate) fn emit_content_run(
    run: &str,
    mask_name: &str,
    masker: &mut Masker,
    tokens: &mut Vec<String>,
    gaps: &mut Vec<String>,
    pending_gap: &mut String,
) {
    let mut fragment = String::new();
    let mut fragment_gap = String::new();
    let mut chunks = chunk_whitespace(run).into_iter().peekable();
    while let Some(chunk) = chunks.next() {
        if chunk.chars().all(char::is_whitespace) {
            if fragment.is_empty() {
                pending_gap.push_str(chunk);
            } else if chunks.peek().is_some() {
                fragment_gap.push_str(chunk);
            } else {
                // Trailing whitespace of the run.
                flush_fragment(
                    &mut fragment,
                    &mut fragment_gap,
                    mask_name,
                    masker,
                    tokens,
                    gaps,
                    pending_gap,
                );
                pending_gap.push_str(chunk);
            }
        } else if masker.pass_through.is_match(chunk) {
            flush_fragment(
                &mut fragment,
                &mut fragment_gap,
                mask_name,
                masker,
                tokens,
                gaps,
                pending_gap,
            );
            let token = masker.mask(mask_name, chunk);
            gaps.push(std::mem::take(pending_gap));
            tokens.push(token);
        } else {
            fragment.push_str(&fragment_gap);
            fragment_gap.clear();
            fragment.push_str(chunk);
        }
    }
    flush_fragment(
        &mut fragment,
        &mut fragment_gap,
        mask_name,
        masker,
        tokens,
        gaps,
        pending_gap,
    );
}

fn flush_fragment(
    fragment: &mut String,
    fragment_gap: &mut String,
    mask_name: &str,
    masker: &mut Masker,
    tokens: &mut Vec<String>,
    gaps: &mut Vec<String>,
    pending_gap: &mut String,
) {
    if !fragment.is_empty() {
        let token = masker.mask(mask_name, fragment);
        gaps.push(std::mem::take(pending_gap));
        tokens.push(token);
        fragment.clear();
    }
    // Whitespace held back inside the fragment becomes the next gap.
    pending_gap.push_str(fragment_gap);
    fragment_gap.clear();
}

/// Splits into alternating whitespace and non-whitespace chunks.
fn chunk_whitespace(text: &str) -> Vec<&str> {
    let mut chunks = Vec::new();
    let mut start = 0;
    let mut in_ws: Option<bool> = None;
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        match in_ws {
            Some(prev) if prev == ws => {}
            Some(_) => {
                chunks.push(&text[start..i]);
                start = i;
                in_ws = Some(ws);
            }
            None => in_ws = Some(ws),
        }
    }
    if start < text.len() {
        chunks.push(&text[start..]);
    }
    chunks
}

/// Rebuilds text from tokens. With a map, placeholder tokens are replaced
/// by their content (FIFO pairing under SIMPLIFIED); without one they are
/// emitted verbatim. A layout restores the exact whitespace; without one,
/// a single space separates adjacent placeholder tokens so they cannot
/// merge.
pub fn reconstruct(
    tokens: &[String],
    map: Option<&PlaceholderMap>,
    instantiation: Instantiation,
    layout: Option<&Layout>,
) -> Result<String, TokenizeError> {
    let names = default_names();
    let pattern = placeholder_pattern(&names);
    let embedded = Regex::new(r"(?:TEXT|URL)(?:_[0-9]+)?").unwrap();

    match (map, instantiation) {
        (None, _) => Ok(concat_tokens(tokens, layout, &pattern)),
        (Some(map), Instantiation::Early) => {
            let mut fifo = FifoState::new(map);
            let mut out_tokens = Vec::with_capacity(tokens.len());
            for token in tokens {
                let mut replaced = String::new();
                let mut last = 0;
                for m in embedded.find_iter(token) {
                    replaced.push_str(&token[last..m.start()]);
                    let content = fifo.resolve(m.as_str())?;
                    replaced.push_str(&content);
                    last = m.end();
                }
                replaced.push_str(&token[last..]);
                out_tokens.push(replaced);
            }
            Ok(concat_tokens(&out_tokens, layout, &pattern))
        }
        (Some(map), Instantiation::Late) => {
            let text = concat_tokens(tokens, layout, &pattern);
            let mut fifo = FifoState::new(map);
            let mut out = String::new();
            let mut last = 0;
            for m in embedded.find_iter(&text) {
                out.push_str(&text[last..m.start()]);
                out.push_str(&fifo.resolve(m.as_str())?);
                last = m.end();
            }
            out.push_str(&text[last..]);
            Ok(out)
        }
    }
}

fn default_names() -> Vec<String> {
    vec!["TEXT".to_string(), "URL".to_string()]
}

fn concat_tokens(tokens: &[String], layout: Option<&Layout>, pattern: &Regex) -> String {
    let mut out = String::new();
    for (i, token) in tokens.iter().enumerate() {
        match layout {
            Some(l) => out.push_str(l.gaps.get(i).map(String::as_str).unwrap_or("")),
            None => {
                if i > 0 && pattern.is_match(&tokens[i - 1]) && pattern.is_match(token) {
                    out.push(' ');
                }
            }
        }
        out.push_str(token);
    }
    if let Some(l) = layout {
        out.push_str(l.gaps.get(tokens.len()).map(String::as_str).unwrap_or(""));
    }
    out
}

/// Resolves placeholder tokens against a map, tracking FIFO positions for
/// bare (SIMPLIFIED) keys.
struct FifoState<'a> {
    map: &'a PlaceholderMap,
    next: HashMap<String, usize>,
}

impl<'a> FifoState<'a> {
    fn new(map: &'a PlaceholderMap) -> Self {
        FifoState {
            map,
            next: HashMap::new(),
        }
    }

    fn resolve(&mut self, token: &str) -> Result<String, TokenizeError> {
        let start = *self.next.get(token).unwrap_or(&0);
        for (i, (key, value)) in self.map.entries.iter().enumerate().skip(start) {
            if key == token {
                self.next.insert(token.to_string(), i + 1);
                return Ok(value.clone());
            }
        }
        // Keyed tokens may recur in the stream while appearing once in the
        // map (OPTIMIZING reuse); bare SIMPLIFIED keys must pair strictly
        // first-in-first-out.
        if token.contains('_') {
            if let Some(value) = self.map.get(token) {
                return Ok(value.to_string());
            }
        }
        Err(TokenizeError::UnboundPlaceholder(token.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunking_alternates() {
        assert_eq!(chunk_whitespace(" a  bc "), vec![" ", "a", "  ", "bc", " "]);
        assert_eq!(chunk_whitespace(""), Vec::<&str>::new());
    }

    #[test]
    fn optimizing_reuses_identical_content() {
        let names = default_names();
        let mut m = Masker::new(MaskPolicy::Optimizing, &names);
        assert_eq!(m.mask("TEXT", "Foobar"), "TEXT_1");
        assert_eq!(m.mask("TEXT", "other"), "TEXT_2");
        assert_eq!(m.mask("TEXT", "Foobar"), "TEXT_1");
        let map = m.into_map();
        assert_eq!(map.entries.len(), 2);
    }

    #[test]
    fn exhaustive_always_fresh() {
        let names = default_names();
        let mut m = Masker::new(MaskPolicy::Exhaustive, &names);
        assert_eq!(m.mask("TEXT", "x"), "TEXT_1");
        assert_eq!(m.mask("TEXT", "x"), "TEXT_2");
        assert_eq!(m.into_map().entries.len(), 2);
    }

    #[test]
    fn pass_through_keeps_synthetic_placeholders() {
        let names = default_names();
        let mut m = Masker::new(MaskPolicy::Optimizing, &names);
        assert_eq!(m.mask("TEXT", "TEXT_7"), "TEXT_7");
        // Fresh ids avoid colliding with pass-through ids.
        assert_eq!(m.mask("TEXT", "real content"), "TEXT_8");
    }

    #[test]
    fn simplified_strips_identifiers() {
        let names = default_names();
        let mut m = Masker::new(MaskPolicy::Simplified, &names);
        assert_eq!(m.mask("TEXT", "TEXT_3"), "TEXT");
        assert_eq!(m.mask("TEXT", "hello"), "TEXT");
        let map = m.into_map();
        assert_eq!(map.entries, vec![
            ("TEXT".to_string(), "TEXT_3".to_string()),
            ("TEXT".to_string(), "hello".to_string()),
        ]);
    }

    #[test]
    fn reconstruct_without_map_is_verbatim() {
        let tokens: Vec<String> = ["<p>", "TEXT_1", "</p>"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            reconstruct(&tokens, None, Instantiation::Early, None).unwrap(),
            "<p>TEXT_1</p>"
        );
    }

    #[test]
    fn reconstruct_separates_adjacent_placeholders() {
        let tokens: Vec<String> = ["TEXT_1", "TEXT_2"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            reconstruct(&tokens, None, Instantiation::Early, None).unwrap(),
            "TEXT_1 TEXT_2"
        );
    }

    #[test]
    fn fifo_resolution_for_simplified() {
        let tokens: Vec<String> = ["TEXT", "-", "TEXT"].iter().map(|s| s.to_string()).collect();
        let map = PlaceholderMap {
            entries: vec![
                ("TEXT".into(), "first".into()),
                ("TEXT".into(), "second".into()),
            ],
        };
        for inst in [Instantiation::Early, Instantiation::Late] {
            assert_eq!(
                reconstruct(&tokens, Some(&map), inst, None).unwrap(),
                "first-second"
            );
        }
    }

    #[test]
    fn exhausted_fifo_is_unbound() {
        let tokens: Vec<String> = ["TEXT", "TEXT"].iter().map(|s| s.to_string()).collect();
        let map = PlaceholderMap {
            entries: vec![("TEXT".into(), "only".into())],
        };
        assert!(matches!(
            reconstruct(&tokens, Some(&map), Instantiation::Early, None),
            Err(TokenizeError::UnboundPlaceholder(_))
        ));
    }
}
