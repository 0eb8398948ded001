//! Earley chart parser producing derivation trees.
//!
//! Terminals are matched as literal substrings; placeholder symbols match
//! their bare name or an identifier-augmented form (`TEXT`, `TEXT_12`).
//! Ambiguity is resolved deterministically: earlier-listed alternatives win,
//! and non-terminal spans are matched shortest-first.

use super::{Alternative, DerivationTree, Grammar, GrammarError, Symbol};
use std::collections::{BTreeSet, HashMap, HashSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Item {
    nt: usize,
    alt: usize,
    dot: usize,
    origin: usize,
}

struct Tables {
    names: Vec<String>,
    ids: HashMap<String, usize>,
    alts: Vec<Vec<Alternative>>,
    nullable: Vec<bool>,
}

impl Tables {
    fn new(grammar: &Grammar) -> Self {
        let names: Vec<String> = grammar.rules.keys().cloned().collect();
        let ids: HashMap<String, usize> =
            names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let alts: Vec<Vec<Alternative>> =
            names.iter().map(|n| grammar.rules[n].clone()).collect();
        let mut nullable = vec![false; names.len()];
        loop {
            let mut changed = false;
            for (id, rule) in alts.iter().enumerate() {
                if nullable[id] {
                    continue;
                }
                for alt in rule {
                    let all_nullable = alt.symbols.iter().all(|s| match s {
                        Symbol::NonTerminal(nt) => nullable[ids[nt]],
                        _ => false,
                    });
                    if all_nullable {
                        nullable[id] = true;
                        changed = true;
                        break;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        Tables {
            names,
            ids,
            alts,
            nullable,
        }
    }
}

fn placeholder_len(input: &str, pos: usize, name: &str) -> Option<usize> {
    let rest = &input[pos..];
    if !rest.starts_with(name) {
        return None;
    }
    let mut len = name.len();
    let tail = &rest[len..];
    if let Some(stripped) = tail.strip_prefix('_') {
        let digits = stripped.chars().take_while(|c| c.is_ascii_digit()).count();
        if digits > 0 {
            len += 1 + digits;
        }
    }
    // Require a word boundary so TEXT never matches inside TEXTUAL.
    match input[pos + len..].chars().next() {
        Some(c) if c.is_alphanumeric() || c == '_' => None,
        _ => Some(len),
    }
}

/// Parses `input` into a derivation tree whose string form equals `input`.
pub fn earley_parse(grammar: &Grammar, input: &str) -> Result<DerivationTree, GrammarError> {
    let tables = Tables::new(grammar);
    let start = tables.ids[&grammar.start_symbol];
    let n = input.len();

    let mut sets: Vec<Vec<Item>> = vec![Vec::new(); n + 1];
    let mut seen: Vec<HashSet<Item>> = vec![HashSet::new(); n + 1];
    let mut furthest = 0usize;
    // Completed non-terminal spans, for tree extraction.
    let mut spans: HashMap<(usize, usize), BTreeSet<usize>> = HashMap::new();

    let push = |sets: &mut Vec<Vec<Item>>, seen: &mut Vec<HashSet<Item>>, pos: usize, item: Item| {
        if seen[pos].insert(item) {
            sets[pos].push(item);
        }
    };

    for alt in 0..tables.alts[start].len() {
        push(&mut sets, &mut seen, 0, Item { nt: start, alt, dot: 0, origin: 0 });
    }

    for pos in 0..=n {
        let mut idx = 0;
        while idx < sets[pos].len() {
            let item = sets[pos][idx];
            idx += 1;
            let symbols = &tables.alts[item.nt][item.alt].symbols;
            if item.dot == symbols.len() {
                // Completion.
                spans
                    .entry((item.nt, item.origin))
                    .or_default()
                    .insert(pos);
                let origin_items: Vec<Item> = sets[item.origin].clone();
                for parent in origin_items {
                    let psyms = &tables.alts[parent.nt][parent.alt].symbols;
                    if let Some(Symbol::NonTerminal(nt)) = psyms.get(parent.dot) {
                        if tables.ids[nt] == item.nt {
                            push(
                                &mut sets,
                                &mut seen,
                                pos,
                                Item { dot: parent.dot + 1, ..parent },
                            );
                        }
                    }
                }
                continue;
            }
            match &symbols[item.dot] {
                Symbol::NonTerminal(nt) => {
                    let id = tables.ids[nt];
                    for alt in 0..tables.alts[id].len() {
                        push(&mut sets, &mut seen, pos, Item { nt: id, alt, dot: 0, origin: pos });
                    }
                    if tables.nullable[id] {
                        push(&mut sets, &mut seen, pos, Item { dot: item.dot + 1, ..item });
                    }
                }
                Symbol::Terminal(t) => {
                    if !t.is_empty() && input[pos..].starts_with(t.as_str()) {
                        let end = pos + t.len();
                        push(&mut sets, &mut seen, end, Item { dot: item.dot + 1, ..item });
                        furthest = furthest.max(end);
                    }
                }
                Symbol::Placeholder(name) => {
                    if let Some(len) = placeholder_len(input, pos, name) {
                        let end = pos + len;
                        push(&mut sets, &mut seen, end, Item { dot: item.dot + 1, ..item });
                        furthest = furthest.max(end);
                    }
                }
            }
        }
    }

    let accepted = sets[n].iter().any(|item| {
        item.nt == start
            && item.origin == 0
            && item.dot == tables.alts[start].len_of(item.alt)
    });
    if !accepted {
        return Err(GrammarError::ParseFailure { position: furthest.min(n) });
    }

    let mut builder = TreeBuilder {
        input,
        tables: &tables,
        spans: &spans,
        memo: HashMap::new(),
    };
    builder
        .build(start, 0, n)
        .ok_or(GrammarError::ParseFailure { position: furthest.min(n) })
}

trait AltLen {
    fn len_of(&self, alt: usize) -> usize;
}

impl AltLen for Vec<Alternative> {
    fn len_of(&self, alt: usize) -> usize {
        self[alt].symbols.len()
    }
}

struct TreeBuilder<'a> {
    input: &'a str,
    tables: &'a Tables,
    spans: &'a HashMap<(usize, usize), BTreeSet<usize>>,
    memo: HashMap<(usize, usize, usize), Option<DerivationTree>>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, nt: usize, start: usize, end: usize) -> Option<DerivationTree> {
        if let Some(cached) = self.memo.get(&(nt, start, end)) {
            return cached.clone();
        }
        // Guard against reentrancy on unit cycles.
        self.memo.insert((nt, start, end), None);
        let mut result = None;
        for alt in 0..self.tables.alts[nt].len() {
            let mut children = Vec::new();
            if self.match_symbols(nt, alt, 0, start, end, &mut children) {
                result = Some(DerivationTree::Expanded {
                    name: self.tables.names[nt].clone(),
                    alt_index: alt,
                    children,
                });
                break;
            }
        }
        self.memo.insert((nt, start, end), result.clone());
        result
    }

    fn match_symbols(
        &mut self,
        nt: usize,
        alt: usize,
        sym_idx: usize,
        pos: usize,
        end: usize,
        children: &mut Vec<DerivationTree>,
    ) -> bool {
        let symbols = &self.tables.alts[nt][alt].symbols;
        if sym_idx == symbols.len() {
            return pos == end;
        }
        match &symbols[sym_idx] {
            Symbol::Terminal(t) => {
                if !self.input[pos..end.min(self.input.len())].starts_with(t.as_str()) {
                    return false;
                }
                children.push(DerivationTree::terminal(t));
                if self.match_symbols(nt, alt, sym_idx + 1, pos + t.len(), end, children) {
                    true
                } else {
                    children.pop();
                    false
                }
            }
            Symbol::Placeholder(name) => {
                match placeholder_len(self.input, pos, name) {
                    Some(len) if pos + len <= end => {
                        children.push(DerivationTree::placeholder(
                            name,
                            &self.input[pos..pos + len],
                        ));
                        if self.match_symbols(nt, alt, sym_idx + 1, pos + len, end, children) {
                            true
                        } else {
                            children.pop();
                            false
                        }
                    }
                    _ => false,
                }
            }
            Symbol::NonTerminal(child_name) => {
                let child = self.tables.ids[child_name];
                let Some(ends) = self.spans.get(&(child, pos)) else {
                    return false;
                };
                let candidates: Vec<usize> =
                    ends.iter().copied().filter(|&e| e <= end).collect();
                for child_end in candidates {
                    if let Some(subtree) = self.build(child, pos, child_end) {
                        children.push(subtree);
                        if self.match_symbols(nt, alt, sym_idx + 1, child_end, end, children) {
                            return true;
                        }
                        children.pop();
                    }
                }
                false
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{expand, parse_bnf, tree_to_string};

    fn inline_grammar() -> Grammar {
        parse_bnf(concat!(
            "%placeholders: TEXT URL\n",
            "<s> ::= <item> | <item> \" \" <s>\n",
            "<item> ::= TEXT | \"**\" TEXT \"**\" | \"[\" TEXT \"](\" URL \")\"\n",
        ))
        .unwrap()
    }

    #[test]
    fn parses_bold_text() {
        let g = inline_grammar();
        let t = earley_parse(&g, "**TEXT**").unwrap();
        assert_eq!(tree_to_string(&t).unwrap(), "**TEXT**");
        match &t {
            DerivationTree::Expanded { name, children, .. } => {
                assert_eq!(name, "s");
                assert_eq!(children[0].root_name(), Some("item"));
            }
            _ => panic!("expected expanded root"),
        }
    }

    #[test]
    fn parses_augmented_placeholders() {
        let g = inline_grammar();
        let t = earley_parse(&g, "TEXT_1 [TEXT_2](URL_1)").unwrap();
        assert_eq!(tree_to_string(&t).unwrap(), "TEXT_1 [TEXT_2](URL_1)");
    }

    #[test]
    fn rejects_garbage_at_position_zero() {
        let g = inline_grammar();
        match earley_parse(&g, "<<<") {
            Err(GrammarError::ParseFailure { position }) => assert_eq!(position, 0),
            other => panic!("expected ParseFailure, got {other:?}"),
        }
    }

    #[test]
    fn reports_furthest_position() {
        let g = inline_grammar();
        match earley_parse(&g, "TEXT <<<") {
            Err(GrammarError::ParseFailure { position }) => assert!(position >= 4),
            other => panic!("expected ParseFailure, got {other:?}"),
        }
    }

    #[test]
    fn generator_outputs_round_trip() {
        let g = inline_grammar();
        for seed in 0..100 {
            let tree = expand(&g, seed, 3, 15).unwrap();
            let text = tree_to_string(&tree).unwrap();
            let parsed = earley_parse(&g, &text).unwrap();
            assert_eq!(tree_to_string(&parsed).unwrap(), text);
        }
    }

    #[test]
    fn nullable_rules_supported() {
        let g = parse_bnf(concat!(
            "<s> ::= <opt> \"a\"\n",
            "<opt> ::= \"\" | \"x\"\n",
        ))
        .unwrap();
        assert!(earley_parse(&g, "a").is_ok());
        assert!(earley_parse(&g, "xa").is_ok());
        assert!(earley_parse(&g, "xxa").is_err());
    }

    #[test]
    fn first_listed_alternative_wins() {
        // Both alternatives derive "a"; the first must be reported.
        let g = parse_bnf("<s> ::= <a> | <b>\n<a> ::= \"a\"\n<b> ::= \"a\"\n").unwrap();
        let t = earley_parse(&g, "a").unwrap();
        match &t {
            DerivationTree::Expanded { alt_index, .. } => assert_eq!(*alt_index, 0),
            _ => panic!(),
        }
    }
}
