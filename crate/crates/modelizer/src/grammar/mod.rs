//! Context-free grammars with probabilistic expansions.
//!
//! A [`Grammar`] drives both input synthesis ([`expand`]) and parsing
//! ([`earley_parse`]). Placeholder terminals (e.g. `TEXT`, `URL`) stand in
//! for arbitrary real-world content.

mod bnf;
mod earley;
mod expand;

pub use bnf::parse_bnf;
pub use earley::earley_parse;
pub use expand::expand;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("undefined non-terminal <{0}>")]
    UndefinedNonTerminal(String),
    #[error("explicit probabilities of rule <{0}> sum to more than 1")]
    ProbabilityOverflow(String),
    #[error("explicit probabilities of rule <{0}> sum below 1 with no unassigned alternatives")]
    ProbabilityShortfall(String),
    #[error("placeholder {0} never appears in any alternative")]
    DanglingPlaceholder(String),
    #[error("start symbol <{0}> has no rule")]
    MissingStartSymbol(String),
    #[error("rule <{0}> has no terminating derivation")]
    Nonterminating(String),
    #[error("no derivation satisfies expansion bounds [{min}, {max}]")]
    BudgetInfeasible { min: usize, max: usize },
    #[error("tree contains an unexpanded non-terminal")]
    IncompleteTree,
    #[error("parse failed at position {position}")]
    ParseFailure { position: usize },
    #[error("grammar syntax error on line {line}: {msg}")]
    Syntax { line: usize, msg: String },
}

/// One symbol on the right-hand side of an alternative.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Symbol {
    /// A literal string, matched and emitted verbatim.
    Terminal(String),
    /// A reference to another rule.
    NonTerminal(String),
    /// A content placeholder terminal such as `TEXT`.
    Placeholder(String),
}

/// One expansion alternative of a rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Alternative {
    pub symbols: Vec<Symbol>,
    /// Explicit expansion probability in (0, 1]. `None` means the remainder
    /// of the rule's probability mass is split equally among all unassigned
    /// alternatives.
    pub probability: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Grammar {
    pub start_symbol: String,
    pub rules: BTreeMap<String, Vec<Alternative>>,
    pub placeholders: BTreeSet<String>,
}

/// A record of how one string was derived.
#[derive(Debug, Clone, PartialEq)]
pub enum DerivationTree {
    Expanded {
        name: String,
        alt_index: usize,
        children: Vec<DerivationTree>,
    },
    /// A non-terminal that has not been expanded yet. Only produced by
    /// intermediate construction states; complete trees never contain it.
    Unexpanded(String),
    Leaf {
        symbol: Symbol,
        text: String,
    },
}

impl DerivationTree {
    pub fn terminal(text: &str) -> Self {
        DerivationTree::Leaf {
            symbol: Symbol::Terminal(text.to_string()),
            text: text.to_string(),
        }
    }

    pub fn placeholder(name: &str, text: &str) -> Self {
        DerivationTree::Leaf {
            symbol: Symbol::Placeholder(name.to_string()),
            text: text.to_string(),
        }
    }

    /// Number of non-terminal nodes expanded in this tree.
    pub fn expansion_count(&self) -> usize {
        match self {
            DerivationTree::Expanded { children, .. } => {
                1 + children.iter().map(|c| c.expansion_count()).sum::<usize>()
            }
            _ => 0,
        }
    }

    pub fn root_name(&self) -> Option<&str> {
        match self {
            DerivationTree::Expanded { name, .. } | DerivationTree::Unexpanded(name) => Some(name),
            DerivationTree::Leaf { .. } => None,
        }
    }
}

/// Left-to-right concatenation of the tree's leaf texts.
pub fn tree_to_string(tree: &DerivationTree) -> Result<String, GrammarError> {
    let mut out = String::new();
    collect_leaves(tree, &mut out)?;
    Ok(out)
}

fn collect_leaves(tree: &DerivationTree, out: &mut String) -> Result<(), GrammarError> {
    match tree {
        DerivationTree::Leaf { text, .. } => out.push_str(text),
        DerivationTree::Unexpanded(_) => return Err(GrammarError::IncompleteTree),
        DerivationTree::Expanded { children, .. } => {
            for child in children {
                collect_leaves(child, out)?;
            }
        }
    }
    Ok(())
}

impl Grammar {
    /// Checks all structural invariants and that effective probabilities are
    /// computable for every rule.
    pub fn validate(&self) -> Result<(), GrammarError> {
        if !self.rules.contains_key(&self.start_symbol) {
            return Err(GrammarError::MissingStartSymbol(self.start_symbol.clone()));
        }
        let mut seen_placeholders = BTreeSet::new();
        for (name, alternatives) in &self.rules {
            let mut explicit_sum = 0.0;
            let mut unassigned = 0usize;
            for alt in alternatives {
                match alt.probability {
                    Some(p) => explicit_sum += p,
                    None => unassigned += 1,
                }
                for sym in &alt.symbols {
                    match sym {
                        Symbol::NonTerminal(nt) => {
                            if !self.rules.contains_key(nt) {
                                return Err(GrammarError::UndefinedNonTerminal(nt.clone()));
                            }
                        }
                        Symbol::Placeholder(p) => {
                            seen_placeholders.insert(p.clone());
                        }
                        Symbol::Terminal(_) => {}
                    }
                }
            }
            if explicit_sum > 1.0 + 1e-9 {
                return Err(GrammarError::ProbabilityOverflow(name.clone()));
            }
            if explicit_sum < 1.0 - 1e-9 && unassigned == 0 && !alternatives.is_empty() {
                return Err(GrammarError::ProbabilityShortfall(name.clone()));
            }
        }
        for p in &self.placeholders {
            if !seen_placeholders.contains(p) {
                return Err(GrammarError::DanglingPlaceholder(p.clone()));
            }
        }
        // Every rule must be able to terminate.
        let costs = self.min_costs();
        for name in self.rules.keys() {
            if costs[name] == usize::MAX {
                return Err(GrammarError::Nonterminating(name.clone()));
            }
        }
        Ok(())
    }

    /// Effective probability of each alternative of `rule`: explicit values
    /// kept, the remainder split equally among unassigned alternatives.
    pub fn effective_probabilities(&self, rule: &str) -> Vec<f64> {
        let alternatives = &self.rules[rule];
        let explicit_sum: f64 = alternatives.iter().filter_map(|a| a.probability).sum();
        let unassigned = alternatives.iter().filter(|a| a.probability.is_none()).count();
        let share = if unassigned > 0 {
            (1.0 - explicit_sum).max(0.0) / unassigned as f64
        } else {
            0.0
        };
        alternatives
            .iter()
            .map(|a| a.probability.unwrap_or(share))
            .collect()
    }

    /// Minimal number of expansions needed to derive a complete tree from
    /// each non-terminal (counting the non-terminal's own expansion).
    /// `usize::MAX` marks non-terminating rules.
    pub(crate) fn min_costs(&self) -> HashMap<String, usize> {
        let mut costs: HashMap<String, usize> =
            self.rules.keys().map(|k| (k.clone(), usize::MAX)).collect();
        loop {
            let mut changed = false;
            for (name, alternatives) in &self.rules {
                for alt in alternatives {
                    if let Some(total) = alt_cost(alt, &costs) {
                        let candidate = 1 + total;
                        if candidate < costs[name] {
                            costs.insert(name.clone(), candidate);
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                return costs;
            }
        }
    }

    /// Maximal expansion count derivable from each non-terminal;
    /// `usize::MAX` means unbounded (recursive growth possible).
    pub(crate) fn max_costs(&self) -> HashMap<String, usize> {
        // Non-terminals on a cycle (or reaching one) are unbounded; the rest
        // have a finite maximum found by a fixpoint over acyclic structure.
        let mut costs: HashMap<String, usize> =
            self.rules.keys().map(|k| (k.clone(), 0)).collect();
        // Iterate |rules| + 1 times; any value still growing is unbounded.
        let bound = self.rules.len() + 1;
        for round in 0..=bound {
            let mut changed = false;
            for (name, alternatives) in &self.rules {
                let mut best = 0usize;
                for alt in alternatives {
                    let mut total = 1usize;
                    for sym in &alt.symbols {
                        if let Symbol::NonTerminal(nt) = sym {
                            total = total.saturating_add(costs[nt]);
                        }
                    }
                    best = best.max(total);
                }
                if best > costs[name] {
                    costs.insert(name.clone(), best);
                    changed = true;
                }
            }
            if !changed {
                return costs;
            }
            if round == bound {
                break;
            }
        }
        // Still growing: everything that changed in the last rounds is on a
        // growth path. Conservatively mark any rule whose value exceeds the
        // acyclic bound as unbounded.
        let limit = self.rules.len();
        for value in costs.values_mut() {
            if *value > limit {
                *value = usize::MAX;
            }
        }
        costs
    }

}

fn alt_cost(alt: &Alternative, costs: &HashMap<String, usize>) -> Option<usize> {
    let mut total = 0usize;
    for sym in &alt.symbols {
        if let Symbol::NonTerminal(nt) = sym {
            let c = *costs.get(nt)?;
            if c == usize::MAX {
                return None;
            }
            total += c;
        }
    }
    Some(total)
}

/// Validates a grammar; see [`Grammar::validate`].
pub fn validate_grammar(grammar: &Grammar) -> Result<(), GrammarError> {
    grammar.validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple(rules: &[(&str, &[(&[Symbol], Option<f64>)])]) -> Grammar {
        let mut map = BTreeMap::new();
        for (name, alts) in rules {
            map.insert(
                name.to_string(),
                alts.iter()
                    .map(|(syms, p)| Alternative {
                        symbols: syms.to_vec(),
                        probability: *p,
                    })
                    .collect(),
            );
        }
        Grammar {
            start_symbol: rules[0].0.to_string(),
            rules: map,
            placeholders: BTreeSet::new(),
        }
    }

    #[test]
    fn undefined_non_terminal_rejected() {
        let g = simple(&[("S", &[(&[Symbol::NonTerminal("A".into())], None)])]);
        match g.validate() {
            Err(GrammarError::UndefinedNonTerminal(name)) => assert_eq!(name, "A"),
            other => panic!("expected UndefinedNonTerminal, got {other:?}"),
        }
    }

    #[test]
    fn probability_overflow_rejected() {
        let g = simple(&[(
            "S",
            &[
                (&[Symbol::Terminal("a".into())] as &[Symbol], Some(0.7)),
                (&[Symbol::Terminal("b".into())], Some(0.6)),
            ],
        )]);
        assert!(matches!(g.validate(), Err(GrammarError::ProbabilityOverflow(_))));
    }

    #[test]
    fn dangling_placeholder_rejected() {
        let mut g = simple(&[("S", &[(&[Symbol::Terminal("a".into())] as &[Symbol], None)])]);
        g.placeholders.insert("TEXT".into());
        assert!(matches!(g.validate(), Err(GrammarError::DanglingPlaceholder(_))));
    }

    #[test]
    fn effective_probabilities_split_remainder() {
        let g = simple(&[(
            "S",
            &[
                (&[Symbol::Terminal("a".into())] as &[Symbol], Some(0.5)),
                (&[Symbol::Terminal("b".into())], None),
                (&[Symbol::Terminal("c".into())], None),
            ],
        )]);
        g.validate().unwrap();
        let probs = g.effective_probabilities("S");
        assert_eq!(probs, vec![0.5, 0.25, 0.25]);
    }

    #[test]
    fn min_costs_handle_recursion() {
        let g = simple(&[(
            "S",
            &[
                (&[Symbol::Terminal("a".into())] as &[Symbol], None),
                (
                    &[Symbol::Terminal("(".into()), Symbol::NonTerminal("S".into())],
                    None,
                ),
            ],
        )]);
        assert_eq!(g.min_costs()["S"], 1);
        assert_eq!(g.max_costs()["S"], usize::MAX);
    }

    #[test]
    fn tree_string_and_expansion_count() {
        let tree = DerivationTree::Expanded {
            name: "S".into(),
            alt_index: 0,
            children: vec![
                DerivationTree::terminal("a"),
                DerivationTree::Expanded {
                    name: "B".into(),
                    alt_index: 1,
                    children: vec![DerivationTree::placeholder("TEXT", "TEXT")],
                },
            ],
        };
        assert_eq!(tree_to_string(&tree).unwrap(), "aTEXT");
        assert_eq!(tree.expansion_count(), 2);
    }

    #[test]
    fn incomplete_tree_rejected() {
        let tree = DerivationTree::Expanded {
            name: "S".into(),
            alt_index: 0,
            children: vec![DerivationTree::Unexpanded("B".into())],
        };
        assert!(matches!(tree_to_string(&tree), Err(GrammarError::IncompleteTree)));
    }
}
