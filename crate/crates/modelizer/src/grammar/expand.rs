//! Random derivation-tree synthesis under expansion-count bounds.

use super::{Alternative, DerivationTree, Grammar, GrammarError, Symbol};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::{HashMap, VecDeque};

enum Node {
    Inner {
        name: String,
        alt: Option<usize>,
        children: Vec<usize>,
    },
    Leaf {
        symbol: Symbol,
        text: String,
    },
}

/// Derives a tree whose expansion count lies within `[min_expansions,
/// max_expansions]`. Deterministic for a fixed seed.
///
/// The budget phase picks probability-weighted alternatives among those that
/// keep the bounds reachable; once the drawn expansion target is met, the
/// closing phase picks minimal-completion-cost alternatives (first listed on
/// ties) to terminate.
pub fn expand(
    grammar: &Grammar,
    seed: u64,
    min_expansions: usize,
    max_expansions: usize,
) -> Result<DerivationTree, GrammarError> {
    assert!(
        0 < min_expansions && min_expansions <= max_expansions,
        "bounds must satisfy 0 < min <= max"
    );
    let min_costs = grammar.min_costs();
    let max_costs = grammar.max_costs();
    let start = &grammar.start_symbol;
    if min_costs[start] > max_expansions || max_costs[start] < min_expansions {
        return Err(GrammarError::BudgetInfeasible {
            min: min_expansions,
            max: max_expansions,
        });
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let target = rng.gen_range(min_expansions..=max_expansions);

    let mut nodes: Vec<Node> = vec![Node::Inner {
        name: start.clone(),
        alt: None,
        children: Vec::new(),
    }];
    let mut frontier: VecDeque<usize> = VecDeque::from([0]);
    let mut count = 0usize;

    while let Some(id) = frontier.pop_front() {
        let name = match &nodes[id] {
            Node::Inner { name, .. } => name.clone(),
            Node::Leaf { .. } => unreachable!("leaves never enter the frontier"),
        };
        let rest_min: usize = frontier
            .iter()
            .map(|&n| min_costs[node_name(&nodes, n)])
            .sum();
        let rest_max: usize = frontier
            .iter()
            .map(|&n| max_costs[node_name(&nodes, n)])
            .fold(0usize, usize::saturating_add);

        let alternatives = &grammar.rules[&name];
        let probs = grammar.effective_probabilities(&name);
        let alt_min: Vec<usize> = alternatives
            .iter()
            .map(|a| sym_cost(a, &min_costs))
            .collect();
        let alt_max: Vec<usize> = alternatives
            .iter()
            .map(|a| sym_cost_sat(a, &max_costs))
            .collect();

        let fits_max = |i: usize| count + 1 + alt_min[i] + rest_min <= max_expansions;
        let reach = |i: usize, goal: usize| {
            (count + 1)
                .saturating_add(alt_max[i])
                .saturating_add(rest_max)
                >= goal
        };
        let feasible: Vec<usize> = (0..alternatives.len()).filter(|&i| fits_max(i)).collect();
        if feasible.is_empty() {
            return Err(GrammarError::BudgetInfeasible {
                min: min_expansions,
                max: max_expansions,
            });
        }

        let min_total_now = count
            + 1
            + feasible.iter().map(|&i| alt_min[i]).min().unwrap()
            + rest_min;
        let chosen = if min_total_now < target {
            // Budget phase: weighted choice among alternatives that keep the
            // target (or at least the lower bound) reachable.
            let tier1: Vec<usize> = feasible.iter().copied().filter(|&i| reach(i, target)).collect();
            let tier2: Vec<usize> = feasible
                .iter()
                .copied()
                .filter(|&i| reach(i, min_expansions))
                .collect();
            if !tier1.is_empty() {
                weighted_pick(&mut rng, &tier1, &probs)
            } else if !tier2.is_empty() {
                weighted_pick(&mut rng, &tier2, &probs)
            } else {
                min_cost_pick(&feasible, &alt_min)
            }
        } else {
            min_cost_pick(&feasible, &alt_min)
        };

        count += 1;
        let mut children = Vec::new();
        let mut new_frontier_ids = Vec::new();
        for sym in &alternatives[chosen].symbols {
            let child_id = nodes.len();
            match sym {
                Symbol::NonTerminal(nt) => {
                    nodes.push(Node::Inner {
                        name: nt.clone(),
                        alt: None,
                        children: Vec::new(),
                    });
                    new_frontier_ids.push(child_id);
                }
                Symbol::Terminal(text) => nodes.push(Node::Leaf {
                    symbol: sym.clone(),
                    text: text.clone(),
                }),
                // Placeholder leaves carry their bare names; identifiers are
                // attached later by the post-processing step.
                Symbol::Placeholder(p) => nodes.push(Node::Leaf {
                    symbol: sym.clone(),
                    text: p.clone(),
                }),
            }
            children.push(child_id);
        }
        // Expand depth-first, leftmost child next.
        for id in new_frontier_ids.into_iter().rev() {
            frontier.push_front(id);
        }
        if let Node::Inner { alt, children: c, .. } = &mut nodes[id] {
            *alt = Some(chosen);
            *c = children;
        }
    }

    if count < min_expansions || count > max_expansions {
        return Err(GrammarError::BudgetInfeasible {
            min: min_expansions,
            max: max_expansions,
        });
    }
    Ok(build_tree(&nodes, 0))
}

fn node_name<'a>(nodes: &'a [Node], id: usize) -> &'a str {
    match &nodes[id] {
        Node::Inner { name, .. } => name,
        Node::Leaf { .. } => unreachable!(),
    }
}

fn sym_cost(alt: &Alternative, costs: &HashMap<String, usize>) -> usize {
    alt.symbols
        .iter()
        .map(|s| match s {
            Symbol::NonTerminal(nt) => costs[nt],
            _ => 0,
        })
        .sum()
}

fn sym_cost_sat(alt: &Alternative, costs: &HashMap<String, usize>) -> usize {
    alt.symbols
        .iter()
        .map(|s| match s {
            Symbol::NonTerminal(nt) => costs[nt],
            _ => 0,
        })
        .fold(0usize, usize::saturating_add)
}

fn weighted_pick(rng: &mut ChaCha12Rng, allowed: &[usize], probs: &[f64]) -> usize {
    let total: f64 = allowed.iter().map(|&i| probs[i]).sum();
    if total <= 0.0 {
        return allowed[0];
    }
    let mut draw = rng.gen::<f64>() * total;
    for &i in allowed {
        draw -= probs[i];
        if draw <= 0.0 {
            return i;
        }
    }
    *allowed.last().unwrap()
}

fn min_cost_pick(allowed: &[usize], alt_min: &[usize]) -> usize {
    let best = allowed.iter().map(|&i| alt_min[i]).min().unwrap();
    allowed.iter().copied().find(|&i| alt_min[i] == best).unwrap()
}

fn build_tree(nodes: &[Node], id: usize) -> DerivationTree {
    match &nodes[id] {
        Node::Leaf { symbol, text } => DerivationTree::Leaf {
            symbol: symbol.clone(),
            text: text.clone(),
        },
        Node::Inner {
            name,
            alt,
            children,
        } => DerivationTree::Expanded {
            name: name.clone(),
            alt_index: alt.expect("all frontier nodes were expanded"),
            children: children.iter().map(|&c| build_tree(nodes, c)).collect(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{parse_bnf, tree_to_string};

    #[test]
    fn single_derivation_grammar() {
        let g = parse_bnf("<s> ::= \"a\"\n").unwrap();
        let t = expand(&g, 7, 1, 1).unwrap();
        assert_eq!(tree_to_string(&t).unwrap(), "a");
        assert_eq!(t.expansion_count(), 1);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let g = parse_bnf(concat!(
            "%placeholders: TEXT\n",
            "<s> ::= <item> | <item> \" \" <s>\n",
            "<item> ::= TEXT | \"**\" TEXT \"**\"\n",
        ))
        .unwrap();
        let a = expand(&g, 42, 5, 12).unwrap();
        let b = expand(&g, 42, 5, 12).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn budget_respected_across_seeds() {
        let g = parse_bnf(concat!(
            "%placeholders: TEXT\n",
            "<s> ::= <item> | <item> \" \" <s>\n",
            "<item> ::= TEXT | \"**\" TEXT \"**\"\n",
        ))
        .unwrap();
        for seed in 0..200 {
            let t = expand(&g, seed, 5, 12).unwrap();
            let n = t.expansion_count();
            assert!((5..=12).contains(&n), "seed {seed} gave count {n}");
        }
    }

    #[test]
    fn infeasible_lower_bound() {
        let g = parse_bnf("<s> ::= \"a\"\n").unwrap();
        assert!(matches!(
            expand(&g, 0, 5, 10),
            Err(GrammarError::BudgetInfeasible { .. })
        ));
    }

    #[test]
    fn weighted_alternatives_match_frequencies() {
        let g = parse_bnf(concat!(
            "%placeholders: TEXT\n",
            "<s> ::= <w> | <w> \" \" <s>\n",
            "<w> ::= TEXT @p=0.9 | \"x\" @p=0.1\n",
        ))
        .unwrap();
        let mut text_picks = 0usize;
        let mut total = 0usize;
        let mut seed = 0u64;
        while total < 10_000 {
            let t = expand(&g, seed, 8, 40).unwrap();
            count_w(&t, &mut text_picks, &mut total);
            seed += 1;
        }
        let freq = text_picks as f64 / total as f64;
        assert!((freq - 0.9).abs() < 0.03, "empirical frequency {freq}");
    }

    fn count_w(t: &DerivationTree, text_picks: &mut usize, total: &mut usize) {
        if let DerivationTree::Expanded {
            name,
            alt_index,
            children,
        } = t
        {
            if name == "w" {
                *total += 1;
                if *alt_index == 0 {
                    *text_picks += 1;
                }
            }
            for c in children {
                count_w(c, text_picks, total);
            }
        }
    }
}
