//! LALR(1) tables over the compiled backbone. Conflicts are kept: an action
//! cell may hold several actions, which the GLR parser pursues in parallel.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grammar::{BackboneGrammar, SymbolId};

pub type StateId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LrAction {
    Shift(StateId),
    Reduce(usize),
    Accept,
}

impl fmt::Display for LrAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LrAction::Shift(s) => write!(f, "shift {s}"),
            LrAction::Reduce(r) => write!(f, "reduce {r}"),
            LrAction::Accept => f.write_str("accept"),
        }
    }
}

/// A dotted production. Productions at or beyond the grammar's rule count are
/// the augmented start productions `S' -> start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LrItem {
    pub prod: usize,
    pub dot: usize,
}

#[derive(Debug, Clone)]
pub struct LrState {
    pub id: StateId,
    pub kernel: Vec<LrItem>,
    pub closure: Vec<LrItem>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TableError {
    #[error("no viable sentences: the start symbol derives no terminal string")]
    NoViableSentences,
}

#[derive(Debug, Clone)]
pub struct LrTables {
    pub states: Vec<LrState>,
    /// End-of-text lookahead; one past the last grammar symbol.
    pub eot: SymbolId,
    pub start_state: StateId,
    columns: Vec<Option<usize>>,
    column_symbols: Vec<SymbolId>,
    nt_columns: Vec<Option<usize>>,
    action: Vec<Vec<Vec<LrAction>>>,
    goto: Vec<Vec<Option<StateId>>>,
    rule_lens: Vec<usize>,
    rule_lhs: Vec<SymbolId>,
    symbol_names: Vec<String>,
}

struct Prods<'g> {
    bg: &'g BackboneGrammar,
    n_rules: usize,
}

impl Prods<'_> {
    fn len(&self) -> usize {
        self.n_rules + self.bg.starts.len()
    }

    fn rhs(&self, p: usize) -> &[SymbolId] {
        if p < self.n_rules {
            &self.bg.rules[p].rhs
        } else {
            std::slice::from_ref(&self.bg.starts[p - self.n_rules])
        }
    }
}

/// FIRST sets of all nonterminals of an ε-free grammar (least fixpoint).
pub fn first_sets(bg: &BackboneGrammar) -> BTreeMap<SymbolId, BTreeSet<SymbolId>> {
    let mut first: BTreeMap<SymbolId, BTreeSet<SymbolId>> = bg.nonterminals().map(|n| (n, BTreeSet::new())).collect();
    loop {
        let mut changed = false;
        for r in &bg.rules {
            let head = r.rhs[0];
            let add: BTreeSet<SymbolId> = if bg.is_terminal(head) {
                std::iter::once(head).collect()
            } else {
                first[&head].clone()
            };
            let entry = first.get_mut(&r.lhs).expect("lhs is a nonterminal");
            for t in add {
                changed |= entry.insert(t);
            }
        }
        if !changed {
            return first;
        }
    }
}

impl LrTables {
    /// Builds the LR(0) automaton (breadth-first, transitions in symbol order)
    /// and attaches LALR(1) lookaheads by spontaneous generation and
    /// propagation.
    pub fn build(bg: &BackboneGrammar) -> Result<LrTables, TableError> {
        if bg.starts.is_empty() || bg.rules.is_empty() {
            return Err(TableError::NoViableSentences);
        }
        let prods = Prods {
            bg,
            n_rules: bg.rules.len(),
        };
        let n_sym = bg.symbols.len();
        let eot = n_sym;
        let marker = n_sym + 1;
        let mut by_lhs: Vec<Vec<usize>> = vec![Vec::new(); n_sym];
        for r in &bg.rules {
            by_lhs[r.lhs].push(r.id);
        }
        let first = first_sets(bg);
        let first_of = |s: SymbolId| -> Vec<SymbolId> {
            if bg.is_terminal(s) {
                vec![s]
            } else {
                first[&s].iter().copied().collect()
            }
        };

        let closure0 = |kernel: &[LrItem]| -> Vec<LrItem> {
            let mut out: Vec<LrItem> = kernel.to_vec();
            let mut seen_nt = vec![false; n_sym];
            let mut i = 0;
            while i < out.len() {
                let it = out[i];
                if let Some(&next) = prods.rhs(it.prod).get(it.dot) {
                    if !bg.is_terminal(next) && !seen_nt[next] {
                        seen_nt[next] = true;
                        out.extend(by_lhs[next].iter().map(|&p| LrItem { prod: p, dot: 0 }));
                    }
                }
                i += 1;
            }
            out
        };

        // LR(0) automaton.
        let start_kernel: Vec<LrItem> = (prods.n_rules..prods.len())
            .map(|p| LrItem { prod: p, dot: 0 })
            .collect();
        let mut states: Vec<LrState> = Vec::new();
        let mut by_kernel: HashMap<Vec<LrItem>, StateId> = HashMap::new();
        let mut transitions: Vec<BTreeMap<SymbolId, StateId>> = Vec::new();
        by_kernel.insert(start_kernel.clone(), 0);
        states.push(LrState {
            id: 0,
            closure: closure0(&start_kernel),
            kernel: start_kernel,
        });
        transitions.push(BTreeMap::new());
        let mut queue = VecDeque::from([0usize]);
        while let Some(s) = queue.pop_front() {
            let mut moves: BTreeMap<SymbolId, Vec<LrItem>> = BTreeMap::new();
            for it in &states[s].closure {
                if let Some(&x) = prods.rhs(it.prod).get(it.dot) {
                    moves.entry(x).or_default().push(LrItem {
                        prod: it.prod,
                        dot: it.dot + 1,
                    });
                }
            }
            for (x, mut kernel) in moves {
                kernel.sort_unstable();
                kernel.dedup();
                let target = match by_kernel.get(&kernel) {
                    Some(&t) => t,
                    None => {
                        let id = states.len();
                        by_kernel.insert(kernel.clone(), id);
                        states.push(LrState {
                            id,
                            closure: closure0(&kernel),
                            kernel,
                        });
                        transitions.push(BTreeMap::new());
                        queue.push_back(id);
                        id
                    }
                };
                transitions[s].insert(x, target);
            }
        }

        // Lookaheads per kernel item.
        let kernel_pos: Vec<HashMap<LrItem, usize>> = states
            .iter()
            .map(|st| st.kernel.iter().enumerate().map(|(i, it)| (*it, i)).collect())
            .collect();
        let mut lookahead: Vec<Vec<BTreeSet<SymbolId>>> =
            states.iter().map(|st| vec![BTreeSet::new(); st.kernel.len()]).collect();
        let mut propagate: Vec<Vec<Vec<(StateId, usize)>>> =
            states.iter().map(|st| vec![Vec::new(); st.kernel.len()]).collect();
        for (s, st) in states.iter().enumerate() {
            for (ki, &k) in st.kernel.iter().enumerate() {
                // LR(1) closure of [k, #]
                let mut items: BTreeMap<LrItem, BTreeSet<SymbolId>> = BTreeMap::new();
                items.insert(k, std::iter::once(marker).collect());
                let mut work = vec![k];
                while let Some(it) = work.pop() {
                    let rhs = prods.rhs(it.prod);
                    let Some(&b) = rhs.get(it.dot) else { continue };
                    if bg.is_terminal(b) {
                        continue;
                    }
                    let las: BTreeSet<SymbolId> = match rhs.get(it.dot + 1) {
                        Some(&next) => first_of(next).into_iter().collect(),
                        None => items[&it].clone(),
                    };
                    for &p in &by_lhs[b] {
                        let new = LrItem { prod: p, dot: 0 };
                        let entry = items.entry(new).or_default();
                        let before = entry.len();
                        entry.extend(las.iter().copied());
                        if entry.len() != before {
                            work.push(new);
                        }
                    }
                }
                for (it, las) in &items {
                    let Some(&x) = prods.rhs(it.prod).get(it.dot) else {
                        continue;
                    };
                    let target = transitions[s][&x];
                    let moved = LrItem {
                        prod: it.prod,
                        dot: it.dot + 1,
                    };
                    let tk = kernel_pos[target][&moved];
                    for &a in las {
                        if a == marker {
                            propagate[s][ki].push((target, tk));
                        } else {
                            lookahead[target][tk].insert(a);
                        }
                    }
                }
            }
        }
        for l in lookahead[0].iter_mut() {
            l.insert(eot);
        }
        loop {
            let mut changed = false;
            for s in 0..states.len() {
                for ki in 0..states[s].kernel.len() {
                    if propagate[s][ki].is_empty() || lookahead[s][ki].is_empty() {
                        continue;
                    }
                    let las = lookahead[s][ki].clone();
                    for &(t, tk) in &propagate[s][ki] {
                        let before = lookahead[t][tk].len();
                        lookahead[t][tk].extend(las.iter().copied());
                        changed |= lookahead[t][tk].len() != before;
                    }
                }
            }
            if !changed {
                break;
            }
        }

        // Table layout.
        let mut columns = vec![None; n_sym + 1];
        let mut column_symbols = Vec::new();
        for t in bg.terminals() {
            columns[t] = Some(column_symbols.len());
            column_symbols.push(t);
        }
        columns[eot] = Some(column_symbols.len());
        column_symbols.push(eot);
        let mut nt_columns = vec![None; n_sym];
        let mut n_nt = 0;
        for n in bg.nonterminals() {
            nt_columns[n] = Some(n_nt);
            n_nt += 1;
        }
        let mut action = vec![vec![Vec::new(); column_symbols.len()]; states.len()];
        let mut goto = vec![vec![None; n_nt]; states.len()];
        for (s, st) in states.iter().enumerate() {
            for (&x, &t) in &transitions[s] {
                if bg.is_terminal(x) {
                    action[s][columns[x].unwrap()].push(LrAction::Shift(t));
                } else {
                    goto[s][nt_columns[x].unwrap()] = Some(t);
                }
            }
            for (ki, it) in st.kernel.iter().enumerate() {
                if it.dot < prods.rhs(it.prod).len() {
                    continue;
                }
                let act = if it.prod >= prods.n_rules {
                    LrAction::Accept
                } else {
                    LrAction::Reduce(it.prod)
                };
                for &a in &lookahead[s][ki] {
                    action[s][columns[a].unwrap()].push(act);
                }
            }
            for cell in action[s].iter_mut() {
                cell.sort_unstable();
                cell.dedup();
            }
        }
        let mut symbol_names: Vec<String> = bg.symbols.iter().map(|s| s.name.clone()).collect();
        symbol_names.push("<EOT>".to_string());
        Ok(LrTables {
            states,
            eot,
            start_state: 0,
            columns,
            column_symbols,
            nt_columns,
            action,
            goto,
            rule_lens: bg.rules.iter().map(|r| r.rhs.len()).collect(),
            rule_lhs: bg.rules.iter().map(|r| r.lhs).collect(),
            symbol_names,
        })
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    /// Actions for `state` on terminal (or EOT) `lookahead`; empty if none.
    pub fn actions(&self, state: StateId, lookahead: SymbolId) -> &[LrAction] {
        match self.columns.get(lookahead).copied().flatten() {
            Some(c) => &self.action[state][c],
            None => &[],
        }
    }

    pub fn goto(&self, state: StateId, nonterminal: SymbolId) -> Option<StateId> {
        self.nt_columns
            .get(nonterminal)
            .copied()
            .flatten()
            .and_then(|c| self.goto[state][c])
    }

    pub fn shift_target(&self, state: StateId, terminal: SymbolId) -> Option<StateId> {
        self.actions(state, terminal).iter().find_map(|a| match a {
            LrAction::Shift(t) => Some(*t),
            _ => None,
        })
    }

    pub fn rule_len(&self, rule: usize) -> usize {
        self.rule_lens[rule]
    }

    pub fn rule_lhs(&self, rule: usize) -> SymbolId {
        self.rule_lhs[rule]
    }

    pub fn n_rules(&self) -> usize {
        self.rule_lens.len()
    }

    pub fn symbol_name(&self, s: SymbolId) -> &str {
        &self.symbol_names[s]
    }

    /// Lookahead symbols (terminals then EOT) in column order.
    pub fn lookaheads(&self) -> &[SymbolId] {
        &self.column_symbols
    }

    /// Every populated (state, lookahead) cell with its action set.
    pub fn contexts(&self) -> impl Iterator<Item = (StateId, SymbolId, &[LrAction])> + '_ {
        self.action.iter().enumerate().flat_map(move |(s, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, cell)| !cell.is_empty())
                .map(move |(c, cell)| (s, self.column_symbols[c], cell.as_slice()))
        })
    }

    pub fn conflict_cells(&self) -> usize {
        self.contexts().filter(|(_, _, cell)| cell.len() > 1).count()
    }

    /// One line per (state, symbol, action) triple, followed by gotos.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (s, la, cell) in self.contexts() {
            for a in cell {
                let _ = writeln!(out, "{s}\t{}\t{a}", self.symbol_name(la));
            }
        }
        for (s, row) in self.goto.iter().enumerate() {
            for (n, sym) in self.nt_columns.iter().enumerate() {
                if let Some(c) = sym {
                    if let Some(t) = row[*c] {
                        let _ = writeln!(out, "{s}\t{}\tgoto {t}", self.symbol_name(n));
                    }
                }
            }
        }
        out
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.dump().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(terms: &[&str], rules: &[(&str, &[&str])]) -> BackboneGrammar {
        BackboneGrammar::from_plain_rules(terms, "S", rules)
    }

    fn names(bg: &BackboneGrammar, set: &BTreeSet<SymbolId>) -> Vec<String> {
        set.iter().map(|&s| bg.name(s).to_string()).collect()
    }

    #[test]
    fn first_single_terminal() {
        let bg = plain(&["a"], &[("S", &["a"])]);
        let f = first_sets(&bg);
        assert_eq!(names(&bg, &f[&bg.lookup("S").unwrap()]), vec!["a"]);
    }

    #[test]
    fn first_through_nonterminal() {
        let bg = plain(&["a", "b"], &[("S", &["A", "b"]), ("A", &["a"])]);
        let f = first_sets(&bg);
        assert_eq!(names(&bg, &f[&bg.lookup("S").unwrap()]), vec!["a"]);
        assert_eq!(names(&bg, &f[&bg.lookup("A").unwrap()]), vec!["a"]);
    }

    #[test]
    fn first_with_alternatives() {
        let bg = plain(&["a", "b", "c"], &[("S", &["A", "b"]), ("S", &["c"]), ("A", &["a"])]);
        let f = first_sets(&bg);
        assert_eq!(names(&bg, &f[&bg.lookup("S").unwrap()]), vec!["a", "c"]);
    }

    #[test]
    fn deterministic_grammar_has_four_states_and_no_conflicts() {
        let bg = plain(&["a", "b"], &[("S", &["a", "b"])]);
        let t = LrTables::build(&bg).unwrap();
        assert_eq!(t.n_states(), 4);
        let a = bg.lookup("a").unwrap();
        assert!(matches!(t.actions(0, a), [LrAction::Shift(_)]));
        assert_eq!(t.conflict_cells(), 0);
    }

    #[test]
    fn ambiguous_concatenation_conflict() {
        let bg = plain(&["x"], &[("S", &["S", "S"]), ("S", &["x"])]);
        let t = LrTables::build(&bg).unwrap();
        let x = bg.lookup("x").unwrap();
        let found = (0..t.n_states()).any(|s| {
            let cell = t.actions(s, x);
            cell.iter().any(|a| matches!(a, LrAction::Shift(_)))
                && cell.iter().any(|a| matches!(a, LrAction::Reduce(_)))
        });
        assert!(found);
    }

    #[test]
    fn duplicate_rules_reduce_reduce() {
        let bg = plain(&["a"], &[("S", &["a"]), ("S", &["a"])]);
        let t = LrTables::build(&bg).unwrap();
        let found = (0..t.n_states()).any(|s| t.actions(s, t.eot) == [LrAction::Reduce(0), LrAction::Reduce(1)]);
        assert!(found);
    }

    #[test]
    fn no_viable_sentences() {
        let bg = plain(&["a"], &[]);
        assert_eq!(LrTables::build(&bg).unwrap_err(), TableError::NoViableSentences);
    }

    #[test]
    fn lalr_lookaheads_are_not_lr0() {
        // Classic grammar where LR(0) reductions would be too liberal.
        let bg = plain(
            &["a", "b", "c", "d", "e"],
            &[
                ("S", &["a", "A", "d"]),
                ("S", &["b", "B", "d"]),
                ("S", &["a", "B", "e"]),
                ("S", &["b", "A", "e"]),
                ("A", &["c"]),
                ("B", &["c"]),
            ],
        );
        let t = LrTables::build(&bg).unwrap();
        // LALR merges the two `c.` states into one with a reduce/reduce conflict
        // on d and e; no reduction may appear on other lookaheads.
        let a = bg.lookup("a").unwrap();
        for s in 0..t.n_states() {
            assert!(t.actions(s, a).iter().all(|x| matches!(x, LrAction::Shift(_))));
            assert!(t
                .actions(s, t.eot)
                .iter()
                .all(|x| !matches!(x, LrAction::Reduce(4) | LrAction::Reduce(5))));
        }
        assert!(t.conflict_cells() >= 2);
    }

    #[test]
    fn dump_is_stable() {
        let bg = plain(&["x"], &[("S", &["S", "S"]), ("S", &["x"])]);
        assert_eq!(
            LrTables::build(&bg).unwrap().dump(),
            LrTables::build(&bg).unwrap().dump()
        );
    }
}
