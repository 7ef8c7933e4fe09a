//! Brute-force reference enumerator used to cross-check the GLR parser. It
//! shares nothing with the parser except the residue semantics.

use std::collections::{HashMap, HashSet};

use super::{admits_root, reduce_residue, DerivationTree};
use crate::grammar::{BackboneGrammar, FeatureStructure, SymbolId};

/// Longest input the oracle accepts.
pub const ORACLE_MAX_LEN: usize = 20;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub trees: Vec<DerivationTree>,
    /// Set when some tree list hit the cap.
    pub truncated: bool,
}

type Entry = Vec<(DerivationTree, FeatureStructure)>;

struct Oracle<'g> {
    bg: &'g BackboneGrammar,
    ids: &'g [SymbolId],
    cap: usize,
    memo: HashMap<(SymbolId, usize, usize), Entry>,
    active: HashSet<(SymbolId, usize, usize)>,
    truncated: bool,
}

impl Oracle<'_> {
    fn trees(&mut self, sym: SymbolId, i: usize, j: usize) -> Entry {
        if self.bg.is_terminal(sym) {
            return if j == i + 1 && self.ids[i] == sym {
                vec![(DerivationTree::leaf(sym, i), FeatureStructure::new())]
            } else {
                Vec::new()
            };
        }
        if let Some(hit) = self.memo.get(&(sym, i, j)) {
            return hit.clone();
        }
        if !self.active.insert((sym, i, j)) {
            return Vec::new();
        }
        let bg = self.bg;
        let mut out: Entry = Vec::new();
        'rules: for rule in bg.rules_for(sym) {
            let m = rule.rhs.len();
            if m > j - i {
                continue;
            }
            for cuts in splits(i, j, m) {
                let mut partial: Vec<(Vec<DerivationTree>, Vec<FeatureStructure>)> = vec![(Vec::new(), Vec::new())];
                for (k, &child) in rule.rhs.iter().enumerate() {
                    let options = self.trees(child, cuts[k], cuts[k + 1]);
                    let mut next = Vec::new();
                    for (ts, rs) in &partial {
                        for (t, r) in &options {
                            let mut ts = ts.clone();
                            let mut rs = rs.clone();
                            ts.push(t.clone());
                            rs.push(r.clone());
                            next.push((ts, rs));
                        }
                    }
                    partial = next;
                    if partial.is_empty() {
                        break;
                    }
                }
                for (children, residues) in partial {
                    let refs: Vec<&FeatureStructure> = residues.iter().collect();
                    let Some(res) = reduce_residue(rule, &refs) else {
                        continue;
                    };
                    if out.len() == self.cap {
                        self.truncated = true;
                        break 'rules;
                    }
                    out.push((
                        DerivationTree {
                            symbol: sym,
                            start: i,
                            end: j,
                            rule: Some(rule.id),
                            children,
                        },
                        res,
                    ));
                }
            }
        }
        self.active.remove(&(sym, i, j));
        self.memo.insert((sym, i, j), out.clone());
        out
    }
}

/// All ways to cut [i, j) into `m` nonempty consecutive pieces, as boundary
/// vectors of length m + 1, in lexicographic order.
fn splits(i: usize, j: usize, m: usize) -> Vec<Vec<usize>> {
    fn go(at: usize, j: usize, left: usize, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 1 {
            acc.push(j);
            out.push(acc.clone());
            acc.pop();
            return;
        }
        for next in at + 1..=j - (left - 1) {
            acc.push(next);
            go(next, j, left - 1, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::new();
    go(i, j, m, &mut vec![i], &mut out);
    out
}

/// Every derivation of the terminal sequence `ids`, at most `cap` of them.
///
/// # Panics
/// If the input is longer than [`ORACLE_MAX_LEN`].
pub fn oracle_enumerate(ids: &[SymbolId], bg: &BackboneGrammar, cap: usize) -> OracleResult {
    assert!(
        ids.len() <= ORACLE_MAX_LEN,
        "oracle input limited to {ORACLE_MAX_LEN} tokens"
    );
    let mut o = Oracle {
        bg,
        ids,
        cap,
        memo: HashMap::new(),
        active: HashSet::new(),
        truncated: false,
    };
    let mut trees = Vec::new();
    if !ids.is_empty() {
        for &s in &bg.starts {
            for (t, r) in o.trees(s, 0, ids.len()) {
                if !admits_root(bg, &r) {
                    continue;
                }
                if trees.len() == cap {
                    o.truncated = true;
                    break;
                }
                trees.push(t);
            }
        }
    }
    OracleResult {
        trees,
        truncated: o.truncated,
    }
}
