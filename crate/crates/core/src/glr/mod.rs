//! Generalized LR parsing over a graph-structured stack. Residue features are
//! unified at every reduce; a failed unification contributes nothing to the
//! forest.

mod forest;
mod oracle;

pub use forest::{
    count_analyses, ChildRef, DerivationTree, ForestNode, NodeId, Pack, ParseForest, ParseStats, SchemaTree,
};
pub use oracle::{oracle_enumerate, OracleResult};

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use thiserror::Error;

use crate::grammar::{BackboneGrammar, BackboneRule, FeatureStructure, Substitution, SymbolId};
use crate::lalr::{LrAction, LrTables, StateId};
use forest::ForestBuilder;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub label: String,
    pub index: usize,
}

impl Token {
    pub fn new(surface: impl Into<String>, label: impl Into<String>, index: usize) -> Self {
        Token {
            surface: surface.into(),
            label: label.into(),
            index,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.surface, self.label)
    }
}

/// Splits a line of `surface_LABEL` tokens (the label follows the last `_`).
pub fn read_tokens(line: &str) -> Result<Vec<Token>, ParseError> {
    line.split_whitespace()
        .enumerate()
        .map(|(i, t)| match t.rsplit_once('_') {
            Some((s, l)) if !s.is_empty() && !l.is_empty() => Ok(Token::new(s, l, i)),
            _ => Err(ParseError::MalformedToken {
                index: i,
                text: t.to_string(),
            }),
        })
        .collect()
}

/// Tokens from bare labels, with the label doubling as surface form.
pub fn tokens_from_labels<S: AsRef<str>>(labels: &[S]) -> Vec<Token> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| Token::new(l.as_ref(), l.as_ref(), i))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Wall-clock budget per sentence; `None` disables the check.
    pub timeout: Option<Duration>,
    /// Saturation point for [`count_analyses`]; unbounded when `None`.
    pub count_cap: Option<BigUint>,
    /// Spans no constituent may cross.
    pub brackets: Vec<(usize, usize)>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            timeout: Some(Duration::from_secs(30)),
            count_cap: None,
            brackets: Vec::new(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("token {index}: malformed token `{text}` (expected surface_LABEL)")]
    MalformedToken { index: usize, text: String },
    #[error("token {index}: unknown label `{label}`")]
    UnknownLabel { index: usize, label: String },
    /// Dead end: no stack could shift the token at `position` (or, when
    /// `position` equals the input length, none reached accept).
    #[error("no parse: dead end at token {position} after {shifted} shifted tokens")]
    NoParse { position: usize, shifted: usize },
    #[error("timed out after {elapsed:?}")]
    Timeout { elapsed: Duration, stats: ParseStats },
    #[error("ill-nested constraint brackets ({0}, {1}) and ({2}, {3})")]
    IllNestedBrackets(usize, usize, usize, usize),
    #[error("constraint bracket ({0}, {1}) outside the sentence")]
    BracketOutOfRange(usize, usize),
}

/// True if the spans overlap without either containing the other.
pub fn crosses(a: (usize, usize), b: (usize, usize)) -> bool {
    let overlap = a.0 < b.1 && b.0 < a.1;
    let a_in_b = b.0 <= a.0 && a.1 <= b.1;
    let b_in_a = a.0 <= b.0 && b.1 <= a.1;
    overlap && !a_in_b && !b_in_a
}

/// Mother residue for one application of `rule` to children with the given
/// residue classes, or `None` if unification fails. The result is canonical
/// so equal classes compare equal.
pub fn reduce_residue(rule: &BackboneRule, children: &[&FeatureStructure]) -> Option<FeatureStructure> {
    let mut subst = Substitution::new();
    for (i, (constraint, child)) in rule.daughter_residue.iter().zip(children).enumerate() {
        if child.is_empty() || constraint.is_empty() {
            continue;
        }
        let child = child.renamed(&format!("#{i}"));
        if !subst.unify_into(constraint, &child) {
            return None;
        }
    }
    Some(rule.mother_residue.substituted(&subst).canonical())
}

/// Whether a root residue class satisfies the start category's residue.
pub fn admits_root(bg: &BackboneGrammar, residue: &FeatureStructure) -> bool {
    let mut subst = Substitution::new();
    subst.unify_into(&bg.start_residue, &residue.renamed("#"))
}

/// Maps token labels to terminal ids, rejecting unknown labels.
pub fn terminal_ids(bg: &BackboneGrammar, tokens: &[Token]) -> Result<Vec<SymbolId>, ParseError> {
    tokens
        .iter()
        .enumerate()
        .map(|(i, t)| match bg.lookup(&t.label) {
            Some(id) if bg.is_terminal(id) => Ok(id),
            _ => Err(ParseError::UnknownLabel {
                index: i,
                label: t.label.clone(),
            }),
        })
        .collect()
}

fn check_brackets(brackets: &[(usize, usize)], n: usize) -> Result<(), ParseError> {
    for &(a, b) in brackets {
        if a >= b || b > n {
            return Err(ParseError::BracketOutOfRange(a, b));
        }
    }
    for (i, &x) in brackets.iter().enumerate() {
        for &y in &brackets[i + 1..] {
            if crosses(x, y) {
                return Err(ParseError::IllNestedBrackets(x.0, x.1, y.0, y.1));
            }
        }
    }
    Ok(())
}

struct GssLink {
    to: usize,
    label: ChildRef,
}

struct GssNode {
    state: StateId,
    pos: usize,
    links: Vec<GssLink>,
}

struct Parser<'a> {
    tables: &'a LrTables,
    bg: &'a BackboneGrammar,
    opts: &'a ParseOptions,
    gss: Vec<GssNode>,
    forest: ForestBuilder,
    stats: ParseStats,
    started: Instant,
}

/// One pending reduction: stack node, rule, and (for reductions triggered
/// by a link added to an already-active node) the link the path must use.
type Reduction = (usize, usize, Option<usize>);

impl Parser<'_> {
    fn timed_out(&self) -> Result<(), ParseError> {
        match self.opts.timeout {
            Some(limit) if self.started.elapsed() >= limit => Err(ParseError::Timeout {
                elapsed: self.started.elapsed(),
                stats: self.stats,
            }),
            _ => Ok(()),
        }
    }

    fn paths(&self, v: usize, len: usize, first: Option<usize>) -> Vec<(usize, Vec<ChildRef>)> {
        fn walk(
            gss: &[GssNode],
            v: usize,
            remaining: usize,
            first: Option<usize>,
            acc: &mut Vec<ChildRef>,
            out: &mut Vec<(usize, Vec<ChildRef>)>,
        ) {
            if remaining == 0 {
                let mut labels = acc.clone();
                labels.reverse();
                out.push((v, labels));
                return;
            }
            for (li, link) in gss[v].links.iter().enumerate() {
                if first.is_some_and(|f| f != li) {
                    continue;
                }
                acc.push(link.label);
                walk(gss, link.to, remaining - 1, None, acc, out);
                acc.pop();
            }
        }
        let mut out = Vec::new();
        walk(&self.gss, v, len, first, &mut Vec::new(), &mut out);
        out
    }

    fn queue_reductions(&mut self, w: usize, la: SymbolId, link: Option<usize>, work: &mut VecDeque<Reduction>) {
        let cell = self.tables.actions(self.gss[w].state, la);
        if link.is_none() && cell.len() > 1 {
            self.stats.forks += cell.len() - 1;
        }
        for a in cell {
            if let LrAction::Reduce(r) = *a {
                work.push_back((w, r, link));
            }
        }
    }

    fn reduce_all(
        &mut self,
        pos: usize,
        la: SymbolId,
        frontier: &mut BTreeMap<StateId, usize>,
    ) -> Result<(), ParseError> {
        let mut work: VecDeque<Reduction> = VecDeque::new();
        let nodes: Vec<usize> = frontier.values().copied().collect();
        for v in nodes {
            self.queue_reductions(v, la, None, &mut work);
        }
        while let Some((v, r, first)) = work.pop_front() {
            self.stats.reduces += 1;
            if self.stats.reduces.is_multiple_of(256) {
                self.timed_out()?;
            }
            let bg = self.bg;
            let rule = &bg.rules[r];
            for (u, labels) in self.paths(v, rule.rhs.len(), first) {
                let start = self.gss[u].pos;
                if self.opts.brackets.iter().any(|&b| crosses((start, pos), b)) {
                    self.stats.constraint_pruned += 1;
                    continue;
                }
                let child_res: Vec<&FeatureStructure> =
                    labels.iter().map(|&(n, k)| &self.forest.get(n).residues[k]).collect();
                let Some(residue) = reduce_residue(rule, &child_res) else {
                    self.stats.unification_failures += 1;
                    continue;
                };
                let node = self.forest.node(rule.lhs, start, pos);
                let k = self.forest.residue_class(node, residue);
                self.forest.add_pack(
                    node,
                    Pack {
                        rule: r,
                        children: labels,
                        residue: k,
                    },
                );
                let Some(s) = self.tables.goto(self.gss[u].state, rule.lhs) else {
                    continue;
                };
                let label = (node, k);
                match frontier.get(&s) {
                    Some(&w) => {
                        if self.gss[w].links.iter().any(|l| l.to == u && l.label == label) {
                            continue;
                        }
                        self.gss[w].links.push(GssLink { to: u, label });
                        let li = self.gss[w].links.len() - 1;
                        self.queue_reductions(w, la, Some(li), &mut work);
                    }
                    None => {
                        let w = self.gss.len();
                        self.gss.push(GssNode {
                            state: s,
                            pos,
                            links: vec![GssLink { to: u, label }],
                        });
                        frontier.insert(s, w);
                        self.queue_reductions(w, la, None, &mut work);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Parses `tokens` into a packed forest containing exactly the backbone
/// derivations whose residue constraints unify (and, if constraint brackets
/// are given, that cross none of them).
pub fn parse(
    tokens: &[Token],
    tables: &LrTables,
    bg: &BackboneGrammar,
    opts: &ParseOptions,
) -> Result<ParseForest, ParseError> {
    let ids = terminal_ids(bg, tokens)?;
    parse_ids(&ids, tables, bg, opts)
}

/// As [`parse`], over terminal ids.
pub fn parse_ids(
    ids: &[SymbolId],
    tables: &LrTables,
    bg: &BackboneGrammar,
    opts: &ParseOptions,
) -> Result<ParseForest, ParseError> {
    let n = ids.len();
    check_brackets(&opts.brackets, n)?;
    let mut p = Parser {
        tables,
        bg,
        opts,
        gss: vec![GssNode {
            state: tables.start_state,
            pos: 0,
            links: Vec::new(),
        }],
        forest: ForestBuilder::default(),
        stats: ParseStats::default(),
        started: Instant::now(),
    };
    let mut frontier: BTreeMap<StateId, usize> = BTreeMap::from([(tables.start_state, 0)]);
    for pos in 0..=n {
        p.timed_out()?;
        let la = ids.get(pos).copied().unwrap_or(tables.eot);
        p.reduce_all(pos, la, &mut frontier)?;
        if pos == n {
            break;
        }
        let mut next: BTreeMap<StateId, usize> = BTreeMap::new();
        let leaf = p.forest.leaf(la, pos);
        for &v in frontier.values() {
            let Some(t) = tables.shift_target(p.gss[v].state, la) else {
                continue;
            };
            let w = *next.entry(t).or_insert_with(|| {
                p.gss.push(GssNode {
                    state: t,
                    pos: pos + 1,
                    links: Vec::new(),
                });
                p.gss.len() - 1
            });
            p.gss[w].links.push(GssLink {
                to: v,
                label: (leaf, 0),
            });
        }
        if next.is_empty() {
            return Err(ParseError::NoParse {
                position: pos,
                shifted: pos,
            });
        }
        p.stats.tokens_consumed = pos + 1;
        frontier = next;
    }

    let mut roots = Vec::new();
    for &w in frontier.values() {
        if !tables.actions(p.gss[w].state, tables.eot).contains(&LrAction::Accept) {
            continue;
        }
        for link in &p.gss[w].links {
            if link.to == 0 && admits_root(bg, &p.forest.get(link.label.0).residues[link.label.1]) {
                roots.push(link.label);
            }
        }
    }
    if roots.is_empty() {
        return Err(ParseError::NoParse {
            position: n,
            shifted: n,
        });
    }
    p.stats.gss_nodes = p.gss.len();
    let stats = p.stats;
    Ok(p.forest.finish(roots, ids.to_vec(), stats, opts.count_cap.clone()))
}

/// Parse restricted to analyses none of whose constituents cross `brackets`.
pub fn constrained_parse(
    tokens: &[Token],
    brackets: &[(usize, usize)],
    tables: &LrTables,
    bg: &BackboneGrammar,
    opts: &ParseOptions,
) -> Result<ParseForest, ParseError> {
    let opts = ParseOptions {
        brackets: brackets.to_vec(),
        ..opts.clone()
    };
    parse(tokens, tables, bg, &opts)
}

/// Re-checks a derivation rule by rule against the backbone, including
/// residue unification; returns the root residue class if valid.
pub fn check_tree(tree: &DerivationTree, bg: &BackboneGrammar, ids: &[SymbolId]) -> Option<FeatureStructure> {
    match tree.rule {
        None => (tree.end == tree.start + 1 && ids.get(tree.start) == Some(&tree.symbol)).then(FeatureStructure::new),
        Some(r) => {
            let rule = bg.rules.get(r)?;
            if rule.lhs != tree.symbol || rule.rhs.len() != tree.children.len() {
                return None;
            }
            let mut at = tree.start;
            let mut residues = Vec::new();
            for (c, &sym) in tree.children.iter().zip(&rule.rhs) {
                if c.symbol != sym || c.start != at {
                    return None;
                }
                at = c.end;
                residues.push(check_tree(c, bg, ids)?);
            }
            if at != tree.end {
                return None;
            }
            let refs: Vec<&FeatureStructure> = residues.iter().collect();
            reduce_residue(rule, &refs)
        }
    }
}
