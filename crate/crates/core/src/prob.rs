//! Probabilities over LR transitions: (state, lookahead) → action events,
//! counted from parse histories, smoothed with Good-Turing, and used to rank
//! the analyses in a packed forest.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::rc::Rc;

use thiserror::Error;

use crate::glr::{DerivationTree, ParseForest};
use crate::grammar::{BackboneGrammar, SymbolId};
use crate::lalr::{LrAction, LrTables, StateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TransitionEvent {
    pub state: StateId,
    pub lookahead: SymbolId,
    pub action: LrAction,
}

impl TransitionEvent {
    pub fn context(&self) -> (StateId, SymbolId) {
        (self.state, self.lookahead)
    }
}

pub type ParseHistory = Vec<TransitionEvent>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HistoryError {
    #[error("event {index}: action `{action}` not available in state {state} on `{lookahead}`")]
    Inconsistent {
        index: usize,
        state: StateId,
        lookahead: String,
        action: String,
    },
    #[error("tree uses rule {0}, which the tables do not have")]
    UnknownRule(usize),
    #[error("history does not describe a complete derivation")]
    Incomplete,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("transition ({state}, {lookahead}, {action}) is not in the action table")]
    UnknownEvent {
        state: StateId,
        lookahead: SymbolId,
        action: LrAction,
    },
    #[error("n-best needs n >= 1")]
    ZeroN,
    #[error("model file line {line}: {msg}")]
    Format { line: usize, msg: String },
}

fn lookahead_at(ids: &[SymbolId], pos: usize, tables: &LrTables) -> SymbolId {
    ids.get(pos).copied().unwrap_or(tables.eot)
}

/// The shift/reduce/accept sequence an LR parser performs to build `tree`,
/// each event tagged with the state and lookahead it occurred in.
pub fn extract_history(tree: &DerivationTree, tables: &LrTables) -> Result<ParseHistory, HistoryError> {
    let mut ids = Vec::new();
    tree.walk(&mut |t| {
        if t.is_leaf() {
            ids.push(t.symbol);
        }
    });
    let mut sim = Simulator {
        tables,
        ids: &ids,
        stack: vec![tables.start_state],
        events: Vec::new(),
    };
    sim.visit(tree)?;
    let top = *sim.stack.last().expect("nonempty stack");
    sim.emit(top, tables.eot, LrAction::Accept)?;
    Ok(sim.events)
}

struct Simulator<'a> {
    tables: &'a LrTables,
    ids: &'a [SymbolId],
    stack: Vec<StateId>,
    events: ParseHistory,
}

impl Simulator<'_> {
    fn emit(&mut self, state: StateId, lookahead: SymbolId, action: LrAction) -> Result<(), HistoryError> {
        if !self.tables.actions(state, lookahead).contains(&action) {
            return Err(HistoryError::Inconsistent {
                index: self.events.len(),
                state,
                lookahead: self.tables.symbol_name(lookahead).to_string(),
                action: action.to_string(),
            });
        }
        self.events.push(TransitionEvent {
            state,
            lookahead,
            action,
        });
        Ok(())
    }

    fn visit(&mut self, t: &DerivationTree) -> Result<(), HistoryError> {
        let top = *self.stack.last().expect("nonempty stack");
        let Some(rule) = t.rule else {
            let target = self
                .tables
                .shift_target(top, t.symbol)
                .ok_or_else(|| HistoryError::Inconsistent {
                    index: self.events.len(),
                    state: top,
                    lookahead: self.tables.symbol_name(t.symbol).to_string(),
                    action: "shift".to_string(),
                })?;
            self.emit(top, t.symbol, LrAction::Shift(target))?;
            self.stack.push(target);
            return Ok(());
        };
        if rule >= self.tables.n_rules() {
            return Err(HistoryError::UnknownRule(rule));
        }
        for c in &t.children {
            self.visit(c)?;
        }
        let top = *self.stack.last().expect("nonempty stack");
        let la = lookahead_at(self.ids, t.end, self.tables);
        self.emit(top, la, LrAction::Reduce(rule))?;
        let len = self.tables.rule_len(rule);
        if self.stack.len() <= len {
            return Err(HistoryError::Incomplete);
        }
        self.stack.truncate(self.stack.len() - len);
        let under = *self.stack.last().expect("nonempty stack");
        let lhs = self.tables.rule_lhs(rule);
        let next = self.tables.goto(under, lhs).ok_or_else(|| HistoryError::Inconsistent {
            index: self.events.len(),
            state: under,
            lookahead: self.tables.symbol_name(la).to_string(),
            action: format!("goto {}", self.tables.symbol_name(lhs)),
        })?;
        self.stack.push(next);
        Ok(())
    }
}

/// Rebuilds the derivation tree a history describes.
pub fn history_to_tree(history: &[TransitionEvent], tables: &LrTables) -> Result<DerivationTree, HistoryError> {
    let mut nodes: Vec<DerivationTree> = Vec::new();
    let mut pos = 0;
    for (i, e) in history.iter().enumerate() {
        match e.action {
            LrAction::Shift(_) => {
                nodes.push(DerivationTree::leaf(e.lookahead, pos));
                pos += 1;
            }
            LrAction::Reduce(r) => {
                if r >= tables.n_rules() {
                    return Err(HistoryError::UnknownRule(r));
                }
                let len = tables.rule_len(r);
                if nodes.len() < len {
                    return Err(HistoryError::Incomplete);
                }
                let children = nodes.split_off(nodes.len() - len);
                nodes.push(DerivationTree {
                    symbol: tables.rule_lhs(r),
                    start: children[0].start,
                    end: children[len - 1].end,
                    rule: Some(r),
                    children,
                });
            }
            LrAction::Accept => {
                if i + 1 != history.len() || nodes.len() != 1 {
                    return Err(HistoryError::Incomplete);
                }
                return Ok(nodes.pop().expect("one node"));
            }
        }
    }
    Err(HistoryError::Incomplete)
}

/// Event frequencies plus per-context totals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransitionCounts {
    pub counts: BTreeMap<TransitionEvent, u64>,
    pub context_totals: BTreeMap<(StateId, SymbolId), u64>,
}

impl TransitionCounts {
    pub fn add(&mut self, e: TransitionEvent, n: u64) {
        *self.counts.entry(e).or_default() += n;
        *self.context_totals.entry(e.context()).or_default() += n;
    }

    /// Adds `other` in place; train(a ++ b) = merge(train(a), train(b)).
    pub fn merge(&mut self, other: &TransitionCounts) {
        for (&e, &n) in &other.counts {
            self.add(e, n);
        }
    }

    pub fn get(&self, e: &TransitionEvent) -> u64 {
        self.counts.get(e).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.context_totals.values().sum()
    }
}

pub fn train<'a>(histories: impl IntoIterator<Item = &'a ParseHistory>) -> TransitionCounts {
    let mut c = TransitionCounts::default();
    for h in histories {
        for &e in h {
            c.add(e, 1);
        }
    }
    c
}

pub const SMOOTHING_METHOD: &str = "simple-good-turing";
pub const SMOOTHING_DETAIL: &str =
    "r*=(r+1)N[r+1]/N[r], mle-fallback-if-N[r+1]=0; unseen-mass=N1/(N+N1) with N1>=1; context=(state,lookahead)";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub method: String,
    pub detail: String,
    /// N_r over all (state, lookahead, action) cells of the table, r = 0 included.
    pub count_of_counts: BTreeMap<u64, u64>,
    pub unseen_mass: f64,
    pub grammar_hash: String,
    pub table_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbModel {
    pub log_probs: BTreeMap<TransitionEvent, f64>,
    /// Log-probability of each unseen action, per context that has any.
    pub unseen_log_probs: BTreeMap<(StateId, SymbolId), f64>,
    pub counts: TransitionCounts,
    pub meta: ModelMeta,
}

/// Smooths raw counts into a per-(state, lookahead) distribution over the
/// table's possible actions.
pub fn smooth(counts: &TransitionCounts, tables: &LrTables) -> ProbModel {
    let mut n_r: BTreeMap<u64, u64> = BTreeMap::new();
    for (s, la, cell) in tables.contexts() {
        for &action in cell {
            let r = counts.get(&TransitionEvent {
                state: s,
                lookahead: la,
                action,
            });
            *n_r.entry(r).or_default() += 1;
        }
    }
    let n_total: u64 = tables
        .contexts()
        .flat_map(|(s, la, cell)| {
            cell.iter().map(move |&action| TransitionEvent {
                state: s,
                lookahead: la,
                action,
            })
        })
        .map(|e| counts.get(&e))
        .sum();
    let n1 = n_r.get(&1).copied().unwrap_or(0).max(1) as f64;
    let unseen_mass = n1 / (n_total as f64 + n1);
    let adjusted = |r: u64| -> f64 {
        let nr = n_r.get(&r).copied().unwrap_or(0);
        let nr1 = n_r.get(&(r + 1)).copied().unwrap_or(0);
        if nr > 0 && nr1 > 0 {
            (r + 1) as f64 * nr1 as f64 / nr as f64
        } else {
            r as f64
        }
    };

    let mut log_probs = BTreeMap::new();
    let mut unseen_log_probs = BTreeMap::new();
    for (s, la, cell) in tables.contexts() {
        let events: Vec<(TransitionEvent, u64)> = cell
            .iter()
            .map(|&action| {
                let e = TransitionEvent {
                    state: s,
                    lookahead: la,
                    action,
                };
                (e, counts.get(&e))
            })
            .collect();
        let seen: Vec<(TransitionEvent, f64)> = events
            .iter()
            .filter(|(_, r)| *r > 0)
            .map(|&(e, r)| (e, adjusted(r)))
            .collect();
        let unseen = events.len() - seen.len();
        if seen.is_empty() {
            unseen_log_probs.insert((s, la), -(events.len() as f64).ln());
            continue;
        }
        let sum: f64 = seen.iter().map(|(_, a)| a).sum();
        let seen_mass = if unseen == 0 { 1.0 } else { 1.0 - unseen_mass };
        for (e, a) in seen {
            log_probs.insert(e, (seen_mass * a / sum).ln());
        }
        if unseen > 0 {
            unseen_log_probs.insert((s, la), (unseen_mass / unseen as f64).ln());
        }
    }
    ProbModel {
        log_probs,
        unseen_log_probs,
        counts: counts.clone(),
        meta: ModelMeta {
            method: SMOOTHING_METHOD.to_string(),
            detail: SMOOTHING_DETAIL.to_string(),
            count_of_counts: n_r,
            unseen_mass,
            grammar_hash: String::from("-"),
            table_hash: tables.hash(),
        },
    }
}

impl ProbModel {
    pub fn log_prob(&self, e: &TransitionEvent, tables: &LrTables) -> Result<f64, ModelError> {
        if let Some(&lp) = self.log_probs.get(e) {
            return Ok(lp);
        }
        if tables.actions(e.state, e.lookahead).contains(&e.action) {
            if let Some(&lp) = self.unseen_log_probs.get(&e.context()) {
                return Ok(lp);
            }
        }
        Err(ModelError::UnknownEvent {
            state: e.state,
            lookahead: e.lookahead,
            action: e.action,
        })
    }

    /// Probability of every possible action in one context.
    pub fn distribution(&self, state: StateId, lookahead: SymbolId, tables: &LrTables) -> Vec<(LrAction, f64)> {
        tables
            .actions(state, lookahead)
            .iter()
            .map(|&action| {
                let e = TransitionEvent {
                    state,
                    lookahead,
                    action,
                };
                (action, self.log_prob(&e, tables).map(f64::exp).unwrap_or(0.0))
            })
            .collect()
    }

    /// Largest deviation from 1 of any context's total probability.
    pub fn normalization_error(&self, tables: &LrTables) -> f64 {
        tables
            .contexts()
            .map(|(s, la, _)| {
                let total: f64 = self.distribution(s, la, tables).iter().map(|(_, p)| p).sum();
                (total - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let m = &self.meta;
        let _ = writeln!(out, "problr-model 1");
        let _ = writeln!(out, "grammar {}", m.grammar_hash);
        let _ = writeln!(out, "tables {}", m.table_hash);
        let _ = writeln!(out, "smoothing {} {}", m.method, m.detail);
        let _ = writeln!(out, "unseen-mass {}", m.unseen_mass);
        let coc: Vec<String> = m.count_of_counts.iter().map(|(r, n)| format!("{r}:{n}")).collect();
        let _ = writeln!(out, "count-of-counts {}", coc.join(" "));
        for (e, lp) in &self.log_probs {
            let _ = writeln!(
                out,
                "event {} {} {} {} {}",
                e.state,
                e.lookahead,
                ActionCode(e.action),
                self.counts.get(e),
                lp + 0.0
            );
        }
        for ((s, la), lp) in &self.unseen_log_probs {
            // `+ 0.0` turns -0 into 0 so the file reads cleanly
            let _ = writeln!(out, "unseen {s} {la} {}", lp + 0.0);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<ProbModel, ModelError> {
        let err = |line: usize, msg: &str| ModelError::Format {
            line: line + 1,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "problr-model 1")) => {}
            _ => return Err(err(0, "expected header `problr-model 1`")),
        }
        let mut meta = ModelMeta {
            method: String::new(),
            detail: String::new(),
            count_of_counts: BTreeMap::new(),
            unseen_mass: 0.0,
            grammar_hash: String::new(),
            table_hash: String::new(),
        };
        let mut log_probs = BTreeMap::new();
        let mut unseen_log_probs = BTreeMap::new();
        let mut counts = TransitionCounts::default();
        for (i, line) in lines {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            let fields: Vec<&str> = rest.split_whitespace().collect();
            let num = |s: &str| s.parse::<usize>().map_err(|_| err(i, "bad integer"));
            let float = |s: &str| s.parse::<f64>().map_err(|_| err(i, "bad number"));
            match key {
                "grammar" => meta.grammar_hash = rest.to_string(),
                "tables" => meta.table_hash = rest.to_string(),
                "smoothing" => {
                    let (m, d) = rest.split_once(' ').unwrap_or((rest, ""));
                    meta.method = m.to_string();
                    meta.detail = d.to_string();
                }
                "unseen-mass" => meta.unseen_mass = float(rest)?,
                "count-of-counts" => {
                    for pair in fields {
                        let (r, n) = pair.split_once(':').ok_or_else(|| err(i, "bad count-of-counts"))?;
                        meta.count_of_counts.insert(num(r)? as u64, num(n)? as u64);
                    }
                }
                "event" => {
                    let [s, la, a, c, lp] = fields[..] else {
                        return Err(err(i, "event needs 5 fields"));
                    };
                    let e = TransitionEvent {
                        state: num(s)?,
                        lookahead: num(la)?,
                        action: parse_action(a).ok_or_else(|| err(i, "bad action"))?,
                    };
                    counts.add(e, num(c)? as u64);
                    log_probs.insert(e, float(lp)?);
                }
                "unseen" => {
                    let [s, la, lp] = fields[..] else {
                        return Err(err(i, "unseen needs 3 fields"));
                    };
                    unseen_log_probs.insert((num(s)?, num(la)?), float(lp)?);
                }
                "" => {}
                _ => return Err(err(i, "unknown record")),
            }
        }
        Ok(ProbModel {
            log_probs,
            unseen_log_probs,
            counts,
            meta,
        })
    }
}

struct ActionCode(LrAction);

impl fmt::Display for ActionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            LrAction::Shift(s) => write!(f, "s{s}"),
            LrAction::Reduce(r) => write!(f, "r{r}"),
            LrAction::Accept => f.write_str("acc"),
        }
    }
}

fn parse_action(s: &str) -> Option<LrAction> {
    if s == "acc" {
        Some(LrAction::Accept)
    } else if let Some(n) = s.strip_prefix('s') {
        n.parse().ok().map(LrAction::Shift)
    } else {
        s.strip_prefix('r')?.parse().ok().map(LrAction::Reduce)
    }
}

/// Log-probability of a derivation: the sum of its events' log-probabilities,
/// accumulated in event order.
pub fn score(history: &[TransitionEvent], m: &ProbModel, tables: &LrTables) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for e in history {
        total += m.log_prob(e, tables)?;
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct RankedAnalysis {
    pub tree: DerivationTree,
    pub history: ParseHistory,
    pub log_prob: f64,
    pub rank: usize,
}

/// Descending score, then ascending event sequence.
fn rank_order(a: &(f64, ParseHistory), b: &(f64, ParseHistory)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1))
}

#[derive(Clone)]
struct Candidate {
    score: f64,
    events: Rc<Vec<TransitionEvent>>,
}

/// Scores within this distance of the k-th best are kept as potential ties,
/// since partial sums are accumulated in a different order from [`score`].
const TIE_EPSILON: f64 = 1e-7;
const MAX_TIES: usize = 512;

fn prune(mut list: Vec<Candidate>, k: usize) -> Vec<Candidate> {
    list.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.events.cmp(&b.events)));
    if list.len() > k {
        let floor = list[k - 1].score - TIE_EPSILON;
        let keep = k + list[k..].iter().take(MAX_TIES).take_while(|c| c.score >= floor).count();
        list.truncate(keep);
    }
    list
}

struct Ranker<'a> {
    forest: &'a ParseForest,
    model: &'a ProbModel,
    tables: &'a LrTables,
    k: usize,
    memo: HashMap<(usize, usize, StateId), Rc<Vec<Candidate>>>,
}

impl Ranker<'_> {
    fn lp(&self, state: StateId, lookahead: SymbolId, action: LrAction) -> Option<f64> {
        self.model
            .log_prob(
                &TransitionEvent {
                    state,
                    lookahead,
                    action,
                },
                self.tables,
            )
            .ok()
    }

    /// State on top of the stack after the node's subtree is complete.
    fn after(&self, node: usize, q: StateId) -> Option<StateId> {
        let n = &self.forest.nodes[node];
        if n.is_leaf() {
            self.tables.shift_target(q, n.symbol)
        } else {
            self.tables.goto(q, n.symbol)
        }
    }

    fn best(&mut self, node: usize, class: usize, q: StateId) -> Rc<Vec<Candidate>> {
        if let Some(hit) = self.memo.get(&(node, class, q)) {
            return hit.clone();
        }
        // Guard against unary cycles: an in-progress entry reads as empty.
        self.memo.insert((node, class, q), Rc::new(Vec::new()));
        let forest = self.forest;
        let n = &forest.nodes[node];
        let mut out = Vec::new();
        if n.is_leaf() {
            if let Some(t) = self.tables.shift_target(q, n.symbol) {
                if let Some(lp) = self.lp(q, n.symbol, LrAction::Shift(t)) {
                    out.push(Candidate {
                        score: lp,
                        events: Rc::new(vec![TransitionEvent {
                            state: q,
                            lookahead: n.symbol,
                            action: LrAction::Shift(t),
                        }]),
                    });
                }
            }
        } else {
            let la = lookahead_at(&forest.tokens, n.end, self.tables);
            for p in n.packs.iter().filter(|p| p.residue == class) {
                let mut partial = vec![Candidate {
                    score: 0.0,
                    events: Rc::new(Vec::new()),
                }];
                let mut state = q;
                let mut ok = true;
                for &(c, ck) in &p.children {
                    let options = self.best(c, ck, state);
                    let Some(next) = self.after(c, state) else {
                        ok = false;
                        break;
                    };
                    state = next;
                    let mut combined = Vec::with_capacity(partial.len() * options.len());
                    for a in &partial {
                        for b in options.iter() {
                            let mut events = Vec::with_capacity(a.events.len() + b.events.len());
                            events.extend_from_slice(&a.events);
                            events.extend_from_slice(&b.events);
                            combined.push(Candidate {
                                score: a.score + b.score,
                                events: Rc::new(events),
                            });
                        }
                    }
                    partial = prune(combined, self.k);
                    if partial.is_empty() {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    continue;
                }
                let action = LrAction::Reduce(p.rule);
                let Some(lp) = self.lp(state, la, action) else { continue };
                for mut c in partial {
                    Rc::make_mut(&mut c.events).push(TransitionEvent {
                        state,
                        lookahead: la,
                        action,
                    });
                    c.score += lp;
                    out.push(c);
                }
            }
        }
        let out = Rc::new(prune(out, self.k));
        self.memo.insert((node, class, q), out.clone());
        out
    }
}

/// The `n` most probable analyses in the forest, best first. Computed by
/// merging per-node k-best lists over (node, residue class, entry state);
/// final scores are recomputed with [`score`] so that the ranking is exactly
/// that of scoring every derivation individually.
pub fn nbest(
    forest: &ParseForest,
    m: &ProbModel,
    tables: &LrTables,
    n: usize,
) -> Result<Vec<RankedAnalysis>, ModelError> {
    if n == 0 {
        return Err(ModelError::ZeroN);
    }
    let mut r = Ranker {
        forest,
        model: m,
        tables,
        k: n,
        memo: HashMap::new(),
    };
    let q0 = tables.start_state;
    let mut finals: Vec<(f64, ParseHistory)> = Vec::new();
    for &(node, class) in &forest.roots {
        let Some(top) = r.after(node, q0) else { continue };
        let accept = TransitionEvent {
            state: top,
            lookahead: tables.eot,
            action: LrAction::Accept,
        };
        for c in r.best(node, class, q0).iter() {
            let mut h: ParseHistory = c.events.as_ref().clone();
            h.push(accept);
            let s = score(&h, m, tables)?;
            finals.push((s, h));
        }
    }
    finals.sort_by(rank_order);
    finals.truncate(n);
    finals
        .into_iter()
        .enumerate()
        .map(|(i, (log_prob, history))| {
            let tree = history_to_tree(&history, tables).map_err(|e| ModelError::Format {
                line: 0,
                msg: e.to_string(),
            })?;
            Ok(RankedAnalysis {
                tree,
                history,
                log_prob,
                rank: i + 1,
            })
        })
        .collect()
}

/// Reference ranking: unpack every tree (up to `limit`), extract and score
/// each history, sort. Exponential; for tests and small forests.
pub fn rank_exhaustively(
    forest: &ParseForest,
    m: &ProbModel,
    tables: &LrTables,
    limit: usize,
) -> Result<Vec<RankedAnalysis>, ModelError> {
    let (trees, _) = forest.trees(limit);
    let mut scored = Vec::new();
    for t in trees {
        let h = extract_history(&t, tables).map_err(|e| ModelError::Format {
            line: 0,
            msg: e.to_string(),
        })?;
        let s = score(&h, m, tables)?;
        scored.push((s, h, t));
    }
    scored.sort_by(|a, b| rank_order(&(a.0, a.1.clone()), &(b.0, b.1.clone())));
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (log_prob, history, tree))| RankedAnalysis {
            tree,
            history,
            log_prob,
            rank: i + 1,
        })
        .collect())
}

/// Human-readable rendering of a history, for diagnostics.
pub fn describe(history: &[TransitionEvent], tables: &LrTables, bg: &BackboneGrammar) -> String {
    history
        .iter()
        .map(|e| {
            let act = match e.action {
                LrAction::Shift(s) => format!("shift {s}"),
                LrAction::Reduce(r) => format!("reduce {}", bg.rules[r].source_rule),
                LrAction::Accept => "accept".to_string(),
            };
            format!("[{} {} {}]", e.state, tables.symbol_name(e.lookahead), act)
        })
        .collect::<Vec<_>>()
        .join(" ")
}
