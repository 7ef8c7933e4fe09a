use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::{self, Write as _};

use num_bigint::BigUint;
use num_traits::{One, Zero};

use crate::grammar::{BackboneGrammar, FeatureStructure, SymbolId};

pub type NodeId = usize;

/// A child reference inside a pack: forest node plus the residue class of
/// that node the derivation uses.
pub type ChildRef = (NodeId, usize);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pack {
    pub rule: usize,
    pub children: Vec<ChildRef>,
    /// Index into the owning node's residue classes.
    pub residue: usize,
}

#[derive(Debug, Clone)]
pub struct ForestNode {
    pub symbol: SymbolId,
    pub start: usize,
    pub end: usize,
    /// Distinct (canonical) mother residues produced by this node's packs.
    pub residues: Vec<FeatureStructure>,
    /// Empty for token leaves.
    pub packs: Vec<Pack>,
}

impl ForestNode {
    pub fn is_leaf(&self) -> bool {
        self.packs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseStats {
    pub tokens_consumed: usize,
    pub forks: usize,
    pub reduces: usize,
    pub unification_failures: usize,
    pub constraint_pruned: usize,
    pub gss_nodes: usize,
}

/// Packed shared forest. Nodes are keyed by (symbol, span); residue classes
/// keep derivations with incompatible features apart inside one node.
#[derive(Debug, Clone)]
pub struct ParseForest {
    pub nodes: Vec<ForestNode>,
    pub roots: Vec<ChildRef>,
    /// Terminal symbol of each input position.
    pub tokens: Vec<SymbolId>,
    pub stats: ParseStats,
    pub count_cap: Option<BigUint>,
}

#[derive(Default)]
pub(crate) struct ForestBuilder {
    nodes: Vec<ForestNode>,
    index: HashMap<(SymbolId, usize, usize), NodeId>,
    packs: HashSet<(NodeId, usize, Vec<ChildRef>)>,
}

impl ForestBuilder {
    pub(crate) fn leaf(&mut self, symbol: SymbolId, pos: usize) -> NodeId {
        let id = self.node(symbol, pos, pos + 1);
        if self.nodes[id].residues.is_empty() {
            self.nodes[id].residues.push(FeatureStructure::new());
        }
        id
    }

    pub(crate) fn node(&mut self, symbol: SymbolId, start: usize, end: usize) -> NodeId {
        let nodes = &mut self.nodes;
        *self.index.entry((symbol, start, end)).or_insert_with(|| {
            nodes.push(ForestNode {
                symbol,
                start,
                end,
                residues: Vec::new(),
                packs: Vec::new(),
            });
            nodes.len() - 1
        })
    }

    pub(crate) fn get(&self, id: NodeId) -> &ForestNode {
        &self.nodes[id]
    }

    pub(crate) fn residue_class(&mut self, id: NodeId, residue: FeatureStructure) -> usize {
        let classes = &mut self.nodes[id].residues;
        match classes.iter().position(|r| *r == residue) {
            Some(k) => k,
            None => {
                classes.push(residue);
                classes.len() - 1
            }
        }
    }

    /// Adds a pack unless an identical (rule, children) pack exists.
    pub(crate) fn add_pack(&mut self, id: NodeId, pack: Pack) -> bool {
        if self.packs.insert((id, pack.rule, pack.children.clone())) {
            self.nodes[id].packs.push(pack);
            true
        } else {
            false
        }
    }

    /// Keeps only nodes reachable from `roots`, renumbered in creation order.
    pub(crate) fn finish(
        self,
        roots: Vec<ChildRef>,
        tokens: Vec<SymbolId>,
        stats: ParseStats,
        count_cap: Option<BigUint>,
    ) -> ParseForest {
        let mut keep = vec![false; self.nodes.len()];
        let mut stack: Vec<NodeId> = roots.iter().map(|r| r.0).collect();
        while let Some(n) = stack.pop() {
            if std::mem::replace(&mut keep[n], true) {
                continue;
            }
            for p in &self.nodes[n].packs {
                stack.extend(p.children.iter().map(|c| c.0).filter(|&c| !keep[c]));
            }
        }
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut next = 0;
        for (i, k) in keep.iter().enumerate() {
            if *k {
                remap[i] = next;
                next += 1;
            }
        }
        let nodes = self
            .nodes
            .into_iter()
            .enumerate()
            .filter(|(i, _)| keep[*i])
            .map(|(_, mut n)| {
                for p in n.packs.iter_mut() {
                    for c in p.children.iter_mut() {
                        c.0 = remap[c.0];
                    }
                }
                n
            })
            .collect();
        let mut roots: Vec<ChildRef> = roots.into_iter().map(|(n, k)| (remap[n], k)).collect();
        roots.sort_unstable();
        roots.dedup();
        ParseForest {
            nodes,
            roots,
            tokens,
            stats,
            count_cap,
        }
    }
}

impl ParseForest {
    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// Number of analyses for each (node, residue class), by the sum-product
    /// recurrence over packs. Derivations that would revisit a node already
    /// on the current path (only possible with unary cycles) are not counted.
    pub fn counts(&self) -> Vec<Vec<BigUint>> {
        let mut memo: Vec<Vec<Option<BigUint>>> = self.nodes.iter().map(|n| vec![None; n.residues.len()]).collect();
        let mut active = vec![false; self.nodes.len()];
        for id in 0..self.nodes.len() {
            for k in 0..self.nodes[id].residues.len() {
                self.count_rec(id, k, &mut memo, &mut active);
            }
        }
        memo.into_iter()
            .map(|row| row.into_iter().map(Option::unwrap_or_default).collect())
            .collect()
    }

    fn count_rec(&self, id: NodeId, k: usize, memo: &mut Vec<Vec<Option<BigUint>>>, active: &mut Vec<bool>) -> BigUint {
        if let Some(c) = &memo[id][k] {
            return c.clone();
        }
        let node = &self.nodes[id];
        if node.is_leaf() {
            memo[id][k] = Some(BigUint::one());
            return BigUint::one();
        }
        if active[id] {
            return BigUint::zero();
        }
        active[id] = true;
        let mut total = BigUint::zero();
        for p in node.packs.iter().filter(|p| p.residue == k) {
            let mut prod = BigUint::one();
            for &(c, ck) in &p.children {
                prod *= self.count_rec(c, ck, memo, active);
                if prod.is_zero() {
                    break;
                }
            }
            total += prod;
        }
        active[id] = false;
        memo[id][k] = Some(total.clone());
        total
    }

    /// Tree enumeration, capped at `limit` trees; the flag reports truncation.
    pub fn trees(&self, limit: usize) -> (Vec<DerivationTree>, bool) {
        let mut memo: HashMap<ChildRef, (Vec<DerivationTree>, bool)> = HashMap::new();
        let mut out = Vec::new();
        let mut truncated = false;
        for &root in &self.roots {
            let (ts, t) = self.trees_rec(root, limit, &mut memo, &mut BTreeSet::new());
            truncated |= t;
            for tree in ts {
                if out.len() == limit {
                    return (out, true);
                }
                out.push(tree);
            }
        }
        (out, truncated)
    }

    fn trees_rec(
        &self,
        (id, k): ChildRef,
        limit: usize,
        memo: &mut HashMap<ChildRef, (Vec<DerivationTree>, bool)>,
        active: &mut BTreeSet<NodeId>,
    ) -> (Vec<DerivationTree>, bool) {
        if let Some(hit) = memo.get(&(id, k)) {
            return hit.clone();
        }
        let node = &self.nodes[id];
        if node.is_leaf() {
            return (vec![DerivationTree::leaf(node.symbol, node.start)], false);
        }
        if !active.insert(id) {
            return (Vec::new(), false);
        }
        let mut out = Vec::new();
        let mut truncated = false;
        'packs: for p in node.packs.iter().filter(|p| p.residue == k) {
            let mut partial: Vec<Vec<DerivationTree>> = vec![Vec::new()];
            for &child in &p.children {
                let (options, t) = self.trees_rec(child, limit, memo, active);
                truncated |= t;
                let mut next = Vec::new();
                for prefix in &partial {
                    for opt in &options {
                        if next.len() == limit {
                            truncated = true;
                            break;
                        }
                        let mut v = prefix.clone();
                        v.push(opt.clone());
                        next.push(v);
                    }
                }
                partial = next;
            }
            for children in partial {
                if out.len() == limit {
                    truncated = true;
                    break 'packs;
                }
                out.push(DerivationTree {
                    symbol: node.symbol,
                    start: node.start,
                    end: node.end,
                    rule: Some(p.rule),
                    children,
                });
            }
        }
        active.remove(&id);
        memo.insert((id, k), (out.clone(), truncated));
        (out, truncated)
    }

    /// Deterministic text serialization: one node per line with its residue
    /// classes and packs (`rule(child.class ...)=class`).
    pub fn dump(&self, bg: &BackboneGrammar) -> String {
        let mut out = String::new();
        let roots: Vec<String> = self.roots.iter().map(|(n, k)| format!("{n}.{k}")).collect();
        let _ = writeln!(out, "roots {}", roots.join(" "));
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = write!(out, "{i}\t{}\t{}-{}", bg.name(n.symbol), n.start, n.end);
            if n.is_leaf() {
                out.push('\n');
                continue;
            }
            let classes: Vec<String> = n.residues.iter().map(|r| r.to_string()).collect();
            let _ = write!(out, "\t{}", classes.join(" "));
            for p in &n.packs {
                let kids: Vec<String> = p.children.iter().map(|(c, k)| format!("{c}.{k}")).collect();
                let _ = write!(out, "\tr{}({})={}", p.rule, kids.join(" "), p.residue);
            }
            out.push('\n');
        }
        out
    }
}

/// Exact number of analyses (0 for an empty forest), saturated at the
/// forest's count cap if one was requested.
pub fn count_analyses(forest: &ParseForest) -> BigUint {
    if forest.roots.is_empty() {
        return BigUint::zero();
    }
    let counts = forest.counts();
    let total: BigUint = forest.roots.iter().map(|&(n, k)| counts[n][k].clone()).sum();
    match &forest.count_cap {
        Some(cap) if total > *cap => cap.clone(),
        _ => total,
    }
}

/// A derivation over the backbone; leaves are tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DerivationTree {
    pub symbol: SymbolId,
    pub start: usize,
    pub end: usize,
    /// Backbone rule used at this node; `None` for token leaves.
    pub rule: Option<usize>,
    pub children: Vec<DerivationTree>,
}

impl DerivationTree {
    pub fn leaf(symbol: SymbolId, pos: usize) -> Self {
        DerivationTree {
            symbol,
            start: pos,
            end: pos + 1,
            rule: None,
            children: Vec::new(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.rule.is_none()
    }

    /// Spans of all rule nodes, pre-order.
    pub fn spans(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        self.walk(&mut |t| {
            if !t.is_leaf() {
                out.push((t.start, t.end));
            }
        });
        out
    }

    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a DerivationTree)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    /// Relabels the tree at schema level: nodes of Kleene auxiliary symbols
    /// are spliced into their parents.
    pub fn schema_tree(&self, bg: &BackboneGrammar) -> SchemaTree {
        let mut children = Vec::new();
        for c in &self.children {
            c.splice_into(bg, &mut children);
        }
        SchemaTree {
            label: bg.name(self.symbol).to_string(),
            rule: self.rule.map(|r| bg.rules[r].source_rule.clone()),
            start: self.start,
            end: self.end,
            children,
        }
    }

    fn splice_into(&self, bg: &BackboneGrammar, out: &mut Vec<SchemaTree>) {
        if !self.is_leaf() && bg.symbol(self.symbol).auxiliary {
            for c in &self.children {
                c.splice_into(bg, out);
            }
        } else {
            out.push(self.schema_tree(bg));
        }
    }

    pub fn display<'a>(&'a self, bg: &'a BackboneGrammar) -> impl fmt::Display + 'a {
        TreeDisplay { tree: self, bg }
    }
}

struct TreeDisplay<'a> {
    tree: &'a DerivationTree,
    bg: &'a BackboneGrammar,
}

impl fmt::Display for TreeDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.tree;
        if t.is_leaf() {
            return f.write_str(self.bg.name(t.symbol));
        }
        write!(f, "({}", self.bg.name(t.symbol))?;
        for c in &t.children {
            write!(f, " {}", TreeDisplay { tree: c, bg: self.bg })?;
        }
        f.write_str(")")
    }
}

/// Derivation relabeled in terms of the source grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaTree {
    /// Backbone category name (terminal label for leaves).
    pub label: String,
    /// Source schema name; `None` for leaves.
    pub rule: Option<String>,
    pub start: usize,
    pub end: usize,
    pub children: Vec<SchemaTree>,
}

impl SchemaTree {
    pub fn is_leaf(&self) -> bool {
        self.rule.is_none()
    }

    /// Constituent spans (rule nodes), pre-order.
    pub fn brackets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut Vec<(usize, usize)>) {
        if !self.is_leaf() {
            out.push((self.start, self.end));
        }
        for c in &self.children {
            c.collect(out);
        }
    }
}

impl fmt::Display for SchemaTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_leaf() {
            return f.write_str(&self.label);
        }
        write!(f, "({}", self.label)?;
        for c in &self.children {
            write!(f, " {c}")?;
        }
        f.write_str(")")
    }
}
