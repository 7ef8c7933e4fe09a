use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use super::{Category, Daughter, DaughterItem, FeatureKind, FeatureStructure, Grammar, GrammarError, Modifier, Value};

pub type SymbolId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Symbol {
    /// Full backbone name, e.g. `Tu[sc=-]`.
    pub name: String,
    pub major: String,
    pub terminal: bool,
    /// True for symbols introduced to compile Kleene daughters.
    pub auxiliary: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneRule {
    pub id: usize,
    pub lhs: SymbolId,
    pub rhs: Vec<SymbolId>,
    pub mother_residue: FeatureStructure,
    pub daughter_residue: Vec<FeatureStructure>,
    /// Name of the schema this rule was compiled from.
    pub source_rule: String,
}

impl BackboneRule {
    pub fn has_residue(&self) -> bool {
        !self.mother_residue.is_empty() || self.daughter_residue.iter().any(|d| !d.is_empty())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CompileOptions {
    pub rule_cap: usize,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions { rule_cap: 50_000 }
    }
}

#[derive(Debug, Clone)]
pub struct BackboneGrammar {
    pub symbols: Vec<Symbol>,
    pub rules: Vec<BackboneRule>,
    /// Instantiations of the start category.
    pub starts: Vec<SymbolId>,
    /// Residue part of the start category, checked against roots.
    pub start_residue: FeatureStructure,
    index: HashMap<String, SymbolId>,
}

/// Schema-level flat rule after Kleene/optional/disjunction expansion.
#[derive(Debug, Clone)]
struct FlatRule {
    source: String,
    mother: Category,
    daughters: Vec<Category>,
}

struct Expander<'g> {
    grammar: &'g Grammar,
    aux_names: BTreeMap<String, Category>,
    used_names: BTreeSet<String>,
    pending_aux: Vec<FlatRule>,
}

impl<'g> Expander<'g> {
    fn new(grammar: &'g Grammar) -> Self {
        let mut used_names = BTreeSet::new();
        for r in &grammar.rules {
            used_names.insert(r.mother.major.clone());
        }
        used_names.extend(grammar.terminals.iter().cloned());
        Expander {
            grammar,
            aux_names: BTreeMap::new(),
            used_names,
            pending_aux: Vec::new(),
        }
    }

    fn fresh_name(&mut self, base: &str) -> String {
        let mut name = format!("{base}+");
        let mut n = 2;
        while self.used_names.contains(&name) {
            name = format!("{base}+{n}");
            n += 1;
        }
        self.used_names.insert(name.clone());
        name
    }

    /// Auxiliary category standing for one-or-more repetitions of `alts`.
    fn aux_for(&mut self, source: &str, alts: &[Vec<Daughter>]) -> Category {
        let key = alts
            .iter()
            .map(|alt| alt.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join(" | ");
        if let Some(cat) = self.aux_names.get(&key) {
            return cat.clone();
        }
        let single = match alts {
            [alt] => match alt.as_slice() {
                [Daughter {
                    item: DaughterItem::Cat(c),
                    modifier: Modifier::None,
                }] => Some(c.clone()),
                _ => None,
            },
            _ => None,
        };
        let aux = match &single {
            Some(c) => {
                let name = self.fresh_name(&c.major);
                Category {
                    major: name,
                    features: c.features.clone(),
                }
            }
            None => {
                let base = alts
                    .iter()
                    .flat_map(|alt| alt.iter())
                    .filter_map(|d| match &d.item {
                        DaughterItem::Cat(c) => Some(c.major.clone()),
                        DaughterItem::Group(_) => None,
                    })
                    .collect::<Vec<_>>()
                    .join("_");
                Category::new(self.fresh_name(if base.is_empty() { "group" } else { &base }))
            }
        };
        self.aux_names.insert(key, aux.clone());
        let mut bodies = Vec::new();
        for alt in alts {
            bodies.extend(self.expand_seq(source, alt));
        }
        for body in bodies.into_iter().filter(|b| !b.is_empty()) {
            let mut recursive = vec![aux.clone()];
            recursive.extend(body.iter().cloned());
            self.pending_aux.push(FlatRule {
                source: source.to_string(),
                mother: aux.clone(),
                daughters: recursive,
            });
            self.pending_aux.push(FlatRule {
                source: source.to_string(),
                mother: aux.clone(),
                daughters: body,
            });
        }
        aux
    }

    fn expand_one(&mut self, source: &str, d: &Daughter) -> Vec<Vec<Category>> {
        let base: Vec<Vec<Category>> = match (&d.item, d.modifier) {
            (DaughterItem::Cat(c), Modifier::Star) => {
                let aux = self.aux_for(
                    source,
                    &[vec![Daughter {
                        item: DaughterItem::Cat(c.clone()),
                        modifier: Modifier::None,
                    }]],
                );
                vec![vec![aux]]
            }
            (DaughterItem::Group(alts), Modifier::Star) => vec![vec![self.aux_for(source, alts)]],
            (DaughterItem::Cat(c), _) => vec![vec![c.clone()]],
            (DaughterItem::Group(alts), _) => {
                let mut out = Vec::new();
                for alt in alts {
                    out.extend(self.expand_seq(source, alt));
                }
                out
            }
        };
        match d.modifier {
            Modifier::None => base,
            Modifier::Star | Modifier::Optional => {
                let mut out = base;
                out.push(Vec::new());
                out
            }
        }
    }

    fn expand_seq(&mut self, source: &str, seq: &[Daughter]) -> Vec<Vec<Category>> {
        let mut acc: Vec<Vec<Category>> = vec![Vec::new()];
        for d in seq {
            let options = self.expand_one(source, d);
            let mut next = Vec::with_capacity(acc.len() * options.len());
            for prefix in &acc {
                for opt in &options {
                    let mut v = prefix.clone();
                    v.extend(opt.iter().cloned());
                    next.push(v);
                }
            }
            acc = next;
        }
        acc
    }

    fn flatten(mut self) -> Vec<(usize, Vec<FlatRule>)> {
        let mut out = Vec::new();
        for (i, rule) in self.grammar.rules.iter().enumerate() {
            let mut flats: Vec<FlatRule> = self
                .expand_seq(&rule.name, &rule.daughters)
                .into_iter()
                .filter(|d| !d.is_empty())
                .map(|daughters| FlatRule {
                    source: rule.name.clone(),
                    mother: rule.mother.clone(),
                    daughters,
                })
                .collect();
            flats.append(&mut self.pending_aux);
            out.push((i, flats));
        }
        out
    }
}

impl BackboneGrammar {
    pub fn symbol(&self, id: SymbolId) -> &Symbol {
        &self.symbols[id]
    }

    pub fn name(&self, id: SymbolId) -> &str {
        &self.symbols[id].name
    }

    pub fn lookup(&self, name: &str) -> Option<SymbolId> {
        self.index.get(name).copied()
    }

    pub fn is_terminal(&self, id: SymbolId) -> bool {
        self.symbols[id].terminal
    }

    pub fn terminals(&self) -> impl Iterator<Item = SymbolId> + '_ {
        (0..self.symbols.len()).filter(|&s| self.symbols[s].terminal)
    }

    pub fn nonterminals(&self) -> impl Iterator<Item = SymbolId> + '_ {
        (0..self.symbols.len()).filter(|&s| !self.symbols[s].terminal)
    }

    pub fn rules_for(&self, lhs: SymbolId) -> impl Iterator<Item = &BackboneRule> {
        self.rules.iter().filter(move |r| r.lhs == lhs)
    }

    /// Builds a backbone grammar directly from named rules (no features).
    /// Convenient for tests and for grammars generated programmatically.
    pub fn from_plain_rules(terminals: &[&str], start: &str, rules: &[(&str, &[&str])]) -> BackboneGrammar {
        let mut symbols: Vec<Symbol> = Vec::new();
        let mut index = HashMap::new();
        let mut intern = |name: &str, terminal: bool, symbols: &mut Vec<Symbol>| -> SymbolId {
            *index.entry(name.to_string()).or_insert_with(|| {
                symbols.push(Symbol {
                    name: name.to_string(),
                    major: name.to_string(),
                    terminal,
                    auxiliary: false,
                });
                symbols.len() - 1
            })
        };
        let mut sorted: Vec<&str> = terminals.to_vec();
        sorted.sort_unstable();
        for t in sorted {
            intern(t, true, &mut symbols);
        }
        let mut out_rules = Vec::new();
        for (i, (lhs, rhs)) in rules.iter().enumerate() {
            let lhs = intern(lhs, false, &mut symbols);
            let rhs: Vec<SymbolId> = rhs
                .iter()
                .map(|s| {
                    let t = terminals.contains(s);
                    intern(s, t, &mut symbols)
                })
                .collect();
            out_rules.push(BackboneRule {
                id: i,
                lhs,
                daughter_residue: vec![FeatureStructure::new(); rhs.len()],
                rhs,
                mother_residue: FeatureStructure::new(),
                source_rule: format!("r{i}"),
            });
        }
        let start = intern(start, false, &mut symbols);
        let index = symbols.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
        BackboneGrammar {
            symbols,
            rules: out_rules,
            starts: vec![start],
            start_residue: FeatureStructure::new(),
            index,
        }
    }

    /// Canonical, line-oriented dump; identical grammars give identical bytes.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.symbols.iter().enumerate() {
            let kind = if s.terminal {
                "t"
            } else if s.auxiliary {
                "aux"
            } else {
                "nt"
            };
            let _ = writeln!(out, "symbol {i} {kind} {}", s.name);
        }
        let starts: Vec<String> = self.starts.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "start {} {}", starts.join(","), self.start_residue);
        for r in &self.rules {
            let rhs: Vec<&str> = r.rhs.iter().map(|&s| self.name(s)).collect();
            let _ = write!(
                out,
                "rule {} {} {} -> {} ;",
                r.id,
                r.source_rule,
                self.name(r.lhs),
                rhs.join(" ")
            );
            let _ = write!(out, " {}", r.mother_residue);
            for d in &r.daughter_residue {
                let _ = write!(out, " {d}");
            }
            out.push('\n');
        }
        out
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// True when the ε-free, modifier-free backbone contains no cycle of unary
    /// nonterminal rules.
    fn check_unary_cycles(&self) -> Result<(), GrammarError> {
        let n = self.symbols.len();
        let mut edges: Vec<Vec<SymbolId>> = vec![Vec::new(); n];
        for r in &self.rules {
            if r.rhs.len() == 1 && !self.is_terminal(r.rhs[0]) {
                edges[r.lhs].push(r.rhs[0]);
            }
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; n];
        for root in 0..n {
            if state[root] != 0 {
                continue;
            }
            let mut stack = vec![(root, 0usize)];
            state[root] = 1;
            while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                if *next < edges[node].len() {
                    let child = edges[node][*next];
                    *next += 1;
                    match state[child] {
                        0 => {
                            state[child] = 1;
                            stack.push((child, 0));
                        }
                        1 => return Err(GrammarError::UnaryCycle(self.symbols[child].name.clone())),
                        _ => {}
                    }
                } else {
                    state[node] = 2;
                    stack.pop();
                }
            }
        }
        Ok(())
    }
}

fn backbone_name(major: &str, assignment: &[(String, String)]) -> String {
    if assignment.is_empty() {
        return major.to_string();
    }
    let feats: Vec<String> = assignment.iter().map(|(f, v)| format!("{f}={v}")).collect();
    format!("{major}[{}]", feats.join(","))
}

/// Compiles schemata into an ε-free context-free backbone with residue
/// constraints. Kleene daughters become left-recursive auxiliary symbols,
/// optional daughters and disjunctions expand into rule variants, and every
/// flat rule is instantiated once per assignment of backbone features.
pub fn compile_backbone(grammar: &Grammar, opts: CompileOptions) -> Result<BackboneGrammar, GrammarError> {
    let decl_order: HashMap<&str, usize> = grammar
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| (f.name.as_str(), i))
        .collect();
    let is_backbone = |f: &str| grammar.feature(f).is_some_and(|d| d.kind == FeatureKind::Backbone);

    let flat = Expander::new(grammar).flatten();

    // Backbone features relevant to each major symbol.
    let mut bf: BTreeMap<String, BTreeSet<(usize, String)>> = BTreeMap::new();
    let note = |cat: &Category, bf: &mut BTreeMap<String, BTreeSet<(usize, String)>>| {
        let entry = bf.entry(cat.major.clone()).or_default();
        for (f, _) in cat.features.iter() {
            if is_backbone(f) {
                entry.insert((decl_order[f], f.to_string()));
            }
        }
    };
    note(&grammar.start, &mut bf);
    for (_, rules) in &flat {
        for r in rules {
            note(&r.mother, &mut bf);
            for d in &r.daughters {
                note(d, &mut bf);
            }
        }
    }

    struct Raw {
        source: String,
        lhs: String,
        rhs: Vec<String>,
        mother_residue: FeatureStructure,
        daughter_residue: Vec<FeatureStructure>,
    }
    let mut raw: Vec<Raw> = Vec::new();
    let mut aux_majors: BTreeSet<String> = BTreeSet::new();
    let schema_mothers: BTreeSet<&str> = grammar.rules.iter().map(|r| r.mother.major.as_str()).collect();

    for (schema_idx, rules) in &flat {
        let schema_name = &grammar.rules[*schema_idx].name;
        let mut produced = 0usize;
        for rule in rules {
            let positions: Vec<&Category> = std::iter::once(&rule.mother).chain(rule.daughters.iter()).collect();
            for p in &positions {
                if !grammar.is_terminal(&p.major) && !schema_mothers.contains(p.major.as_str()) {
                    aux_majors.insert(p.major.clone());
                }
            }
            // Variables over backbone slots, in first-occurrence order.
            let mut vars: Vec<String> = Vec::new();
            let mut domains: HashMap<String, Vec<String>> = HashMap::new();
            let mut slots: Vec<Vec<(String, Value)>> = Vec::new();
            for (pi, cat) in positions.iter().enumerate() {
                let mut row = Vec::new();
                if !grammar.is_terminal(&cat.major) {
                    for (_, f) in bf.get(&cat.major).into_iter().flatten() {
                        let value = cat
                            .features
                            .get(f)
                            .cloned()
                            .unwrap_or_else(|| Value::Var(format!("?{pi}.{f}")));
                        if let Value::Var(v) = &value {
                            let declared = &grammar.feature(f).expect("validated").values;
                            match domains.get_mut(v) {
                                Some(dom) => dom.retain(|x| declared.contains(x)),
                                None => {
                                    vars.push(v.clone());
                                    domains.insert(v.clone(), declared.clone());
                                }
                            }
                        }
                        row.push((f.clone(), value));
                    }
                }
                slots.push(row);
            }
            let combos: usize = vars
                .iter()
                .map(|v| domains[v].len())
                .try_fold(1usize, |acc, n| acc.checked_mul(n))
                .unwrap_or(usize::MAX);
            produced = produced.saturating_add(combos);
            if produced > opts.rule_cap || raw.len().saturating_add(combos) > opts.rule_cap {
                return Err(GrammarError::BackboneExplosion {
                    rule: schema_name.clone(),
                    cap: opts.rule_cap,
                });
            }
            if combos == 0 {
                continue;
            }
            let mut choice = vec![0usize; vars.len()];
            loop {
                let assignment: HashMap<&str, &str> = vars
                    .iter()
                    .zip(&choice)
                    .map(|(v, &c)| (v.as_str(), domains[v][c].as_str()))
                    .collect();
                let mut names = Vec::with_capacity(positions.len());
                let mut residues = Vec::with_capacity(positions.len());
                for (pi, cat) in positions.iter().enumerate() {
                    let resolved: Vec<(String, String)> = slots[pi]
                        .iter()
                        .map(|(f, v)| {
                            let atom = match v {
                                Value::Atom(a) => a.clone(),
                                Value::Var(x) => assignment[x.as_str()].to_string(),
                            };
                            (f.clone(), atom)
                        })
                        .collect();
                    names.push(backbone_name(&cat.major, &resolved));
                    let residue = FeatureStructure::from_pairs(
                        cat.features.iter().filter(|(f, _)| !is_backbone(f)).map(|(f, v)| {
                            let v = match v {
                                Value::Var(x) => match assignment.get(x.as_str()) {
                                    Some(a) => Value::atom(*a),
                                    None => v.clone(),
                                },
                                atom => atom.clone(),
                            };
                            (f.to_string(), v)
                        }),
                    );
                    residues.push(residue);
                }
                let mother_residue = residues.remove(0);
                let lhs = names.remove(0);
                raw.push(Raw {
                    source: rule.source.clone(),
                    lhs,
                    rhs: names,
                    mother_residue,
                    daughter_residue: residues,
                });
                // odometer, last variable fastest
                let mut exhausted = true;
                for k in (0..vars.len()).rev() {
                    choice[k] += 1;
                    if choice[k] < domains[&vars[k]].len() {
                        exhausted = false;
                        break;
                    }
                    choice[k] = 0;
                }
                if exhausted {
                    break;
                }
            }
        }
    }

    // Start instantiations: majors match and atomic backbone values agree.
    let start_bf: Vec<(String, Option<String>)> = bf
        .get(&grammar.start.major)
        .into_iter()
        .flatten()
        .map(|(_, f)| {
            (
                f.clone(),
                grammar
                    .start
                    .features
                    .get(f)
                    .and_then(|v| v.as_atom().map(str::to_string)),
            )
        })
        .collect();
    let matches_start = |name: &str| -> bool {
        let (major, feats) = match name.find('[') {
            Some(i) => (&name[..i], &name[i + 1..name.len() - 1]),
            None => (name, ""),
        };
        if major != grammar.start.major {
            return false;
        }
        let given: HashMap<&str, &str> = feats
            .split(',')
            .filter(|s| !s.is_empty())
            .filter_map(|kv| kv.split_once('='))
            .collect();
        start_bf
            .iter()
            .all(|(f, want)| want.as_ref().is_none_or(|w| given.get(f.as_str()) == Some(&w.as_str())))
    };

    // Productive symbols.
    let terminals = &grammar.terminals;
    let mut productive: BTreeSet<&str> = terminals.iter().map(String::as_str).collect();
    loop {
        let before = productive.len();
        for r in &raw {
            if !productive.contains(r.lhs.as_str()) && r.rhs.iter().all(|s| productive.contains(s.as_str())) {
                productive.insert(r.lhs.as_str());
            }
        }
        if productive.len() == before {
            break;
        }
    }
    let useful: Vec<&Raw> = raw
        .iter()
        .filter(|r| productive.contains(r.lhs.as_str()) && r.rhs.iter().all(|s| productive.contains(s.as_str())))
        .collect();
    // Reachable from the start instantiations.
    let mut by_lhs: HashMap<&str, Vec<&Raw>> = HashMap::new();
    for r in &useful {
        by_lhs.entry(r.lhs.as_str()).or_default().push(r);
    }
    let mut reachable: BTreeSet<&str> = BTreeSet::new();
    let mut stack: Vec<&str> = Vec::new();
    let mut seen_lhs: BTreeSet<&str> = BTreeSet::new();
    for r in &useful {
        if seen_lhs.insert(r.lhs.as_str()) && matches_start(&r.lhs) {
            stack.push(r.lhs.as_str());
            reachable.insert(r.lhs.as_str());
        }
    }
    while let Some(sym) = stack.pop() {
        for r in by_lhs.get(sym).into_iter().flatten() {
            for s in &r.rhs {
                if reachable.insert(s.as_str()) {
                    stack.push(s.as_str());
                }
            }
        }
    }

    let mut symbols: Vec<Symbol> = Vec::new();
    let mut index: HashMap<String, SymbolId> = HashMap::new();
    for t in terminals {
        index.insert(t.clone(), symbols.len());
        symbols.push(Symbol {
            name: t.clone(),
            major: t.clone(),
            terminal: true,
            auxiliary: false,
        });
    }
    let mut intern = |name: &str, symbols: &mut Vec<Symbol>| -> SymbolId {
        if let Some(&id) = index.get(name) {
            return id;
        }
        let major = name.split('[').next().unwrap_or(name).to_string();
        let id = symbols.len();
        symbols.push(Symbol {
            name: name.to_string(),
            auxiliary: aux_majors.contains(&major),
            major,
            terminal: false,
        });
        index.insert(name.to_string(), id);
        id
    };
    let mut rules = Vec::new();
    for r in useful.iter().filter(|r| reachable.contains(r.lhs.as_str())) {
        let lhs = intern(&r.lhs, &mut symbols);
        let rhs = r.rhs.iter().map(|s| intern(s, &mut symbols)).collect();
        rules.push(BackboneRule {
            id: rules.len(),
            lhs,
            rhs,
            mother_residue: r.mother_residue.clone(),
            daughter_residue: r.daughter_residue.clone(),
            source_rule: r.source.clone(),
        });
    }
    let mut starts: Vec<SymbolId> = (0..symbols.len())
        .filter(|&s| !symbols[s].terminal && matches_start(&symbols[s].name))
        .collect();
    starts.sort_unstable();
    let start_residue = grammar.start.features.restricted(|f| !is_backbone(f));
    let index = symbols.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
    let bg = BackboneGrammar {
        symbols,
        rules,
        starts,
        start_residue,
        index,
    };
    bg.check_unary_cycles()?;
    Ok(bg)
}
