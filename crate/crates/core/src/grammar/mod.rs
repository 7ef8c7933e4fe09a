//! Grammar formalism: categories with flat features, rule schemata with
//! Kleene/optional/disjunctive daughters, and compilation to a context-free
//! backbone with per-rule feature residue.

mod backbone;
mod dsl;
mod feature;

pub use backbone::{compile_backbone, BackboneGrammar, BackboneRule, CompileOptions, SymbolId};
pub use dsl::load_grammar;
pub use feature::{unify, FeatureDecl, FeatureKind, FeatureStructure, Substitution, Value};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Category {
    pub major: String,
    pub features: FeatureStructure,
}

impl Category {
    pub fn new(major: impl Into<String>) -> Self {
        Category {
            major: major.into(),
            features: FeatureStructure::new(),
        }
    }

    pub fn with(mut self, feature: &str, value: Value) -> Self {
        self.features.insert(feature, value);
        self
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.major)?;
        if !self.features.is_empty() {
            write!(f, "{}", self.features)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modifier {
    None,
    Star,
    Optional,
}

/// One daughter position of a schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DaughterItem {
    Cat(Category),
    /// Parenthesised group: one or more alternatives, each a sequence.
    Group(Vec<Vec<Daughter>>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Daughter {
    pub item: DaughterItem,
    pub modifier: Modifier,
}

impl fmt::Display for Daughter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.item {
            DaughterItem::Cat(c) => write!(f, "{c}")?,
            DaughterItem::Group(alts) => {
                f.write_str("(")?;
                for (i, alt) in alts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" | ")?;
                    }
                    for (j, d) in alt.iter().enumerate() {
                        if j > 0 {
                            f.write_str(" ")?;
                        }
                        write!(f, "{d}")?;
                    }
                }
                f.write_str(")")?;
            }
        }
        match self.modifier {
            Modifier::None => Ok(()),
            Modifier::Star => f.write_str("*"),
            Modifier::Optional => f.write_str("?"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Position {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSchema {
    pub name: String,
    pub mother: Category,
    pub daughters: Vec<Daughter>,
    pub position: Position,
}

impl fmt::Display for RuleSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rule {}: {} ->", self.name, self.mother)?;
        for d in &self.daughters {
            write!(f, " {d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    pub features: Vec<FeatureDecl>,
    pub rules: Vec<RuleSchema>,
    pub start: Category,
    pub terminals: BTreeSet<String>,
    /// Phrasal categories that accept text adjuncts by Chomsky-adjunction
    /// when this grammar is integrated with a text grammar.
    pub hosts: BTreeSet<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("{pos}: syntax error: {msg}")]
    Syntax { pos: Position, msg: String },
    #[error("{pos}: undeclared feature `{name}`")]
    UndeclaredFeature { pos: Position, name: String },
    #[error("{pos}: backbone feature `{name}` needs a nonempty finite value set")]
    BackboneWithoutValues { pos: Position, name: String },
    #[error("{pos}: feature `{name}` declared twice")]
    DuplicateFeature { pos: Position, name: String },
    #[error("{pos}: value `{value}` not declared for feature `{name}`")]
    UndeclaredValue { pos: Position, name: String, value: String },
    #[error("{pos}: duplicate rule name `{name}`")]
    DuplicateRule { pos: Position, name: String },
    #[error("{pos}: rule `{name}` needs at least one daughter")]
    EmptyRule { pos: Position, name: String },
    #[error("{pos}: feature `{name}` bound twice in one category")]
    FeatureBoundTwice { pos: Position, name: String },
    #[error("{pos}: terminal `{name}` cannot carry features")]
    FeaturesOnTerminal { pos: Position, name: String },
    #[error("{pos}: symbol `{name}` is neither a terminal nor the mother of any rule")]
    UndefinedSymbol { pos: Position, name: String },
    #[error("no start symbol declared")]
    MissingStart,
    #[error("start symbol `{0}` is not the mother of any rule")]
    StartNotDefined(String),
    #[error("schema `{rule}` expands to more than {cap} backbone rules")]
    BackboneExplosion { rule: String, cap: usize },
    #[error("grammar has a cycle of unary rules through `{0}`")]
    UnaryCycle(String),
    #[error("start symbol derives no terminal string")]
    NoViableSentences,
    #[error("{0}")]
    Integration(String),
}

impl Grammar {
    pub fn feature(&self, name: &str) -> Option<&FeatureDecl> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn is_terminal(&self, symbol: &str) -> bool {
        self.terminals.contains(symbol)
    }

    /// Majors that appear as a rule mother.
    pub fn mothers(&self) -> BTreeSet<&str> {
        self.rules.iter().map(|r| r.mother.major.as_str()).collect()
    }

    /// Checks the structural invariants `load_grammar` promises; also used on
    /// grammars built programmatically (e.g. by integration).
    pub fn validate(&self) -> Result<(), GrammarError> {
        let mut seen = BTreeSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(GrammarError::DuplicateFeature {
                    pos: Position::default(),
                    name: f.name.clone(),
                });
            }
            if f.kind == FeatureKind::Backbone && f.values.is_empty() {
                return Err(GrammarError::BackboneWithoutValues {
                    pos: Position::default(),
                    name: f.name.clone(),
                });
            }
        }
        let mut names = BTreeSet::new();
        let mothers = self.mothers();
        for rule in &self.rules {
            if !names.insert(rule.name.as_str()) {
                return Err(GrammarError::DuplicateRule {
                    pos: rule.position,
                    name: rule.name.clone(),
                });
            }
            if rule.daughters.is_empty() {
                return Err(GrammarError::EmptyRule {
                    pos: rule.position,
                    name: rule.name.clone(),
                });
            }
            let mut cats = vec![&rule.mother];
            for d in &rule.daughters {
                collect_categories(d, &mut cats);
            }
            for cat in cats {
                self.check_category(cat, rule.position)?;
                if !self.is_terminal(&cat.major) && !mothers.contains(cat.major.as_str()) {
                    return Err(GrammarError::UndefinedSymbol {
                        pos: rule.position,
                        name: cat.major.clone(),
                    });
                }
            }
        }
        if !mothers.contains(self.start.major.as_str()) {
            return Err(GrammarError::StartNotDefined(self.start.major.clone()));
        }
        if let Some(h) = self.hosts.iter().find(|h| !mothers.contains(h.as_str())) {
            return Err(GrammarError::UndefinedSymbol {
                pos: Position::default(),
                name: h.clone(),
            });
        }
        Ok(())
    }

    fn check_category(&self, cat: &Category, pos: Position) -> Result<(), GrammarError> {
        if self.is_terminal(&cat.major) && !cat.features.is_empty() {
            return Err(GrammarError::FeaturesOnTerminal {
                pos,
                name: cat.major.clone(),
            });
        }
        for (name, value) in cat.features.iter() {
            let decl = self.feature(name).ok_or_else(|| GrammarError::UndeclaredFeature {
                pos,
                name: name.to_string(),
            })?;
            if let Value::Atom(a) = value {
                if !decl.admits(a) {
                    return Err(GrammarError::UndeclaredValue {
                        pos,
                        name: name.to_string(),
                        value: a.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Renders the grammar back into DSL text.
    pub fn to_dsl(&self) -> String {
        let mut out = String::new();
        for f in &self.features {
            match f.kind {
                FeatureKind::Backbone => {
                    out.push_str(&format!("feature {} backbone {{{}}}\n", f.name, f.values.join(",")))
                }
                FeatureKind::Residue if f.values.is_empty() => out.push_str(&format!("feature {} residue\n", f.name)),
                FeatureKind::Residue => {
                    out.push_str(&format!("feature {} residue {{{}}}\n", f.name, f.values.join(",")))
                }
            }
        }
        if !self.terminals.is_empty() {
            let t: Vec<&str> = self.terminals.iter().map(String::as_str).collect();
            out.push_str(&format!("terminal {}\n", t.join(" ")));
        }
        if !self.hosts.is_empty() {
            let h: Vec<&str> = self.hosts.iter().map(String::as_str).collect();
            out.push_str(&format!("host {}\n", h.join(" ")));
        }
        out.push_str(&format!("start {}\n", self.start));
        for r in &self.rules {
            out.push_str(&format!("{r}\n"));
        }
        out
    }

    /// Feature names grouped by kind, for namespace checks.
    pub fn feature_names(&self) -> BTreeMap<&str, FeatureKind> {
        self.features.iter().map(|f| (f.name.as_str(), f.kind)).collect()
    }
}

pub(crate) fn collect_categories<'a>(d: &'a Daughter, out: &mut Vec<&'a Category>) {
    match &d.item {
        DaughterItem::Cat(c) => out.push(c),
        DaughterItem::Group(alts) => {
            for alt in alts {
                for d in alt {
                    collect_categories(d, out);
                }
            }
        }
    }
}
