//! Flat feature structures and their unification.

use std::collections::BTreeMap;
use std::fmt;

/// Whether a feature is folded into backbone symbols or unified at reduce time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    Backbone,
    Residue,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureDecl {
    pub name: String,
    pub kind: FeatureKind,
    /// Declared atomic values. Always nonempty for backbone features; may be
    /// empty for residue features, meaning "any atom".
    pub values: Vec<String>,
}

impl FeatureDecl {
    pub fn admits(&self, atom: &str) -> bool {
        self.values.is_empty() || self.values.iter().any(|v| v == atom)
    }
}

/// A feature value: an atom or a (rule-scoped) variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Atom(String),
    Var(String),
}

impl Value {
    pub fn atom(s: impl Into<String>) -> Self {
        Value::Atom(s.into())
    }

    pub fn var(s: impl Into<String>) -> Self {
        Value::Var(s.into())
    }

    pub fn as_atom(&self) -> Option<&str> {
        match self {
            Value::Atom(a) => Some(a),
            Value::Var(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Atom(a) => f.write_str(a),
            Value::Var(v) => f.write_str(v),
        }
    }
}

/// Flat feature bundle. Features absent from the map are unspecified.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureStructure {
    bindings: BTreeMap<String, Value>,
}

impl FeatureStructure {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, K>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, Value)>,
        K: Into<String>,
    {
        FeatureStructure {
            bindings: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn get(&self, feature: &str) -> Option<&Value> {
        self.bindings.get(feature)
    }

    /// Binds `feature`; returns the previous binding if there was one.
    pub fn insert(&mut self, feature: impl Into<String>, value: Value) -> Option<Value> {
        self.bindings.insert(feature.into(), value)
    }

    pub fn remove(&mut self, feature: &str) -> Option<Value> {
        self.bindings.remove(feature)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.bindings.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.bindings.values().filter_map(|v| match v {
            Value::Var(name) => Some(name.as_str()),
            Value::Atom(_) => None,
        })
    }

    /// Keeps only the features accepted by `keep`.
    pub fn restricted(&self, mut keep: impl FnMut(&str) -> bool) -> Self {
        FeatureStructure {
            bindings: self
                .bindings
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Applies `subst` to every variable binding.
    pub fn substituted(&self, subst: &Substitution) -> Self {
        FeatureStructure {
            bindings: self
                .bindings
                .iter()
                .map(|(k, v)| (k.clone(), subst.resolve(v)))
                .collect(),
        }
    }

    /// Renames every variable by prefixing it, so structures can be put apart.
    pub fn renamed(&self, prefix: &str) -> Self {
        FeatureStructure {
            bindings: self
                .bindings
                .iter()
                .map(|(k, v)| {
                    let v = match v {
                        Value::Var(name) => Value::Var(format!("{prefix}{name}")),
                        atom => atom.clone(),
                    };
                    (k.clone(), v)
                })
                .collect(),
        }
    }

    /// Renames variables to `_0`, `_1`, ... in order of first occurrence, so
    /// that structures equal up to variable renaming compare equal.
    pub fn canonical(&self) -> Self {
        let mut names: BTreeMap<String, String> = BTreeMap::new();
        let bindings = self
            .bindings
            .iter()
            .map(|(k, v)| {
                let v = match v {
                    Value::Var(name) => {
                        let next = format!("_{}", names.len());
                        Value::Var(names.entry(name.clone()).or_insert(next).clone())
                    }
                    atom => atom.clone(),
                };
                (k.clone(), v)
            })
            .collect();
        FeatureStructure { bindings }
    }
}

impl fmt::Display for FeatureStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, (k, v)) in self.bindings.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_str("]")
    }
}

/// Variable bindings accumulated while unifying. Variables map to atoms or
/// to other variables (union-find style chains, always resolved on read).
#[derive(Debug, Clone, Default)]
pub struct Substitution {
    map: BTreeMap<String, Value>,
}

impl Substitution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn resolve(&self, v: &Value) -> Value {
        let mut cur = v.clone();
        while let Value::Var(name) = &cur {
            match self.map.get(name) {
                Some(next) => cur = next.clone(),
                None => break,
            }
        }
        cur
    }

    /// Makes `a` and `b` equal; false on atomic clash.
    pub fn unify_values(&mut self, a: &Value, b: &Value) -> bool {
        let a = self.resolve(a);
        let b = self.resolve(b);
        match (&a, &b) {
            (Value::Atom(x), Value::Atom(y)) => x == y,
            (Value::Var(x), Value::Var(y)) if x == y => true,
            (Value::Var(x), _) => {
                self.map.insert(x.clone(), b);
                true
            }
            (_, Value::Var(y)) => {
                self.map.insert(y.clone(), a);
                true
            }
        }
    }

    /// Unifies `fs` into the accumulated bindings against `target`, feature by
    /// feature; features missing on either side are unconstrained.
    pub fn unify_into(&mut self, target: &FeatureStructure, fs: &FeatureStructure) -> bool {
        for (k, v) in fs.iter() {
            if let Some(t) = target.get(k) {
                if !self.unify_values(t, v) {
                    return false;
                }
            }
        }
        true
    }
}

/// Least upper bound of two flat structures, or `None` on clash. Variables
/// share one namespace across both arguments (rename apart first if that is
/// not intended).
pub fn unify(a: &FeatureStructure, b: &FeatureStructure) -> Option<FeatureStructure> {
    let mut subst = Substitution::new();
    if !subst.unify_into(a, b) {
        return None;
    }
    let mut out = a.clone();
    for (k, v) in b.iter() {
        if out.get(k).is_none() {
            out.insert(k, v.clone());
        }
    }
    Some(out.substituted(&subst))
}
