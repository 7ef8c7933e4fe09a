//! Text format for grammars.
//!
//! ```text
//! # comment
//! feature sc backbone {+,-}
//! feature agr residue
//! terminal pco psc pex pqu w
//! start TxtS
//! rule T/txt-sc1: TxtS -> (Tu[sc=+])* Tu[sc=-] (pex | pqu)?
//! ```
//!
//! Feature annotations accept `f=v` as well as the `+f` / `-f` shorthand.
//! Capitalised values are variables. Lines starting with whitespace continue
//! the previous statement. When no `terminal` line is present, every daughter
//! symbol that is never a mother is taken to be a terminal.

use std::collections::{BTreeMap, BTreeSet};

use super::{
    collect_categories, Category, Daughter, DaughterItem, FeatureDecl, FeatureKind, Grammar, GrammarError, Modifier,
    Position, RuleSchema, Value,
};

struct Statement {
    text: String,
    line: usize,
    /// Column offset of `text[0]` on its first line.
    column: usize,
    /// Byte offsets in `text` where continuation lines begin, with their line numbers.
    breaks: Vec<(usize, usize)>,
}

impl Statement {
    fn pos(&self, offset: usize) -> Position {
        let mut line = self.line;
        let mut start = 0;
        let mut col0 = self.column;
        for &(at, l) in &self.breaks {
            if offset >= at {
                line = l;
                start = at;
                col0 = 1;
            }
        }
        Position {
            line,
            column: col0 + offset.saturating_sub(start),
        }
    }
}

fn statements(text: &str) -> Vec<Statement> {
    let mut out: Vec<Statement> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(at) => &raw[..at],
            None => raw,
        };
        if line.trim().is_empty() {
            continue;
        }
        let continues = line.starts_with(char::is_whitespace);
        match out.last_mut() {
            Some(prev) if continues => {
                prev.text.push(' ');
                let trimmed = line.trim_start();
                prev.breaks.push((prev.text.len(), i + 1));
                prev.text.push_str(trimmed);
            }
            _ => {
                let trimmed = line.trim_start();
                out.push(Statement {
                    text: trimmed.trim_end().to_string(),
                    line: i + 1,
                    column: 1 + (line.len() - trimmed.len()),
                    breaks: Vec::new(),
                });
            }
        }
    }
    out
}

struct Cursor<'a> {
    stmt: &'a Statement,
    bytes: &'a [u8],
    at: usize,
}

fn is_symbol_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_' || c == b'\'' || c == b'$'
}

fn is_value_char(c: u8) -> bool {
    is_symbol_char(c) || c == b'+' || c == b'-'
}

impl<'a> Cursor<'a> {
    fn new(stmt: &'a Statement, at: usize) -> Self {
        Cursor {
            stmt,
            bytes: stmt.text.as_bytes(),
            at,
        }
    }

    fn err(&self, msg: impl Into<String>) -> GrammarError {
        GrammarError::Syntax {
            pos: self.stmt.pos(self.at),
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.at < self.bytes.len() && self.bytes[self.at].is_ascii_whitespace() {
            self.at += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.at).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), GrammarError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{}`", c as char)))
        }
    }

    fn word(&mut self, accept: fn(u8) -> bool, what: &str) -> Result<String, GrammarError> {
        self.skip_ws();
        let start = self.at;
        while self.at < self.bytes.len() && accept(self.bytes[self.at]) {
            self.at += 1;
        }
        if start == self.at {
            return Err(self.err(format!("expected {what}")));
        }
        Ok(self.stmt.text[start..self.at].to_string())
    }

    fn at_end(&mut self) -> bool {
        self.peek().is_none()
    }

    fn value_set(&mut self) -> Result<Vec<String>, GrammarError> {
        self.expect(b'{')?;
        let mut values = Vec::new();
        if self.eat(b'}') {
            return Ok(values);
        }
        loop {
            values.push(self.word(is_value_char, "a feature value")?);
            if self.eat(b'}') {
                return Ok(values);
            }
            self.expect(b',')?;
        }
    }

    fn category(&mut self) -> Result<Category, GrammarError> {
        let major = self.word(is_symbol_char, "a category symbol")?;
        let mut cat = Category::new(major);
        // `[` must follow the symbol directly to count as its annotation.
        if self.bytes.get(self.at) == Some(&b'[') {
            self.at += 1;
            if self.eat(b']') {
                return Ok(cat);
            }
            loop {
                let here = self.stmt.pos(self.at);
                let (name, value) = match self.peek() {
                    Some(sign @ (b'+' | b'-')) => {
                        self.at += 1;
                        let name = self.word(is_symbol_char, "a feature name")?;
                        (name, Value::atom((sign as char).to_string()))
                    }
                    _ => {
                        let name = self.word(is_symbol_char, "a feature name")?;
                        self.expect(b'=')?;
                        let v = self.word(is_value_char, "a feature value")?;
                        let value = if v.as_bytes()[0].is_ascii_uppercase() {
                            Value::Var(v)
                        } else {
                            Value::Atom(v)
                        };
                        (name, value)
                    }
                };
                if cat.features.insert(name.clone(), value).is_some() {
                    return Err(GrammarError::FeatureBoundTwice { pos: here, name });
                }
                if self.eat(b']') {
                    break;
                }
                self.expect(b',')?;
            }
        }
        Ok(cat)
    }

    /// Parses daughters until `)`/`|` or end of statement.
    fn sequence(&mut self) -> Result<Vec<Daughter>, GrammarError> {
        let mut out = Vec::new();
        while let Some(c) = self.peek() {
            if c == b')' || c == b'|' {
                break;
            }
            let item = if self.eat(b'(') {
                let mut alts = vec![self.sequence()?];
                while self.eat(b'|') {
                    alts.push(self.sequence()?);
                }
                self.expect(b')')?;
                if alts.iter().any(Vec::is_empty) {
                    return Err(self.err("empty alternative in group"));
                }
                DaughterItem::Group(alts)
            } else {
                DaughterItem::Cat(self.category()?)
            };
            // modifiers bind tightly to the preceding item
            let modifier = match self.bytes.get(self.at) {
                Some(b'*') => {
                    self.at += 1;
                    Modifier::Star
                }
                Some(b'?') => {
                    self.at += 1;
                    Modifier::Optional
                }
                _ => Modifier::None,
            };
            out.push(Daughter { item, modifier });
        }
        Ok(out)
    }
}

/// Parses grammar DSL text into a validated [`Grammar`].
pub fn load_grammar(text: &str) -> Result<Grammar, GrammarError> {
    let mut features: Vec<FeatureDecl> = Vec::new();
    let mut feature_pos: BTreeMap<String, Position> = BTreeMap::new();
    let mut rules: Vec<RuleSchema> = Vec::new();
    let mut terminals: Option<BTreeSet<String>> = None;
    let mut hosts: BTreeSet<String> = BTreeSet::new();
    let mut start: Option<(Category, Position)> = None;

    for stmt in statements(text) {
        let keyword_end = stmt.text.find(char::is_whitespace).unwrap_or(stmt.text.len());
        let keyword = &stmt.text[..keyword_end];
        let mut cur = Cursor::new(&stmt, keyword_end);
        match keyword {
            "feature" => {
                let pos = stmt.pos(keyword_end + 1);
                let name = cur.word(is_symbol_char, "a feature name")?;
                let kind = match cur.word(is_symbol_char, "`backbone` or `residue`")?.as_str() {
                    "backbone" => FeatureKind::Backbone,
                    "residue" => FeatureKind::Residue,
                    other => return Err(cur.err(format!("unknown feature kind `{other}`"))),
                };
                let values = if cur.peek() == Some(b'{') {
                    cur.value_set()?
                } else {
                    Vec::new()
                };
                if !cur.at_end() {
                    return Err(cur.err("unexpected text after feature declaration"));
                }
                if kind == FeatureKind::Backbone && values.is_empty() {
                    return Err(GrammarError::BackboneWithoutValues { pos, name });
                }
                if feature_pos.insert(name.clone(), pos).is_some() {
                    return Err(GrammarError::DuplicateFeature { pos, name });
                }
                features.push(FeatureDecl { name, kind, values });
            }
            "terminal" | "terminals" => {
                let set = terminals.get_or_insert_with(BTreeSet::new);
                while !cur.at_end() {
                    set.insert(cur.word(is_symbol_char, "a terminal symbol")?);
                }
            }
            "host" | "hosts" => {
                while !cur.at_end() {
                    hosts.insert(cur.word(is_symbol_char, "a host category")?);
                }
            }
            "start" => {
                let pos = stmt.pos(keyword_end + 1);
                let cat = cur.category()?;
                if !cur.at_end() {
                    return Err(cur.err("unexpected text after start symbol"));
                }
                start = Some((cat, pos));
            }
            "rule" => {
                let colon = stmt.text[keyword_end..]
                    .find(": ")
                    .or_else(|| {
                        stmt.text[keyword_end..]
                            .ends_with(':')
                            .then(|| stmt.text.len() - keyword_end - 1)
                    })
                    .map(|i| i + keyword_end)
                    .ok_or_else(|| cur.err("expected `<name>:` after `rule`"))?;
                let name = stmt.text[keyword_end..colon].trim().to_string();
                let pos = stmt.pos(keyword_end + 1);
                if name.is_empty() || name.contains(char::is_whitespace) {
                    return Err(cur.err("rule name must be a single word"));
                }
                let mut cur = Cursor::new(&stmt, colon + 1);
                let mother = cur.category()?;
                cur.expect(b'-')?;
                if cur.bytes.get(cur.at) != Some(&b'>') {
                    return Err(cur.err("expected `->`"));
                }
                cur.at += 1;
                let daughters = cur.sequence()?;
                if !cur.at_end() {
                    return Err(cur.err("unbalanced `)` or stray `|`"));
                }
                if daughters.is_empty() {
                    return Err(GrammarError::EmptyRule { pos, name });
                }
                if rules.iter().any(|r| r.name == name) {
                    return Err(GrammarError::DuplicateRule { pos, name });
                }
                rules.push(RuleSchema {
                    name,
                    mother,
                    daughters,
                    position: pos,
                });
            }
            other => {
                return Err(GrammarError::Syntax {
                    pos: stmt.pos(0),
                    msg: format!("unknown statement `{other}`"),
                })
            }
        }
    }

    let (start, _) = start.ok_or(GrammarError::MissingStart)?;
    let terminals = match terminals {
        Some(t) => t,
        None => {
            let mothers: BTreeSet<&str> = rules.iter().map(|r| r.mother.major.as_str()).collect();
            let mut t = BTreeSet::new();
            for r in &rules {
                let mut cats = Vec::new();
                for d in &r.daughters {
                    collect_categories(d, &mut cats);
                }
                for c in cats {
                    if !mothers.contains(c.major.as_str()) {
                        t.insert(c.major.clone());
                    }
                }
            }
            t
        }
    };
    let grammar = Grammar {
        features,
        rules,
        start,
        terminals,
        hosts,
    };
    grammar.validate()?;
    Ok(grammar)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "feature sc backbone {+,-}\nterminal pex pqu w\nstart TxtS\n";

    #[test]
    fn kleene_plain_and_optional_disjunction() {
        let g = load_grammar(&format!(
            "{HEADER}rule T/txt-sc1: TxtS -> (Tu[sc=+])* Tu[sc=-] (pex|pqu)?\nrule u: Tu -> w\n"
        ))
        .unwrap();
        let r = &g.rules[0];
        assert_eq!(r.name, "T/txt-sc1");
        assert_eq!(r.daughters.len(), 3);
        assert_eq!(r.daughters[0].modifier, Modifier::Star);
        assert!(matches!(&r.daughters[0].item, DaughterItem::Group(alts) if alts.len() == 1));
        assert_eq!(r.daughters[1].modifier, Modifier::None);
        assert!(matches!(&r.daughters[1].item, DaughterItem::Cat(c) if c.major == "Tu"));
        assert_eq!(r.daughters[2].modifier, Modifier::Optional);
        assert!(matches!(&r.daughters[2].item, DaughterItem::Group(alts) if alts.len() == 2));
    }

    #[test]
    fn sign_shorthand() {
        let g = load_grammar(&format!("{HEADER}rule a: TxtS -> Tu[+sc]\nrule b: Tu[-sc] -> w\n")).unwrap();
        let DaughterItem::Cat(c) = &g.rules[0].daughters[0].item else {
            panic!()
        };
        assert_eq!(c.features.get("sc"), Some(&Value::atom("+")));
    }

    #[test]
    fn empty_body_rejected() {
        let err = load_grammar(&format!("{HEADER}rule e: TxtS ->\n")).unwrap_err();
        assert!(matches!(err, GrammarError::EmptyRule { .. }));
        assert!(err.to_string().contains("at least one daughter"));
    }

    #[test]
    fn undeclared_feature_rejected() {
        let err = load_grammar(&format!(
            "{HEADER}rule a: TxtS -> w\nrule b: TxtS -> Tu[foo=+]\nrule c: Tu -> w\n"
        ))
        .unwrap_err();
        assert!(matches!(err, GrammarError::UndeclaredFeature { ref name, .. } if name == "foo"));
    }

    #[test]
    fn backbone_needs_values() {
        let err = load_grammar("feature x backbone\nstart S\nrule a: S -> b\n").unwrap_err();
        assert!(matches!(err, GrammarError::BackboneWithoutValues { .. }));
    }

    #[test]
    fn duplicate_rule_name() {
        let err = load_grammar("start S\nrule a: S -> b\nrule a: S -> c\n").unwrap_err();
        assert!(matches!(err, GrammarError::DuplicateRule { .. }));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = load_grammar("start S\nrule a: S -> (b\n").unwrap_err();
        match err {
            GrammarError::Syntax { pos, .. } => assert_eq!(pos.line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn continuation_lines() {
        let g = load_grammar("start S\nrule a: S ->\n   b\n   c # trailing\n").unwrap();
        assert_eq!(g.rules[0].daughters.len(), 2);
    }

    #[test]
    fn inferred_terminals() {
        let g = load_grammar("start S\nrule a: S -> A b\nrule b: A -> c\n").unwrap();
        assert_eq!(g.terminals.iter().cloned().collect::<Vec<_>>(), vec!["b", "c"]);
    }

    #[test]
    fn to_dsl_round_trips() {
        let text = format!("{HEADER}rule T/txt-sc1: TxtS -> (Tu[sc=+])* Tu[sc=-] (pex | pqu)?\nrule u: Tu -> w\n");
        let g = load_grammar(&text).unwrap();
        let again = load_grammar(&g.to_dsl()).unwrap();
        assert_eq!(
            g.rules,
            again
                .rules
                .iter()
                .cloned()
                .zip(&g.rules)
                .map(|(mut r, o)| {
                    r.position = o.position;
                    r
                })
                .collect::<Vec<_>>()
        );
    }
}
