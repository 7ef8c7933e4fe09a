//! The punctuation text grammar, its integration with a part-of-speech
//! sequence grammar, and depunctuation of token sequences.

use std::collections::{BTreeMap, BTreeSet};

use crate::glr::Token;
use crate::grammar::{
    collect_categories, load_grammar, Category, Daughter, DaughterItem, Grammar, GrammarError, Modifier, Position,
    RuleSchema, Value,
};

pub const TEXT_GRAMMAR: &str = include_str!("../../../grammars/text.gr");

/// Punctuation labels, in the order they are documented.
pub const PUNCTUATION: [&str; 9] = ["pco", "psc", "pcl", "pda", "pbo", "pbc", "pfs", "pqu", "pex"];

/// Sentence terminators kept by [`depunctuate`].
pub const TERMINATORS: [&str; 3] = ["pfs", "pqu", "pex"];

/// Label the stand-alone text grammar uses for every word.
pub const WORD: &str = "w";

/// Segment category of the text grammar; becomes a syntactic phrase on
/// integration.
pub const SEGMENT: &str = "T";
const WORD_RUN: &str = "W";

pub fn is_punctuation(label: &str) -> bool {
    PUNCTUATION.contains(&label)
}

/// The shipped text grammar.
pub fn text_grammar() -> Grammar {
    load_grammar(TEXT_GRAMMAR).expect("shipped text grammar is valid")
}

/// Maps every non-punctuation label to the generic word label, for parsing
/// with the stand-alone text grammar.
pub fn to_text_labels(tokens: &[Token]) -> Vec<Token> {
    tokens
        .iter()
        .map(|t| {
            let label = if is_punctuation(&t.label) {
                t.label.clone()
            } else {
                WORD.to_string()
            };
            Token::new(t.surface.clone(), label, t.index)
        })
        .collect()
}

fn mentions(rule: &RuleSchema, majors: &BTreeSet<String>) -> bool {
    if majors.contains(&rule.mother.major) {
        return true;
    }
    let mut cats = Vec::new();
    for d in &rule.daughters {
        collect_categories(d, &mut cats);
    }
    cats.iter().any(|c| majors.contains(&c.major))
}

fn cat_daughter(c: Category) -> Daughter {
    Daughter {
        item: DaughterItem::Cat(c),
        modifier: Modifier::None,
    }
}

/// Folds the text grammar into `pos`:
///
/// - text-sentence, unit and adjunct rules carry over unchanged;
/// - segment-internal rules (word runs, interpolation) are dropped, and the
///   segment category instead rewrites to the syntactic start symbol and to
///   every declared host;
/// - every host `X` gains a Chomsky-adjunction rule `X[+ta] -> X Ta[+bal]`,
///   its syntactic features shared between mother and daughter.
///
/// The two grammars must use disjoint feature names. An empty text grammar
/// leaves `pos` unchanged.
pub fn integrate(pos: &Grammar, txt: &Grammar) -> Result<Grammar, GrammarError> {
    if txt.rules.is_empty() {
        return Ok(pos.clone());
    }
    let pos_features = pos.feature_names();
    let collisions: Vec<&str> = txt
        .features
        .iter()
        .map(|f| f.name.as_str())
        .filter(|n| pos_features.contains_key(n))
        .collect();
    if !collisions.is_empty() {
        return Err(GrammarError::Integration(format!(
            "text and syntactic grammars share feature names: {}",
            collisions.join(", ")
        )));
    }
    let pos_majors: BTreeSet<&str> = pos
        .rules
        .iter()
        .map(|r| r.mother.major.as_str())
        .chain(pos.terminals.iter().map(String::as_str))
        .collect();
    let txt_majors: BTreeSet<&str> = txt
        .rules
        .iter()
        .map(|r| r.mother.major.as_str())
        .chain(txt.terminals.iter().map(String::as_str))
        .filter(|m| *m != WORD)
        .collect();
    let shared: Vec<&str> = pos_majors
        .intersection(&txt_majors)
        .copied()
        .filter(|m| !txt.terminals.contains(*m) || !pos.terminals.contains(*m))
        .collect();
    if !shared.is_empty() {
        return Err(GrammarError::Integration(format!(
            "text and syntactic grammars share category names: {}",
            shared.join(", ")
        )));
    }

    let dropped: BTreeSet<String> = [WORD.to_string(), WORD_RUN.to_string()].into();
    let mut rules: Vec<RuleSchema> = Vec::new();
    for r in &txt.rules {
        if r.mother.major == SEGMENT || mentions(r, &dropped) {
            continue;
        }
        rules.push(r.clone());
    }
    let segment = Category::new(SEGMENT)
        .with("sc", Value::atom("-"))
        .with("cl", Value::atom("-"))
        .with("da", Value::atom("-"))
        .with("co", Value::atom("-"));
    let mut host_targets: Vec<Category> = vec![pos.start.clone()];
    for h in &pos.hosts {
        if *h != pos.start.major {
            host_targets.push(Category::new(h.clone()));
        }
    }
    for target in host_targets {
        rules.push(RuleSchema {
            name: format!("T/host-{}", target.major),
            mother: segment.clone(),
            daughters: vec![cat_daughter(target)],
            position: Position::default(),
        });
    }

    // Features each host carries anywhere in the syntactic grammar.
    let mut host_features: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in &pos.rules {
        let mut cats = vec![&r.mother];
        for d in &r.daughters {
            collect_categories(d, &mut cats);
        }
        for c in cats {
            if pos.hosts.contains(&c.major) {
                let entry = host_features.entry(c.major.as_str()).or_default();
                entry.extend(c.features.iter().map(|(f, _)| f));
            }
        }
    }
    let mut pos_rules = pos.rules.clone();
    for h in &pos.hosts {
        let mut mother = Category::new(h.clone());
        let mut daughter = Category::new(h.clone());
        for (i, f) in host_features.get(h.as_str()).into_iter().flatten().enumerate() {
            let v = Value::var(format!("H{i}"));
            mother = mother.with(f, v.clone());
            daughter = daughter.with(f, v);
        }
        mother = mother.with("ta", Value::atom("+"));
        let adjunct = Category::new("Ta").with("bal", Value::atom("+"));
        pos_rules.push(RuleSchema {
            name: format!("{h}/ta-bal"),
            mother,
            daughters: vec![cat_daughter(daughter), cat_daughter(adjunct)],
            position: Position::default(),
        });
    }
    pos_rules.extend(rules);

    let mut features = pos.features.clone();
    features.extend(txt.features.iter().cloned());
    let mut terminals = pos.terminals.clone();
    terminals.extend(txt.terminals.iter().filter(|t| *t != WORD).cloned());
    let g = Grammar {
        features,
        rules: pos_rules,
        start: txt.start.clone(),
        terminals,
        hosts: pos.hosts.clone(),
    };
    g.validate()?;
    Ok(g)
}

/// Removes sentence-internal punctuation, keeping a sentence-final
/// terminator. Returns the new tokens (re-indexed) and the map from old to
/// new positions of the kept tokens.
pub fn depunctuate(tokens: &[Token]) -> (Vec<Token>, BTreeMap<usize, usize>) {
    let last = tokens.len().checked_sub(1);
    let mut out = Vec::new();
    let mut map = BTreeMap::new();
    for (i, t) in tokens.iter().enumerate() {
        let terminal = Some(i) == last && TERMINATORS.contains(&t.label.as_str());
        if is_punctuation(&t.label) && !terminal {
            continue;
        }
        map.insert(i, out.len());
        out.push(Token::new(t.surface.clone(), t.label.clone(), out.len()));
    }
    (out, map)
}

/// Re-expresses spans over the original tokens as spans over the kept
/// tokens; spans that become empty are dropped.
pub fn realign_brackets(spans: &[(usize, usize)], map: &BTreeMap<usize, usize>) -> Vec<(usize, usize)> {
    spans
        .iter()
        .filter_map(|&(i, j)| {
            let first = map.range(i..j).next()?.1;
            let last = map.range(i..j).next_back()?.1;
            Some((*first, last + 1))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glr::{
        constrained_parse, count_analyses, oracle_enumerate, parse, read_tokens, terminal_ids, ParseOptions,
    };
    use crate::grammar::{compile_backbone, BackboneGrammar, CompileOptions};
    use crate::lalr::LrTables;
    use num_bigint::BigUint;

    fn standalone() -> (BackboneGrammar, LrTables) {
        let bg = compile_backbone(&text_grammar(), CompileOptions::default()).unwrap();
        let t = LrTables::build(&bg).unwrap();
        (bg, t)
    }

    fn labels(s: &str) -> Vec<Token> {
        crate::glr::tokens_from_labels(&s.split_whitespace().collect::<Vec<_>>())
    }

    fn count(s: &str, brackets: &[(usize, usize)]) -> BigUint {
        let (bg, t) = standalone();
        match constrained_parse(&labels(s), brackets, &t, &bg, &ParseOptions::default()) {
            Ok(f) => count_analyses(&f),
            Err(_) => BigUint::from(0u32),
        }
    }

    fn commas(n: usize) -> String {
        format!("w{} pfs", " pco w".repeat(n))
    }

    #[test]
    fn balanced_dash_needs_continuation() {
        // Max fell -- John had kicked him -- .
        assert_eq!(count("w w pda w w w w pda pfs", &[]), BigUint::from(0u32));
        // Max fell -- John had kicked him .
        assert!(count("w w pda w w w w pfs", &[]) > BigUint::from(0u32));
        assert!(count("w pda w w pda w w pfs", &[]) > BigUint::from(0u32));
    }

    #[test]
    fn dash_cannot_precede_bracketed_adjunct() {
        let bad = "w w pda w w w w pda pbo w w w w pbc w w w pfs";
        assert_eq!(count(bad, &[]), BigUint::from(0u32));
        assert!(count("w w pbo w w w w pbc pda w w w w pda w w w pfs", &[]) > BigUint::from(0u32));
    }

    #[test]
    fn colon_scopes_over_following_commas() {
        let s = "w w w w w pcl w w w w w w pco w w w w w w w w pfs";
        assert!(count(s, &[]) > BigUint::from(0u32));
        // comma continuation attached above the colon adjunct
        assert_eq!(count(s, &[(0, 12)]), BigUint::from(0u32));
    }

    #[test]
    fn no_semicolon_inside_dash_adjunct() {
        // only reading: two units, each closed by an unbalanced dash adjunct
        assert_eq!(count("w pda w psc w pda w pfs", &[]), BigUint::from(1u32));
        assert_eq!(count("w pda w psc w pda w pfs", &[(1, 6)]), BigUint::from(0u32));
        assert!(count("w pda w pda w psc w pfs", &[]) > BigUint::from(0u32));
    }

    #[test]
    fn comma_counts_grow_and_match_oracle() {
        let (bg, t) = standalone();
        let mut prev = BigUint::from(0u32);
        for n in 0..=6 {
            let toks = labels(&commas(n));
            let c = count_analyses(&parse(&toks, &t, &bg, &ParseOptions::default()).unwrap());
            let ids = terminal_ids(&bg, &toks).unwrap();
            assert_eq!(
                c,
                BigUint::from(oracle_enumerate(&ids, &bg, 1_000_000).trees.len()),
                "{n} commas"
            );
            assert!(c > prev);
            prev = c;
        }
    }

    #[test]
    fn shipped_grammar_loads() {
        let g = text_grammar();
        assert_eq!(g.start.major, "TxtS");
        assert!(g.rules.iter().any(|r| r.name == "T/txt-sc1"));
    }

    #[test]
    fn depunctuate_single_comma() {
        let toks = read_tokens("a_AT1 man_NN1 ,_pco left_VVD ._pfs").unwrap();
        let (out, map) = depunctuate(&toks);
        let labels: Vec<&str> = out.iter().map(|t| t.label.as_str()).collect();
        assert_eq!(labels, ["AT1", "NN1", "VVD", "pfs"]);
        assert_eq!(map, BTreeMap::from([(0, 0), (1, 1), (3, 2), (4, 3)]));
        assert_eq!(out[2].index, 2);
    }

    #[test]
    fn depunctuate_dashes_and_identity() {
        let toks = read_tokens("x_X --_pda y_Y --_pda z_Z ._pfs").unwrap();
        let (out, _) = depunctuate(&toks);
        let surf: Vec<&str> = out.iter().map(|t| t.surface.as_str()).collect();
        assert_eq!(surf, ["x", "y", "z", "."]);
        let plain = read_tokens("a_AT1 man_NN1 left_VVD ._pfs").unwrap();
        let (same, map) = depunctuate(&plain);
        assert_eq!(same, plain);
        assert!(map.iter().all(|(a, b)| a == b));
    }

    #[test]
    fn realign_drops_punctuation_positions() {
        let toks = read_tokens("a_AT1 man_NN1 ,_pco left_VVD ._pfs").unwrap();
        let (_, map) = depunctuate(&toks);
        assert_eq!(realign_brackets(&[(0, 3), (3, 4), (2, 3)], &map), vec![(0, 2), (2, 3)]);
    }

    #[test]
    fn empty_text_grammar_is_identity() {
        let pos = load_grammar("terminal a\nstart S\nrule s: S -> a\n").unwrap();
        let empty = Grammar {
            features: Vec::new(),
            rules: Vec::new(),
            start: Category::new("S"),
            terminals: BTreeSet::new(),
            hosts: BTreeSet::new(),
        };
        assert_eq!(integrate(&pos, &empty).unwrap(), pos);
    }

    #[test]
    fn feature_collision() {
        let pos = load_grammar("feature da backbone {+,-}\nterminal a\nstart S\nrule s: S[da=+] -> a\n").unwrap();
        let err = integrate(&pos, &text_grammar()).unwrap_err();
        assert!(err.to_string().contains("da"), "{err}");
    }
}
