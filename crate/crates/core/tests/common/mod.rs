//! Random small grammars and inputs shared by the integration tests.

#![allow(dead_code)]

use problr::grammar::{compile_backbone, load_grammar, BackboneGrammar, CompileOptions, SymbolId};
use problr::lalr::LrTables;
use rand::seq::SliceRandom;
use rand::Rng;

pub const TERMINALS: [&str; 3] = ["a", "b", "c"];
pub const NONTERMINALS: [&str; 4] = ["S", "A", "B", "C"];

pub struct RandomGrammar {
    pub source: String,
    pub bg: BackboneGrammar,
    pub tables: LrTables,
}

fn category<R: Rng>(rng: &mut R, name: &str) -> String {
    if TERMINALS.contains(&name) || !rng.gen_bool(0.25) {
        return name.to_string();
    }
    let v = ["x", "y", "V"].choose(rng).unwrap();
    format!("{name}[f={v}]")
}

/// A grammar of at most `max_rules` rules over a, b, c with nonterminals
/// S, A, B, C and an optional residue feature; `None` when the draw does
/// not compile (unary cycle, no sentences).
pub fn random_grammar<R: Rng>(rng: &mut R, max_rules: usize) -> Option<RandomGrammar> {
    let n_nts = rng.gen_range(1..=NONTERMINALS.len());
    let nts = &NONTERMINALS[..n_nts];
    let mut rules: Vec<(String, Vec<String>)> = Vec::new();
    let n_rules = rng.gen_range(n_nts.max(2)..=max_rules);
    for i in 0..n_rules {
        // every nonterminal gets at least one rule
        let lhs = if i < n_nts { nts[i] } else { nts.choose(rng).unwrap() };
        let len = rng.gen_range(1..=3);
        let rhs = (0..len)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    TERMINALS.choose(rng).unwrap().to_string()
                } else {
                    nts.choose(rng).unwrap().to_string()
                }
            })
            .collect();
        rules.push((lhs.to_string(), rhs));
    }
    let mut src = String::from("feature f residue {x,y}\nterminals a b c\nstart S\n");
    for (i, (lhs, rhs)) in rules.iter().enumerate() {
        let mother = category(rng, lhs);
        let daughters: Vec<String> = rhs.iter().map(|d| category(rng, d)).collect();
        src.push_str(&format!("rule r{i}: {mother} -> {}\n", daughters.join(" ")));
    }
    let g = load_grammar(&src).ok()?;
    let bg = compile_backbone(&g, CompileOptions::default()).ok()?;
    let tables = LrTables::build(&bg).ok()?;
    Some(RandomGrammar {
        source: src,
        bg,
        tables,
    })
}

/// A terminal string derived from the backbone by random expansion, if one
/// of at most `max_len` tokens turns up within a few tries.
pub fn derived_input<R: Rng>(rng: &mut R, bg: &BackboneGrammar, max_len: usize) -> Option<Vec<SymbolId>> {
    'attempt: for _ in 0..20 {
        let mut stack: Vec<SymbolId> = vec![*bg.starts.choose(rng)?];
        let mut out = Vec::new();
        let mut steps = 0;
        while let Some(s) = stack.pop() {
            steps += 1;
            if steps > 200 || out.len() > max_len {
                continue 'attempt;
            }
            if bg.is_terminal(s) {
                out.push(s);
                continue;
            }
            let rules: Vec<_> = bg.rules_for(s).collect();
            let r = rules.choose(rng)?;
            stack.extend(r.rhs.iter().rev());
        }
        if !out.is_empty() && out.len() <= max_len {
            return Some(out);
        }
    }
    None
}

pub fn random_input<R: Rng>(rng: &mut R, bg: &BackboneGrammar, max_len: usize) -> Vec<SymbolId> {
    let ts: Vec<SymbolId> = bg.terminals().collect();
    let len = rng.gen_range(1..=max_len);
    (0..len).map(|_| *ts.choose(rng).unwrap()).collect()
}
