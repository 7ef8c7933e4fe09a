//! End-to-end corpus operations shared by the command line and the tests:
//! analysing sentences, training from a bracketed treebank, and the
//! with/without punctuation comparison.

use std::collections::BTreeSet;

use num_bigint::BigUint;
use num_traits::Zero;
use serde::Serialize;
use thiserror::Error;

use crate::eval::{
    self, apb, geig_evaluate, BracketSet, EvalError, EvalReport, GeigOptions, Histogram, SentenceStat, Span,
};
use crate::glr::{constrained_parse, count_analyses, parse, DerivationTree, ParseError, ParseOptions, Token};
use crate::grammar::{compile_backbone, BackboneGrammar, CompileOptions, Grammar, GrammarError};
use crate::lalr::{LrTables, TableError};
use crate::prob::{extract_history, nbest, smooth, train, ModelError, ParseHistory, ProbModel, TransitionCounts};
use crate::text::{depunctuate, integrate, realign_brackets, text_grammar};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Tables(#[from] TableError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{sentences} sentences but {brackets} bracket lines")]
    Misaligned { sentences: usize, brackets: usize },
}

/// A compiled grammar with its parse tables.
pub struct Parser {
    pub grammar: Grammar,
    pub bg: BackboneGrammar,
    pub tables: LrTables,
}

impl Parser {
    pub fn new(grammar: Grammar) -> Result<Self, PipelineError> {
        let bg = compile_backbone(&grammar, CompileOptions::default())?;
        let tables = LrTables::build(&bg)?;
        Ok(Parser { grammar, bg, tables })
    }

    /// Compiles a syntactic grammar folded together with the text grammar.
    pub fn with_text_grammar(syntax: &Grammar) -> Result<Self, PipelineError> {
        Parser::new(integrate(syntax, &text_grammar())?)
    }

    pub fn parse(&self, tokens: &[Token], opts: &ParseOptions) -> Result<crate::glr::ParseForest, ParseError> {
        parse(tokens, &self.tables, &self.bg, opts)
    }

    /// Unsmoothed counts of nothing: every context uniform.
    pub fn uniform_model(&self) -> ProbModel {
        self.model(&TransitionCounts::default())
    }

    pub fn model(&self, counts: &TransitionCounts) -> ProbModel {
        let mut m = smooth(counts, &self.tables);
        m.meta.grammar_hash = self.bg.hash();
        m
    }

    /// Distinct constituent spans of a derivation, auxiliary nodes spliced.
    pub fn brackets(&self, tree: &DerivationTree) -> Vec<Span> {
        let set: BTreeSet<Span> = tree.schema_tree(&self.bg).brackets().into_iter().collect();
        set.into_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    Fail,
    Timeout,
    UnknownLabel,
}

#[derive(Debug, Clone, Serialize)]
pub struct Analysis {
    pub rank: usize,
    pub log_prob: f64,
    pub brackets: Vec<Span>,
    pub tree: String,
}

/// Result of parsing one input line.
#[derive(Debug, Clone, Serialize)]
pub struct SentenceResult {
    pub n: usize,
    pub status: Status,
    #[serde(serialize_with = "as_string")]
    pub count: BigUint,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub analyses: Vec<Analysis>,
}

fn as_string<S: serde::Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_string())
}

impl SentenceResult {
    pub fn stat(&self) -> SentenceStat {
        SentenceStat {
            n: self.n,
            p: self.count.clone(),
            timed_out: self.status == Status::Timeout,
        }
    }

    pub fn candidates(&self) -> Vec<BracketSet> {
        self.analyses
            .iter()
            .map(|a| BracketSet::new(self.n, a.brackets.clone()))
            .collect()
    }
}

/// Parses one sentence and, when `model` is given, ranks its `k` best
/// analyses.
pub fn analyse(
    parser: &Parser,
    tokens: &[Token],
    model: Option<&ProbModel>,
    k: usize,
    opts: &ParseOptions,
) -> Result<SentenceResult, ModelError> {
    let mut r = SentenceResult {
        n: tokens.len(),
        status: Status::Ok,
        count: BigUint::zero(),
        message: None,
        analyses: Vec::new(),
    };
    let forest = match parser.parse(tokens, opts) {
        Ok(f) => f,
        Err(e) => {
            r.status = match e {
                ParseError::Timeout { .. } => Status::Timeout,
                ParseError::UnknownLabel { .. } => Status::UnknownLabel,
                _ => Status::Fail,
            };
            r.message = Some(e.to_string());
            return Ok(r);
        }
    };
    r.count = count_analyses(&forest);
    if let Some(m) = model {
        for a in nbest(&forest, m, &parser.tables, k)? {
            r.analyses.push(Analysis {
                rank: a.rank,
                log_prob: a.log_prob,
                brackets: parser.brackets(&a.tree),
                tree: a.tree.schema_tree(&parser.bg).to_string(),
            });
        }
    }
    Ok(r)
}

/// How a training sentence left ambiguous by its brackets is resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selection {
    /// Only sentences with a single compatible analysis are used.
    UniqueOnly,
    /// Per sentence, the index (in forest enumeration order) of the analysis
    /// to use; `None` skips the sentence.
    Pinned(Vec<Option<usize>>),
    /// The analysis sharing the most spans with the brackets; ties go to
    /// the first in enumeration order.
    Auto,
}

/// Most analyses unpacked per sentence when selecting among them.
pub const SELECTION_LIMIT: usize = 10_000;

#[derive(Debug, Clone, Default)]
pub struct TrainOutcome {
    pub counts: TransitionCounts,
    pub used: usize,
    /// Skipped sentences (0-based) with the reason.
    pub skipped: Vec<(usize, String)>,
}

/// Reads a selection file: one line per sentence, an analysis index or `-`.
pub fn read_selection(text: &str) -> Result<Vec<Option<usize>>, EvalError> {
    text.lines()
        .enumerate()
        .map(|(i, l)| match l.trim() {
            "-" | "" => Ok(None),
            s => s.parse().map(Some).map_err(|_| EvalError::Format {
                line: i + 1,
                msg: format!("expected an analysis index or `-`, found `{s}`"),
            }),
        })
        .collect()
}

fn choose(parser: &Parser, trees: &[DerivationTree], brackets: &[Span]) -> usize {
    let gold: BTreeSet<Span> = brackets.iter().copied().collect();
    let mut best = (0, 0);
    for (i, t) in trees.iter().enumerate() {
        let shared = parser.brackets(t).iter().filter(|s| gold.contains(s)).count();
        if i == 0 || shared > best.1 {
            best = (i, shared);
        }
    }
    best.0
}

/// Parses each sentence under its brackets, resolves what ambiguity remains
/// according to `selection`, and counts the transitions of the chosen
/// derivations.
pub fn train_treebank(
    parser: &Parser,
    sentences: &[Vec<Token>],
    brackets: &[Vec<Span>],
    selection: &Selection,
    opts: &ParseOptions,
) -> Result<TrainOutcome, PipelineError> {
    if sentences.len() != brackets.len() {
        return Err(PipelineError::Misaligned {
            sentences: sentences.len(),
            brackets: brackets.len(),
        });
    }
    let mut out = TrainOutcome::default();
    let mut histories: Vec<ParseHistory> = Vec::new();
    for (i, (tokens, spans)) in sentences.iter().zip(brackets).enumerate() {
        let forest = match constrained_parse(tokens, spans, &parser.tables, &parser.bg, opts) {
            Ok(f) => f,
            Err(e) => {
                out.skipped.push((i, e.to_string()));
                continue;
            }
        };
        let count = count_analyses(&forest);
        let pick = match selection {
            Selection::UniqueOnly if count != BigUint::from(1u32) => {
                out.skipped
                    .push((i, format!("{count} analyses compatible with the brackets")));
                continue;
            }
            Selection::UniqueOnly => 0,
            Selection::Pinned(p) => match p.get(i).copied().flatten() {
                Some(k) => k,
                None => {
                    out.skipped.push((i, "no analysis selected".into()));
                    continue;
                }
            },
            Selection::Auto => usize::MAX,
        };
        let limit = if pick == usize::MAX { SELECTION_LIMIT } else { pick + 1 };
        let (trees, _) = forest.trees(limit);
        let pick = if pick == usize::MAX {
            choose(parser, &trees, spans)
        } else {
            pick
        };
        let Some(tree) = trees.get(pick) else {
            out.skipped
                .push((i, format!("selected analysis {pick} but only {} exist", trees.len())));
            continue;
        };
        match extract_history(tree, &parser.tables) {
            Ok(h) => histories.push(h),
            Err(e) => {
                out.skipped.push((i, e.to_string()));
                continue;
            }
        }
        out.used += 1;
    }
    out.counts = train(&histories);
    Ok(out)
}

/// Scores of one pass over a corpus.
#[derive(Debug, Clone, Serialize)]
pub struct Condition {
    pub apb: Option<f64>,
    pub fail_rate: f64,
    pub histogram: Histogram,
    pub eval: EvalReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct PunctReport {
    pub with_punctuation: Condition,
    pub without_punctuation: Condition,
}

impl PunctReport {
    /// Without minus with, for recall, precision, crossings, APB, fail rate.
    pub fn deltas(&self) -> [(&'static str, f64); 5] {
        let (a, b) = (&self.with_punctuation, &self.without_punctuation);
        [
            ("recall", b.eval.recall - a.eval.recall),
            ("precision", b.eval.precision - a.eval.precision),
            ("crossings", b.eval.crossings - a.eval.crossings),
            ("apb", b.apb.unwrap_or(f64::NAN) - a.apb.unwrap_or(f64::NAN)),
            ("fail-rate", b.fail_rate - a.fail_rate),
        ]
    }

    pub fn table(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "{:<12}{:>12}{:>12}{:>12}", "", "with", "without", "delta");
        let (a, b) = (&self.with_punctuation, &self.without_punctuation);
        let rows = [
            ("recall", 100.0 * a.eval.recall, 100.0 * b.eval.recall),
            ("precision", 100.0 * a.eval.precision, 100.0 * b.eval.precision),
            ("crossings", a.eval.crossings, b.eval.crossings),
            ("minC", a.eval.min_c as f64, b.eval.min_c as f64),
            ("apb", a.apb.unwrap_or(f64::NAN), b.apb.unwrap_or(f64::NAN)),
            ("fail-rate", 100.0 * a.fail_rate, 100.0 * b.fail_rate),
        ];
        for (name, x, y) in rows {
            let _ = writeln!(out, "{name:<12}{x:>12.3}{y:>12.3}{:>12.3}", y - x);
        }
        out
    }
}

fn condition(
    parser: &Parser,
    sentences: &[Vec<Token>],
    gold: &[BracketSet],
    model: &ProbModel,
    geig: GeigOptions,
    opts: &ParseOptions,
) -> Result<Condition, PipelineError> {
    let mut results = Vec::with_capacity(sentences.len());
    for s in sentences {
        results.push(analyse(parser, s, Some(model), geig.k, opts)?);
    }
    let stats: Vec<SentenceStat> = results.iter().map(SentenceResult::stat).collect();
    let candidates: Vec<Vec<BracketSet>> = results.iter().map(SentenceResult::candidates).collect();
    let failed = results.iter().filter(|r| r.status != Status::Ok).count();
    Ok(Condition {
        apb: apb(&stats).ok(),
        fail_rate: if results.is_empty() {
            0.0
        } else {
            failed as f64 / results.len() as f64
        },
        histogram: eval::ambiguity_histogram(&stats),
        eval: geig_evaluate(&candidates, gold, geig)?,
    })
}

/// Parses and scores the corpus as given, then again with sentence-internal
/// punctuation removed and the gold brackets realigned to the shorter
/// sentences.
pub fn punct_experiment(
    parser: &Parser,
    sentences: &[Vec<Token>],
    gold: &[Vec<Span>],
    model: &ProbModel,
    geig: GeigOptions,
    opts: &ParseOptions,
) -> Result<PunctReport, PipelineError> {
    if sentences.len() != gold.len() {
        return Err(PipelineError::Misaligned {
            sentences: sentences.len(),
            brackets: gold.len(),
        });
    }
    let gold_with: Vec<BracketSet> = sentences
        .iter()
        .zip(gold)
        .map(|(s, g)| BracketSet::new(s.len(), g.clone()))
        .collect();
    let mut stripped = Vec::with_capacity(sentences.len());
    let mut gold_without = Vec::with_capacity(sentences.len());
    for (s, g) in sentences.iter().zip(gold) {
        let (tokens, map) = depunctuate(s);
        let spans: BTreeSet<Span> = realign_brackets(g, &map).into_iter().collect();
        gold_without.push(BracketSet::new(tokens.len(), spans.into_iter().collect()));
        stripped.push(tokens);
    }
    Ok(PunctReport {
        with_punctuation: condition(parser, sentences, &gold_with, model, geig, opts)?,
        without_punctuation: condition(parser, &stripped, &gold_without, model, geig, opts)?,
    })
}
