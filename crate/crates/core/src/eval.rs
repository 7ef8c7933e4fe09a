//! Corpus metrics: average parse base, ambiguity histograms, and unlabelled
//! bracketing scores (recall, precision, crossings, minC) over the top-k
//! analyses of each sentence.

use std::fmt::Write as _;

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

pub use crate::glr::crosses;

pub type Span = (usize, usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no parsed sentences to average over")]
    Empty,
    #[error("{candidates} candidate sentences but {gold} gold sentences")]
    LengthMismatch { candidates: usize, gold: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Outcome of parsing one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceStat {
    /// Token count.
    pub n: usize,
    /// Number of analyses; zero means the parse failed.
    pub p: BigUint,
    pub timed_out: bool,
}

impl SentenceStat {
    pub fn parsed(n: usize, p: impl Into<BigUint>) -> Self {
        SentenceStat {
            n,
            p: p.into(),
            timed_out: false,
        }
    }

    pub fn timeout(n: usize) -> Self {
        SentenceStat {
            n,
            p: BigUint::zero(),
            timed_out: true,
        }
    }
}

/// Natural log of an arbitrarily large count.
pub fn ln_big(p: &BigUint) -> f64 {
    let bits = p.bits();
    if bits <= 1000 {
        return p.to_f64().unwrap_or(f64::INFINITY).ln();
    }
    let shift = bits - 64;
    (p >> shift).to_f64().unwrap_or(f64::INFINITY).ln() + shift as f64 * std::f64::consts::LN_2
}

/// Geometric mean over parsed sentences of the n-th root of the analysis
/// count. Failed and timed-out sentences are left out.
pub fn apb(stats: &[SentenceStat]) -> Result<f64, EvalError> {
    let logs: Vec<f64> = stats
        .iter()
        .filter(|s| !s.timed_out && !s.p.is_zero() && s.n > 0)
        .map(|s| ln_big(&s.p) / s.n as f64)
        .collect();
    if logs.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok((logs.iter().sum::<f64>() / logs.len() as f64).exp())
}

/// Analyses expected for a sentence of the given length.
pub fn expected_analyses(apb: f64, length: f64) -> f64 {
    apb.powf(length)
}

pub const BUCKETS: [&str; 8] = [
    "fail", "1-9", "10-99", "100-999", "1K-9.9K", "10K-99K", "100K+", "timeout",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Histogram {
    pub counts: [usize; 8],
    /// Summed token counts, for mean sentence length per bucket.
    pub lengths: [usize; 8],
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn mean_length(&self, bucket: usize) -> Option<f64> {
        (self.counts[bucket] > 0).then(|| self.lengths[bucket] as f64 / self.counts[bucket] as f64)
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<10}{:>8}{:>8}{:>8}\n", "class", "n", "%", "MSL");
        let total = self.total().max(1) as f64;
        for (i, name) in BUCKETS.iter().enumerate() {
            let msl = self.mean_length(i).map_or("-".to_string(), |m| format!("{m:.1}"));
            let pct = 100.0 * self.counts[i] as f64 / total;
            let _ = writeln!(out, "{name:<10}{:>8}{pct:>8.1}{msl:>8}", self.counts[i]);
        }
        out
    }
}

fn bucket(s: &SentenceStat) -> usize {
    if s.timed_out {
        return 7;
    }
    if s.p.is_zero() {
        return 0;
    }
    let mut b = 1;
    let mut bound = BigUint::from(10u32);
    while b < 6 && s.p >= bound {
        b += 1;
        bound *= 10u32;
    }
    b
}

pub fn ambiguity_histogram(stats: &[SentenceStat]) -> Histogram {
    let mut h = Histogram::default();
    for s in stats {
        let b = bucket(s);
        h.counts[b] += 1;
        h.lengths[b] += s.n;
    }
    h
}

/// The unlabelled brackets of one analysis (or of the gold tree) over a
/// sentence of `n` tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BracketSet {
    pub n: usize,
    pub spans: Vec<Span>,
}

impl BracketSet {
    pub fn new(n: usize, mut spans: Vec<Span>) -> Self {
        spans.sort_unstable();
        BracketSet { n, spans }
    }

    /// The spans taking part in comparison: with `exclude_trivial`, those
    /// of width one and the whole-sentence span are dropped.
    pub fn comparable(&self, exclude_trivial: bool) -> Vec<Span> {
        self.spans
            .iter()
            .copied()
            .filter(|&(i, j)| !exclude_trivial || (j - i > 1 && (i, j) != (0, self.n)))
            .collect()
    }
}

/// Size of the multiset intersection of two sorted span lists.
pub fn matched(a: &[Span], b: &[Span]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Number of candidate spans crossing at least one gold span.
pub fn crossing_count(candidate: &[Span], gold: &[Span]) -> usize {
    candidate
        .iter()
        .filter(|&&c| gold.iter().any(|&g| crosses(c, g)))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeigOptions {
    pub k: usize,
    pub exclude_trivial: bool,
}

impl Default for GeigOptions {
    fn default() -> Self {
        GeigOptions {
            k: 3,
            exclude_trivial: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentenceEval {
    pub gold: usize,
    /// Candidates actually scored (at most k).
    pub analyses: usize,
    /// Means over the scored candidates.
    pub matched: f64,
    pub found: f64,
    pub crossings: f64,
    pub all_crossing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub k: usize,
    pub exclude_trivial: bool,
    pub weighting: &'static str,
    pub averaging: &'static str,
    pub sentences: usize,
    /// Sentences with no candidate analysis.
    pub unparsed: usize,
    /// Sentences with fewer than k candidates.
    pub shortfall: usize,
    pub recall: f64,
    pub precision: f64,
    pub crossings: f64,
    pub min_c: usize,
    /// Share of sentences with some candidate free of crossings.
    pub consistent: f64,
    pub per_sentence: Vec<SentenceEval>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

/// Scores the top-k candidates of each sentence against its gold brackets,
/// weighting the candidates equally. Recall and precision are micro-averaged
/// over brackets, crossings macro-averaged over sentences. A sentence with
/// no candidates contributes its gold brackets as unmatched and no
/// crossings, and is not counted towards minC.
pub fn geig_evaluate(
    candidates: &[Vec<BracketSet>],
    gold: &[BracketSet],
    opts: GeigOptions,
) -> Result<EvalReport, EvalError> {
    if candidates.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            candidates: candidates.len(),
            gold: gold.len(),
        });
    }
    if opts.k == 0 {
        return Err(EvalError::ZeroK);
    }
    let mut per_sentence = Vec::with_capacity(gold.len());
    let (mut sum_matched, mut sum_found, mut sum_gold, mut sum_cross) = (0.0, 0.0, 0.0, 0.0);
    let (mut min_c, mut unparsed, mut shortfall) = (0, 0, 0);
    for (cands, g) in candidates.iter().zip(gold) {
        let gs = g.comparable(opts.exclude_trivial);
        let top = &cands[..cands.len().min(opts.k)];
        if top.len() < opts.k {
            shortfall += 1;
        }
        let mut e = SentenceEval {
            gold: gs.len(),
            analyses: top.len(),
            matched: 0.0,
            found: 0.0,
            crossings: 0.0,
            all_crossing: !top.is_empty(),
        };
        for c in top {
            let cs = c.comparable(opts.exclude_trivial);
            let x = crossing_count(&cs, &gs);
            e.matched += matched(&cs, &gs) as f64;
            e.found += cs.len() as f64;
            e.crossings += x as f64;
            e.all_crossing &= x > 0;
        }
        if top.is_empty() {
            unparsed += 1;
        } else {
            let w = top.len() as f64;
            e.matched /= w;
            e.found /= w;
            e.crossings /= w;
        }
        if e.all_crossing {
            min_c += 1;
        }
        sum_matched += e.matched;
        sum_found += e.found;
        sum_gold += e.gold as f64;
        sum_cross += e.crossings;
        per_sentence.push(e);
    }
    let n = gold.len();
    Ok(EvalReport {
        k: opts.k,
        exclude_trivial: opts.exclude_trivial,
        weighting: "equal over top-k",
        averaging: "recall/precision micro over brackets; crossings macro over sentences",
        sentences: n,
        unparsed,
        shortfall,
        recall: ratio(sum_matched, sum_gold),
        precision: ratio(sum_matched, sum_found),
        crossings: if n == 0 { 0.0 } else { sum_cross / n as f64 },
        min_c,
        consistent: if n == 0 {
            1.0
        } else {
            (n - min_c - unparsed) as f64 / n as f64
        },
        per_sentence,
    })
}

impl EvalReport {
    /// Human-readable summary in the column order minC / Crossings /
    /// Recall / Precision.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# weighting: {}", self.weighting);
        let _ = writeln!(out, "# averaging: {}", self.averaging);
        let _ = writeln!(
            out,
            "# trivial spans (width 1, whole sentence): {}",
            if self.exclude_trivial { "excluded" } else { "included" }
        );
        let _ = writeln!(
            out,
            "# sentences: {}  unparsed: {}  fewer than {} analyses: {}",
            self.sentences, self.unparsed, self.k, self.shortfall
        );
        let _ = writeln!(
            out,
            "{:<18}{:>6}{:>11}{:>9}{:>11}",
            "", "minC", "Crossings", "Recall", "Precision"
        );
        let _ = writeln!(
            out,
            "{:<18}{:>6}{:>11.2}{:>9.2}{:>11.2}",
            format!("top {} weighted =", self.k),
            self.min_c,
            self.crossings,
            100.0 * self.recall,
            100.0 * self.precision
        );
        let _ = writeln!(out, "structurally consistent: {:.2}%", 100.0 * self.consistent);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Parses one line of `(i j)` pairs.
pub fn parse_bracket_line(line: &str, lineno: usize) -> Result<Vec<Span>, EvalError> {
    let err = |msg: String| EvalError::Format { line: lineno, msg };
    let mut spans = Vec::new();
    let mut rest = line.trim();
    while !rest.is_empty() {
        let Some(body) = rest.strip_prefix('(') else {
            return Err(err(format!("expected `(` at `{rest}`")));
        };
        let close = body.find(')').ok_or_else(|| err("unclosed `(`".into()))?;
        let nums: Vec<&str> = body[..close].split_whitespace().collect();
        let [a, b] = nums.as_slice() else {
            return Err(err(format!("expected two indices in `({})`", &body[..close])));
        };
        let parse = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad index `{s}`")));
        let (i, j) = (parse(a)?, parse(b)?);
        if j <= i {
            return Err(err(format!("empty span ({i} {j})")));
        }
        spans.push((i, j));
        rest = body[close + 1..].trim_start();
    }
    Ok(spans)
}

pub fn format_brackets(spans: &[Span]) -> String {
    spans
        .iter()
        .map(|(i, j)| format!("({i} {j})"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Reads a treebank: one line of brackets per sentence.
pub fn read_treebank(text: &str) -> Result<Vec<Vec<Span>>, EvalError> {
    text.lines()
        .enumerate()
        .map(|(i, l)| parse_bracket_line(l, i + 1))
        .collect()
}
