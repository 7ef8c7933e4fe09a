//! Command-line front end: compile grammars, parse labelled sentences, train
//! and apply transition models, and evaluate against bracketed treebanks.
//!
//! Exit status: 0 on success, 1 when some sentences failed (parse failure,
//! timeout, unknown label, or skipped in training), 2 on usage or input
//! errors.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser as ClapParser, Subcommand, ValueEnum};
use rayon::prelude::*;

use problr::eval::{format_brackets, geig_evaluate, parse_bracket_line, read_treebank, BracketSet, GeigOptions, Span};
use problr::glr::{read_tokens, ParseOptions, Token};
use problr::grammar::load_grammar;
use problr::pipeline::{
    analyse, punct_experiment, read_selection, train_treebank, Parser, Selection, SentenceResult, Status,
};
use problr::prob::ProbModel;
use problr::text::{depunctuate, realign_brackets, text_grammar, to_text_labels};

const DEFAULT_GRAMMAR: &str = "demo.gr";

#[derive(ClapParser)]
#[command(name = "problr", version, about = "Probabilistic GLR parsing of tag sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a grammar and print its backbone and parse tables.
    Compile(CompileArgs),
    /// Parse labelled sentences, one per line.
    Parse(ParseArgs),
    /// Estimate a transition model from bracketed sentences.
    Train(TrainArgs),
    /// Score ranked parser output against a gold treebank.
    Eval(EvalArgs),
    /// Compare parsing with and without sentence-internal punctuation.
    PunctExperiment(PunctArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Syntactic grammar folded together with the text grammar.
    Integrated,
    /// The grammar file on its own.
    Syntax,
    /// The stand-alone text grammar; words are read as `w`.
    Text,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct GrammarArgs {
    /// Grammar file; looked up in the data directory if not found as given.
    #[arg(long)]
    grammar: Option<PathBuf>,
    /// Directory holding the shipped grammars.
    #[arg(long, env = "PROBLR_DATA")]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Integrated)]
    mode: Mode,
}

#[derive(Args)]
struct RunArgs {
    /// Per-sentence time limit in seconds.
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
    /// Worker threads; output order is always input order.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct CompileArgs {
    #[command(flatten)]
    grammar: GrammarArgs,
    /// Write the artifact here instead of standard output.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ParseArgs {
    #[command(flatten)]
    grammar: GrammarArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Sentences, or `-` for standard input.
    input: PathBuf,
    /// Rank analyses with this model.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Number of ranked analyses to print (uniform model if none given).
    #[arg(long)]
    nbest: Option<usize>,
    /// Constraint brackets, one line per sentence.
    #[arg(long)]
    brackets: Option<PathBuf>,
    /// Strip sentence-internal punctuation before parsing.
    #[arg(long)]
    depunct: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    grammar: GrammarArgs,
    #[command(flatten)]
    run: RunArgs,
    input: PathBuf,
    /// Unlabelled brackets, one line per sentence.
    #[arg(long)]
    brackets: PathBuf,
    /// Analysis index per sentence (`-` to skip).
    #[arg(long, conflicts_with = "auto")]
    select: Option<PathBuf>,
    /// Resolve remaining ambiguity by the analysis sharing most brackets.
    #[arg(long)]
    auto: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Output of `parse` (either format).
    candidates: PathBuf,
    gold: PathBuf,
    /// Analyses per sentence to average over.
    #[arg(short, long, default_value_t = 3)]
    k: usize,
    /// Keep width-one and whole-sentence spans.
    #[arg(long)]
    include_trivial: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct PunctArgs {
    #[command(flatten)]
    grammar: GrammarArgs,
    #[command(flatten)]
    run: RunArgs,
    input: PathBuf,
    gold: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    nbest: usize,
    #[arg(long)]
    include_trivial: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

fn read_input(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        return Ok(s);
    }
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn resolve(path: Option<&Path>, data: Option<&Path>) -> Result<PathBuf> {
    let name = path.unwrap_or(Path::new(DEFAULT_GRAMMAR));
    if name.exists() {
        return Ok(name.to_path_buf());
    }
    let dirs = data
        .map(Path::to_path_buf)
        .into_iter()
        .chain([PathBuf::from("grammars")]);
    for d in dirs {
        let p = d.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    bail!("grammar `{}` not found", name.display())
}

impl GrammarArgs {
    fn load(&self) -> Result<Parser> {
        if self.mode == Mode::Text {
            return Ok(Parser::new(text_grammar())?);
        }
        let path = resolve(self.grammar.as_deref(), self.data.as_deref())?;
        let g = load_grammar(&read_input(&path)?).with_context(|| format!("in {}", path.display()))?;
        Ok(match self.mode {
            Mode::Integrated => Parser::with_text_grammar(&g)?,
            _ => Parser::new(g)?,
        })
    }

    fn tokens(&self, line: &str) -> Result<Vec<Token>> {
        let t = read_tokens(line)?;
        Ok(if self.mode == Mode::Text { to_text_labels(&t) } else { t })
    }
}

impl RunArgs {
    fn options(&self) -> Result<ParseOptions> {
        if !(self.timeout >= 0.0 && self.timeout.is_finite()) {
            bail!("timeout must be a non-negative number of seconds");
        }
        Ok(ParseOptions {
            timeout: Some(Duration::from_secs_f64(self.timeout)),
            ..ParseOptions::default()
        })
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        Ok(rayon::ThreadPoolBuilder::new().num_threads(self.jobs.max(1)).build()?)
    }
}

fn load_model(path: &Path, parser: &Parser) -> Result<ProbModel> {
    let m = ProbModel::from_text(&read_input(path)?).with_context(|| format!("in {}", path.display()))?;
    if m.meta.table_hash != parser.tables.hash() {
        bail!("model {} was trained on different parse tables", path.display());
    }
    Ok(m)
}

fn sentences(g: &GrammarArgs, text: &str) -> Result<Vec<Vec<Token>>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| g.tokens(l).with_context(|| format!("input line {}", i + 1)))
        .collect()
}

fn compile(args: &CompileArgs) -> Result<u8> {
    let p = args.grammar.load()?;
    let mut out = String::new();
    out.push_str("problr-artifact 1\n");
    out.push_str(&format!("grammar {}\n", p.bg.hash()));
    out.push_str(&format!("tables {}\n", p.tables.hash()));
    out.push_str(&format!("states {}\n", p.tables.n_states()));
    out.push_str(&format!("conflicts {}\n", p.tables.conflict_cells()));
    out.push_str("## backbone\n");
    out.push_str(&p.bg.to_text());
    out.push_str("## tables\n");
    out.push_str(&p.tables.dump());
    match &args.output {
        Some(path) => fs::write(path, out)?,
        None => io::stdout().write_all(out.as_bytes())?,
    }
    Ok(0)
}

fn render(i: usize, r: &SentenceResult, format: Format) -> String {
    match format {
        Format::Json => {
            let mut v = serde_json::to_value(r).expect("result serializes");
            v["line"] = (i + 1).into();
            format!("{v}\n")
        }
        Format::Text => {
            let status = serde_json::to_value(r.status).expect("status serializes");
            let mut s = format!("{}\t{}\t{}\tn={}", i + 1, status.as_str().unwrap_or("?"), r.count, r.n);
            if let Some(m) = &r.message {
                s.push_str(&format!("\t{m}"));
            }
            s.push('\n');
            for a in &r.analyses {
                s.push_str(&format!(
                    "\t{}\t{:.6}\t{}\t{}\n",
                    a.rank,
                    a.log_prob,
                    format_brackets(&a.brackets),
                    a.tree
                ));
            }
            s
        }
    }
}

fn parse_cmd(args: &ParseArgs) -> Result<u8> {
    let p = args.grammar.load()?;
    let opts = args.run.options()?;
    let mut input = sentences(&args.grammar, &read_input(&args.input)?)?;
    let mut constraints: Vec<Vec<Span>> = match &args.brackets {
        Some(path) => read_treebank(&read_input(path)?)?,
        None => vec![Vec::new(); input.len()],
    };
    if constraints.len() != input.len() {
        bail!("{} sentences but {} bracket lines", input.len(), constraints.len());
    }
    if args.depunct {
        for (s, c) in input.iter_mut().zip(constraints.iter_mut()) {
            let (t, map) = depunctuate(s);
            *c = realign_brackets(c, &map);
            *s = t;
        }
    }
    let model = match (&args.model, args.nbest) {
        (Some(path), _) => Some(load_model(path, &p)?),
        (None, Some(_)) => Some(p.uniform_model()),
        (None, None) => None,
    };
    let k = args.nbest.unwrap_or(3);
    if k == 0 {
        bail!("--nbest must be at least 1");
    }
    let results: Vec<SentenceResult> = args.run.pool()?.install(|| {
        input
            .par_iter()
            .zip(&constraints)
            .map(|(s, c)| {
                let opts = ParseOptions {
                    brackets: c.clone(),
                    ..opts.clone()
                };
                analyse(&p, s, model.as_ref(), k, &opts)
            })
            .collect::<Result<_, _>>()
    })?;
    let mut out = io::stdout().lock();
    for (i, r) in results.iter().enumerate() {
        out.write_all(render(i, r, args.format).as_bytes())?;
    }
    Ok(if results.iter().all(|r| r.status == Status::Ok) {
        0
    } else {
        1
    })
}

fn train_cmd(args: &TrainArgs) -> Result<u8> {
    let p = args.grammar.load()?;
    let opts = args.run.options()?;
    let input = sentences(&args.grammar, &read_input(&args.input)?)?;
    let brackets = read_treebank(&read_input(&args.brackets)?)?;
    let selection = match (&args.select, args.auto) {
        (Some(path), _) => Selection::Pinned(read_selection(&read_input(path)?)?),
        (None, true) => Selection::Auto,
        (None, false) => Selection::UniqueOnly,
    };
    let outcome = train_treebank(&p, &input, &brackets, &selection, &opts)?;
    let m = p.model(&outcome.counts);
    let err = m.normalization_error(&p.tables);
    if err > 1e-9 {
        bail!("model distributions do not sum to one (error {err:e})");
    }
    fs::write(&args.output, m.to_text())?;
    for (i, why) in &outcome.skipped {
        eprintln!("skipped sentence {}: {why}", i + 1);
    }
    eprintln!("trained on {} of {} sentences", outcome.used, input.len());
    Ok(if outcome.skipped.is_empty() { 0 } else { 1 })
}

/// Reads `parse` output back into per-sentence candidate bracket sets.
fn read_candidates(text: &str) -> Result<Vec<Vec<BracketSet>>> {
    let mut out: Vec<Vec<BracketSet>> = Vec::new();
    let mut n = 0;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with('{') {
            let v: serde_json::Value = serde_json::from_str(line).with_context(|| format!("line {lineno}"))?;
            let n = v["n"].as_u64().context("record without `n`")? as usize;
            let mut sets = Vec::new();
            for a in v["analyses"].as_array().into_iter().flatten() {
                let spans: Vec<Span> = serde_json::from_value(a["brackets"].clone())?;
                sets.push(BracketSet::new(n, spans));
            }
            out.push(sets);
        } else if let Some(rest) = line.strip_prefix('\t') {
            let spans = rest
                .split('\t')
                .nth(2)
                .with_context(|| format!("line {lineno}: malformed analysis"))?;
            let last = out
                .last_mut()
                .with_context(|| format!("line {lineno}: analysis before any sentence"))?;
            last.push(BracketSet::new(n, parse_bracket_line(spans, lineno)?));
        } else {
            n = line
                .split('\t')
                .find_map(|f| f.strip_prefix("n="))
                .and_then(|f| f.parse().ok())
                .with_context(|| format!("line {lineno}: sentence line without n="))?;
            out.push(Vec::new());
        }
    }
    Ok(out)
}

fn eval_cmd(args: &EvalArgs) -> Result<u8> {
    let candidates = read_candidates(&read_input(&args.candidates)?)?;
    let gold = read_treebank(&read_input(&args.gold)?)?;
    if candidates.len() != gold.len() {
        bail!(
            "{} candidate sentences but {} gold sentences",
            candidates.len(),
            gold.len()
        );
    }
    let gold: Vec<BracketSet> = gold
        .into_iter()
        .zip(&candidates)
        .map(|(g, c)| {
            let n = c
                .first()
                .map_or_else(|| g.iter().map(|s| s.1).max().unwrap_or(0), |b| b.n);
            BracketSet::new(n, g)
        })
        .collect();
    let report = geig_evaluate(
        &candidates,
        &gold,
        GeigOptions {
            k: args.k,
            exclude_trivial: !args.include_trivial,
        },
    )?;
    let out = match args.format {
        Format::Text => report.table(),
        Format::Json => report.to_json() + "\n",
    };
    io::stdout().write_all(out.as_bytes())?;
    Ok(0)
}

fn punct_cmd(args: &PunctArgs) -> Result<u8> {
    let p = args.grammar.load()?;
    let opts = args.run.options()?;
    let input = sentences(&args.grammar, &read_input(&args.input)?)?;
    let gold = read_treebank(&read_input(&args.gold)?)?;
    let model = match &args.model {
        Some(path) => load_model(path, &p)?,
        None => p.uniform_model(),
    };
    let geig = GeigOptions {
        k: args.nbest,
        exclude_trivial: !args.include_trivial,
    };
    let report = punct_experiment(&p, &input, &gold, &model, geig, &opts)?;
    let out = match args.format {
        Format::Text => report.table(),
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
    };
    io::stdout().write_all(out.as_bytes())?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Compile(a) => compile(a),
        Command::Parse(a) => parse_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::PunctExperiment(a) => punct_cmd(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
