//! The `dylex` command line.
//!
//! Configuration is resolved as built-in defaults, then the `--config` file
//! (`key = value` lines, `#` comments), then `DYLEX_SEED`, then command-line
//! flags, later sources winning. Machine-readable results go to stdout and
//! diagnostics to stderr. Exit codes: 0 success, 1 usage error, 2 data
//! error, 3 verification failure.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::data::{parse_conll, LabeledSentence, RawSentence, Segmentation, Tokenizer, TokenizerOptions};
use crate::lexicon::Lexicon;
use crate::matcher::{cap_candidates, fast_match, select_top_n};
use crate::model::{load_model, save_model, DyLexModel, ModelConfig};
use crate::tensor::Fault;
use crate::train::gradcheck::{full_model_gradcheck, GradcheckOptions};
use crate::train::synth::{generate, SynthConfig};
use crate::train::{evaluate, prepare_example, train, EvalReport, PreparedExample, TrainConfig};
use crate::vocab::{TagVocabulary, DEGENERATE_CATEGORY};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

pub const SEED_ENV: &str = "DYLEX_SEED";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Verify(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Verify(_) => EXIT_VERIFY,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Verify(m) => m,
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "dylex", version, about = "Lexicon-aware sequence tagging with dynamic lexicons")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build, edit and inspect lexicon files.
    #[command(subcommand)]
    Lexicon(LexiconCommand),
    /// Print the candidate tag sequences a lexicon produces for a sentence.
    Match(MatchArgs),
    /// Train a model and write a checkpoint and a metrics log.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled corpus.
    Eval(EvalArgs),
    /// Tag sentences read one per line.
    Predict(PredictArgs),
    /// Compare the full model's gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic corpus with two lexicon variants.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Clone)]
pub struct TokenizerArgs {
    /// Take the tokenizer (and categories) from a model checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Tokenizer vocabulary file, one piece per line.
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    /// Lowercase entries and sentences.
    #[arg(long)]
    pub lowercase: bool,
    /// `whitespace` or `characters`.
    #[arg(long, default_value = "whitespace")]
    pub segmentation: String,
}

impl Default for TokenizerArgs {
    fn default() -> Self {
        TokenizerArgs {
            checkpoint: None,
            tokenizer: None,
            lowercase: false,
            segmentation: "whitespace".into(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum LexiconCommand {
    /// Load a TSV lexicon, report its size and optionally write it back normalized.
    Build {
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        tok: TokenizerArgs,
    },
    /// Add one entry and save the file.
    Add {
        #[arg(long)]
        lexicon: PathBuf,
        surface: String,
        category: String,
        /// Allow a category the lexicon does not have yet.
        #[arg(long)]
        new_category: bool,
        #[command(flatten)]
        tok: TokenizerArgs,
    },
    /// Remove one entry and save the file.
    Remove {
        #[arg(long)]
        lexicon: PathBuf,
        surface: String,
        category: String,
        #[command(flatten)]
        tok: TokenizerArgs,
    },
    /// Entry count, per-category counts and longest entry.
    Stats {
        #[arg(long)]
        lexicon: PathBuf,
        #[command(flatten)]
        tok: TokenizerArgs,
    },
}

/// Flags shared by the commands that build or run a model.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(long)]
    pub dict_candidate: Option<usize>,
    #[arg(long)]
    pub max_seq_length: Option<usize>,
    #[arg(long)]
    pub fusion: Option<String>,
    #[arg(long)]
    pub teacher_forcing: bool,
    #[arg(long)]
    pub use_first: Option<bool>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Any other configuration key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub lexicon: PathBuf,
    #[command(flatten)]
    pub tok: TokenizerArgs,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Sentence words; without them every stdin line is a sentence.
    pub sentence: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// CoNLL training files, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub corpus: Vec<PathBuf>,
    /// Lexicon per training file (or one for all), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub lexicon: Vec<PathBuf>,
    /// CoNLL development files, paired with lexicons like `--corpus`.
    #[arg(long, value_delimiter = ',')]
    pub dev: Vec<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    /// Metrics log; stdout when absent.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Sentences, one per line; stdin when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    /// Replace the GELU backward rule with a wrong one.
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub ambiguity_rate: f64,
    #[arg(long, default_value_t = 4)]
    pub categories: usize,
    #[arg(long, default_value_t = 600)]
    pub entities: usize,
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    #[arg(long, default_value_t = 300)]
    pub dev: usize,
    #[arg(long, default_value_t = 500)]
    pub test: usize,
}

/// Everything a run can be configured with.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tokenizer_vocab: usize,
    pub segmentation: Segmentation,
    pub lowercase: bool,
    /// Keys set explicitly by a file, the environment or a flag, in order.
    pub explicit: Vec<(String, String)>,
}

const DERIVED_KEYS: &[&str] = &["subword_vocab_size", "tag_vocab_size", "label_vocab_size"];
const STRUCTURAL_KEYS: &[&str] = &[
    "hidden",
    "layers",
    "heads",
    "ffn",
    "max_seq_length",
    "sigmoid_tagger",
    "denoiser_residual",
    "tokenizer_vocab",
    "segmentation",
    "lowercase",
];

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            tokenizer_vocab: 800,
            segmentation: Segmentation::Whitespace,
            lowercase: false,
            explicit: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        if DERIVED_KEYS.contains(&key) {
            return Err(format!("`{key}` is derived from the data and cannot be set"));
        }
        let known = match key {
            "tokenizer_vocab" => {
                self.tokenizer_vocab = value.parse().map_err(|_| format!("invalid value `{value}` for `{key}`"))?;
                true
            }
            "segmentation" => {
                self.segmentation =
                    Segmentation::parse(value).ok_or_else(|| format!("invalid segmentation `{value}`"))?;
                true
            }
            "lowercase" => {
                self.lowercase =
                    crate::model::parse_bool(value).ok_or_else(|| format!("invalid boolean `{value}` for `{key}`"))?;
                true
            }
            _ => self.model.set(key, value)? || self.train.set(key, value)?,
        };
        if !known {
            return Err(format!("unknown configuration key `{key}`"));
        }
        self.explicit.push((key.to_string(), value.to_string()));
        Ok(())
    }

    /// Parses `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse_file(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    /// Applies file, environment seed and flags over the defaults.
    pub fn resolve(args: &ConfigArgs, env_seed: Option<&str>) -> Result<Self> {
        let mut rc = RunConfig::default();
        if let Some(path) = &args.config {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let pairs = Self::parse_file(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            for (k, v) in pairs {
                rc.set(&k, &v).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            }
        }
        if let Some(s) = env_seed {
            rc.set("seed", s).map_err(|e| CliError::Usage(format!("{SEED_ENV}: {e}")))?;
        }
        let mut flags: Vec<(String, String)> = Vec::new();
        if let Some(v) = args.seed {
            flags.push(("seed".into(), v.to_string()));
        }
        if let Some(v) = args.top_n {
            flags.push(("top_n".into(), v.to_string()));
        }
        if let Some(v) = args.dict_candidate {
            flags.push(("dict_candidate".into(), v.to_string()));
        }
        if let Some(v) = args.max_seq_length {
            flags.push(("max_seq_length".into(), v.to_string()));
        }
        if let Some(v) = &args.fusion {
            flags.push(("fusion".into(), v.clone()));
        }
        if args.teacher_forcing {
            flags.push(("teacher_forcing".into(), "true".into()));
        }
        if let Some(v) = args.use_first {
            flags.push(("use_first".into(), v.to_string()));
        }
        if let Some(v) = args.epochs {
            flags.push(("epochs".into(), v.to_string()));
        }
        for kv in &args.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            flags.push((k.trim().to_string(), v.trim().to_string()));
        }
        for (k, v) in flags {
            rc.set(&k, &v).map_err(CliError::Usage)?;
        }
        let probe = ModelConfig {
            label_vocab_size: 1,
            tag_vocab_size: 2,
            ..rc.model.clone()
        };
        probe.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        rc.train.validate().map_err(CliError::Usage)?;
        Ok(rc)
    }

    /// Applies explicit settings onto a loaded model; structural settings
    /// must agree with the checkpoint.
    pub fn apply_to_model(&self, model: &mut DyLexModel<f32>) -> Result<()> {
        for (k, v) in &self.explicit {
            if STRUCTURAL_KEYS.contains(&k.as_str()) {
                let recorded = match k.as_str() {
                    "segmentation" => Some(model.tokenizer().options().segmentation.as_str().to_string()),
                    "lowercase" => Some(model.tokenizer().options().lowercase.to_string()),
                    "tokenizer_vocab" => None,
                    _ => model.config.get(k),
                };
                let mut probe = model.config.clone();
                let requested = match k.as_str() {
                    "segmentation" => Segmentation::parse(v).map(|s| s.as_str().to_string()),
                    "lowercase" => crate::model::parse_bool(v).map(|b| b.to_string()),
                    "tokenizer_vocab" => None,
                    _ => probe.set(k, v).ok().and_then(|_| probe.get(k)),
                };
                if recorded.is_some() && recorded != requested {
                    return Err(CliError::Data(format!(
                        "configuration sets {k} = {v} but the checkpoint has {}",
                        recorded.unwrap_or_default()
                    )));
                }
            } else if model.config.get(k).is_some() {
                model.config.set(k, v).map_err(CliError::Usage)?;
            }
        }
        model.config.validate().map_err(|e| CliError::Usage(e.to_string()))
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{}: no such file", path.display())))
    }
}

fn tokenizer_options(tok: &TokenizerArgs) -> Result<TokenizerOptions> {
    let segmentation = Segmentation::parse(&tok.segmentation)
        .ok_or_else(|| CliError::Usage(format!("unknown segmentation `{}`", tok.segmentation)))?;
    Ok(TokenizerOptions {
        segmentation,
        lowercase: tok.lowercase,
    })
}

/// Categories of a TSV lexicon in first-seen order.
fn tsv_categories(text: &str) -> Vec<String> {
    let mut seen = Vec::new();
    for line in text.lines() {
        if let Some((_, c)) = line.split_once('\t') {
            let c = c.trim_end_matches('\r');
            if !c.is_empty() && !seen.iter().any(|s: &String| s == c) {
                seen.push(c.to_string());
            }
        }
    }
    seen
}

fn vocab_for(categories: &[String]) -> Result<TagVocabulary> {
    if !categories.is_empty() && categories.iter().all(|c| c == DEGENERATE_CATEGORY) {
        return Ok(TagVocabulary::degenerate());
    }
    TagVocabulary::new(categories).map_err(data)
}

/// Loads a lexicon file with the tokenizer and categories selected by `tok`.
/// Without a checkpoint or vocabulary file, a character-level tokenizer is
/// built from the file itself.
pub fn load_lexicon(path: &Path, tok: &TokenizerArgs) -> Result<Lexicon> {
    require_file(path)?;
    let text = fs::read_to_string(path).map_err(data)?;
    let (tokenizer, vocab, auto) = if let Some(ckpt) = &tok.checkpoint {
        require_file(ckpt)?;
        let m = load_model(ckpt).map_err(data)?;
        (Arc::clone(m.tokenizer()), m.vocab().clone(), false)
    } else {
        let options = tokenizer_options(tok)?;
        let tokenizer = match &tok.tokenizer {
            Some(p) => {
                require_file(p)?;
                Tokenizer::load(p, options).map_err(data)?
            }
            None => Tokenizer::build(text.lines().filter_map(|l| l.split('\t').next()), 0, options),
        };
        (Arc::new(tokenizer), vocab_for(&tsv_categories(&text))?, true)
    };
    let mut lex = Lexicon::new(tokenizer, vocab);
    lex.read_tsv(io::Cursor::new(text), auto)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(lex)
}

fn lexicon_for_model(path: &Path, model: &DyLexModel<f32>) -> Result<Lexicon> {
    require_file(path)?;
    let mut lex = Lexicon::new(Arc::clone(model.tokenizer()), model.vocab().clone());
    lex.load_tsv(path, false)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(lex)
}

fn write_stats(out: &mut dyn Write, lex: &Lexicon) -> io::Result<()> {
    let s = lex.stats();
    writeln!(out, "entries\t{}", s.entries)?;
    writeln!(out, "max_entry_pieces\t{}", s.max_entry_pieces)?;
    writeln!(out, "trie_nodes\t{}", s.trie_nodes)?;
    for (c, n) in &s.per_category {
        writeln!(out, "category\t{c}\t{n}")?;
    }
    Ok(())
}

fn cmd_lexicon(cmd: LexiconCommand, out: &mut dyn Write) -> Result<()> {
    match cmd {
        LexiconCommand::Build { lexicon, output, tok } => {
            let lex = load_lexicon(&lexicon, &tok)?;
            writeln!(out, "entries\t{}", lex.len()).map_err(data)?;
            if let Some(o) = output {
                lex.save_tsv(&o).map_err(data)?;
            }
        }
        LexiconCommand::Add {
            lexicon,
            surface,
            category,
            new_category,
            tok,
        } => {
            let mut lex = load_lexicon(&lexicon, &tok)?;
            if new_category {
                lex.register_category(&category).map_err(data)?;
            }
            let added = lex.insert(&surface, &category).map_err(data)?;
            lex.save_tsv(&lexicon).map_err(data)?;
            writeln!(out, "{}", if added { "added" } else { "present" }).map_err(data)?;
        }
        LexiconCommand::Remove {
            lexicon,
            surface,
            category,
            tok,
        } => {
            let mut lex = load_lexicon(&lexicon, &tok)?;
            let removed = lex.remove(&surface, &category);
            lex.save_tsv(&lexicon).map_err(data)?;
            writeln!(out, "{}", if removed { "removed" } else { "absent" }).map_err(data)?;
        }
        LexiconCommand::Stats { lexicon, tok } => {
            let lex = load_lexicon(&lexicon, &tok)?;
            write_stats(out, &lex).map_err(data)?;
        }
    }
    Ok(())
}

fn read_lines(input: Option<&Path>) -> Result<Vec<String>> {
    let text = match input {
        Some(p) => {
            require_file(p)?;
            fs::read_to_string(p).map_err(data)?
        }
        None => {
            let mut s = String::new();
            for line in io::stdin().lock().lines() {
                s.push_str(&line.map_err(data)?);
                s.push('\n');
            }
            s
        }
    };
    Ok(text.lines().map(str::to_string).collect())
}

fn cmd_match(args: MatchArgs, out: &mut dyn Write) -> Result<()> {
    let rc = RunConfig::resolve(&args.cfg, None)?;
    let lex = load_lexicon(&args.lexicon, &args.tok)?;
    let snapshot = lex.snapshot();
    snapshot.check_tokenizer(lex.tokenizer()).map_err(data)?;
    let sentences = if args.sentence.is_empty() {
        read_lines(None)?
    } else {
        vec![args.sentence.join(" ")]
    };
    for (i, text) in sentences.iter().enumerate() {
        if i > 0 {
            writeln!(out).map_err(data)?;
        }
        let words = lex.tokenizer().split_words(text);
        let enc = lex.tokenizer().encode(&words);
        if enc.len() > rc.model.max_seq_length {
            eprintln!(
                "warning: sentence {} has {} positions, more than max_seq_length {}",
                i + 1,
                enc.len(),
                rc.model.max_seq_length
            );
        }
        let set = cap_candidates(select_top_n(fast_match(&snapshot, &enc.ids), rc.model.top_n), rc.model.dict_candidate);
        write!(out, "{}", set.dump(lex.vocab())).map_err(data)?;
    }
    Ok(())
}

/// Reads CoNLL files and pairs each sentence with its file's lexicon.
fn load_split(
    corpora: &[PathBuf],
    lexicons: &[Lexicon],
    tokenizer: &Tokenizer,
    vocab: &TagVocabulary,
    model: &ModelConfig,
) -> Result<Vec<PreparedExample>> {
    let snaps: Vec<_> = lexicons.iter().map(Lexicon::snapshot).collect();
    let mut out = Vec::new();
    for (i, path) in corpora.iter().enumerate() {
        let corpus = parse_conll(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if corpus.repaired > 0 {
            eprintln!("{}: repaired {} stray I- labels", path.display(), corpus.repaired);
        }
        let snap = match snaps.len() {
            0 => None,
            1 => Some(&snaps[0]),
            _ => Some(&snaps[i]),
        };
        for raw in &corpus.sentences {
            let raw = crate::data::truncate_to_fit(raw, tokenizer, model.max_seq_length);
            let s = LabeledSentence::new(&raw, tokenizer, vocab).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            out.push(prepare_example(s, snap, model.top_n, model.dict_candidate).map_err(data)?);
        }
    }
    Ok(out)
}

fn check_pairing(corpora: &[PathBuf], lexicons: &[PathBuf], what: &str) -> Result<()> {
    if lexicons.len() > 1 && lexicons.len() != corpora.len() {
        return Err(CliError::Usage(format!(
            "{} {what} files but {} lexicons; give one lexicon or one per file",
            corpora.len(),
            lexicons.len()
        )));
    }
    Ok(())
}

fn cmd_train(args: TrainArgs, env_seed: Option<&str>, out: &mut dyn Write) -> Result<()> {
    let rc = RunConfig::resolve(&args.cfg, env_seed)?;
    for p in args.corpus.iter().chain(&args.lexicon).chain(&args.dev) {
        require_file(p)?;
    }
    check_pairing(&args.corpus, &args.lexicon, "corpus")?;
    check_pairing(&args.dev, &args.lexicon, "dev")?;
    let options = TokenizerOptions {
        segmentation: rc.segmentation,
        lowercase: rc.lowercase,
    };
    let mut words = Vec::new();
    let mut categories: Vec<String> = Vec::new();
    for p in &args.corpus {
        let c = parse_conll(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        words.extend(c.words().map(str::to_string));
        for cat in c.categories() {
            if !categories.contains(&cat) {
                categories.push(cat);
            }
        }
    }
    let mut lexicon_texts = Vec::new();
    for p in &args.lexicon {
        let text = fs::read_to_string(p).map_err(data)?;
        for cat in tsv_categories(&text) {
            if !categories.contains(&cat) {
                categories.push(cat);
            }
        }
        lexicon_texts.push(text);
    }
    let degenerate = categories.is_empty() || categories.iter().all(|c| c == DEGENERATE_CATEGORY);
    let vocab = if degenerate {
        TagVocabulary::degenerate()
    } else {
        TagVocabulary::new(categories.iter().filter(|c| *c != DEGENERATE_CATEGORY)).map_err(data)?
    };
    let tokenizer = Arc::new(Tokenizer::build(
        words.iter().map(String::as_str),
        rc.tokenizer_vocab,
        options,
    ));
    let mut lexicons = Vec::new();
    for (p, text) in args.lexicon.iter().zip(&lexicon_texts) {
        let mut lex = Lexicon::new(Arc::clone(&tokenizer), vocab.clone());
        lex.read_tsv(io::Cursor::new(text), false)
            .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        lexicons.push(lex);
    }
    let train_set = load_split(&args.corpus, &lexicons, &tokenizer, &vocab, &rc.model)?;
    let dev_set = load_split(&args.dev, &lexicons, &tokenizer, &vocab, &rc.model)?;
    eprintln!(
        "training on {} sentences ({} dev), {} subword pieces, labels: {vocab}",
        train_set.len(),
        dev_set.len(),
        tokenizer.vocab_size()
    );
    let model = DyLexModel::<f32>::new(rc.model.clone(), tokenizer, vocab, rc.train.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let outcome = match &args.metrics {
        Some(path) => {
            let mut f = BufWriter::new(fs::File::create(path).map_err(data)?);
            let o = train(model, &train_set, &dev_set, &rc.train, Some(&mut f)).map_err(data)?;
            f.flush().map_err(data)?;
            o
        }
        None => train(model, &train_set, &dev_set, &rc.train, Some(out)).map_err(data)?,
    };
    save_model(&args.output, &outcome.model).map_err(data)?;
    if let Some(e) = outcome.best_epoch {
        eprintln!("kept epoch {e}");
    }
    Ok(())
}

fn write_report(out: &mut dyn Write, r: &EvalReport) -> io::Result<()> {
    writeln!(out, "span_precision\t{:.6}", r.span_precision)?;
    writeln!(out, "span_recall\t{:.6}", r.span_recall)?;
    writeln!(out, "span_f1\t{:.6}", r.span_f1)?;
    writeln!(out, "denoise_accuracy\t{:.6}", r.denoise_accuracy)?;
    for (c, f) in &r.per_category_f1 {
        writeln!(out, "f1\t{c}\t{f:.6}")?;
    }
    Ok(())
}

fn load_checkpoint_with(path: &Path, rc: &RunConfig) -> Result<DyLexModel<f32>> {
    require_file(path)?;
    let mut model = load_model(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    rc.apply_to_model(&mut model)?;
    Ok(model)
}

fn cmd_eval(args: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let rc = RunConfig::resolve(&args.cfg, None)?;
    require_file(&args.corpus)?;
    let model = load_checkpoint_with(&args.checkpoint, &rc)?;
    let lexicons = match &args.lexicon {
        Some(p) => vec![lexicon_for_model(p, &model)?],
        None => Vec::new(),
    };
    let examples = load_split(
        std::slice::from_ref(&args.corpus),
        &lexicons,
        model.tokenizer(),
        model.vocab(),
        &model.config,
    )?;
    let report = evaluate(&model, &examples).map_err(data)?;
    write_report(out, &report).map_err(data)
}

fn cmd_predict(args: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let rc = RunConfig::resolve(&args.cfg, None)?;
    let model = load_checkpoint_with(&args.checkpoint, &rc)?;
    let snapshot = match &args.lexicon {
        Some(p) => Some(lexicon_for_model(p, &model)?.snapshot()),
        None => None,
    };
    let lines = read_lines(args.input.as_deref())?;
    let mut first = true;
    for line in lines {
        let words = model.tokenizer().split_words(&line);
        if words.is_empty() {
            continue;
        }
        let raw = crate::data::truncate_to_fit(
            &RawSentence {
                words: words.clone(),
                spans: vec![],
            },
            model.tokenizer(),
            model.config.max_seq_length,
        );
        if raw.words.len() < words.len() {
            eprintln!("warning: sentence truncated to {} words", raw.words.len());
        }
        let sentence = LabeledSentence::unlabeled(&raw.words, model.tokenizer());
        let matches = match &snapshot {
            Some(s) => model.match_encoding(s, &sentence.encoding),
            None => Default::default(),
        };
        let p = model.predict(&sentence, &matches).map_err(data)?;
        let tagged = RawSentence {
            words: raw.words,
            spans: p
                .spans
                .iter()
                .map(|s| {
                    let name = if model.vocab().is_degenerate() {
                        String::new()
                    } else {
                        model.vocab().category_name(s.category).to_string()
                    };
                    (s.start, s.end, name)
                })
                .collect(),
        };
        if !first {
            writeln!(out).map_err(data)?;
        }
        first = false;
        for (w, l) in tagged.words.iter().zip(tagged.labels()) {
            writeln!(out, "{w}\t{l}").map_err(data)?;
        }
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs, env_seed: Option<&str>, out: &mut dyn Write) -> Result<()> {
    let rc = RunConfig::resolve(&args.cfg, env_seed)?;
    let opts = GradcheckOptions {
        hidden: rc.model.hidden.min(16),
        heads: if rc.model.hidden.min(16) % rc.model.heads == 0 { rc.model.heads } else { 2 },
        layers: rc.model.layers,
        fusion: rc.model.fusion,
        seed: rc.train.seed,
        eps: args.eps,
        fault: args.corrupt_backward.then_some(Fault::GeluBackward),
        ..Default::default()
    };
    let r = full_model_gradcheck(&opts).map_err(data)?;
    let worst = r.worst_param.clone().unwrap_or_else(|| "-".into());
    writeln!(out, "max_rel_error\t{:.6e}", r.max_rel_error).map_err(data)?;
    writeln!(out, "worst_param\t{worst}\t{}", r.worst_index).map_err(data)?;
    writeln!(out, "coordinates\t{}", r.coordinates_checked).map_err(data)?;
    if !r.passes(args.tolerance) {
        return Err(CliError::Verify(format!(
            "gradient check failed: relative error {:.3e} > {:.1e} at {worst}[{}] (analytic {:.6e}, numeric {:.6e})",
            r.max_rel_error, args.tolerance, r.worst_index, r.worst_analytic, r.worst_numeric
        )));
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = SynthConfig {
        seed: args.seed,
        ambiguity_rate: args.ambiguity_rate,
        categories: args.categories,
        entities: args.entities,
        train: args.train,
        dev: args.dev,
        test: args.test,
        ..Default::default()
    };
    let corpus = generate(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    corpus.write_to_dir(&args.output).map_err(data)?;
    let cats: BTreeSet<&str> = corpus.categories.iter().map(String::as_str).collect();
    writeln!(
        out,
        "wrote {} train, {} dev, {} test sentences; categories {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        cats.into_iter().collect::<Vec<_>>().join(",")
    )
    .map_err(data)
}

/// Runs a parsed command, writing results to `out`.
pub fn execute(cli: Cli, env_seed: Option<&str>, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Lexicon(c) => cmd_lexicon(c, out),
        Command::Match(a) => cmd_match(a, out),
        Command::Train(a) => cmd_train(a, env_seed, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, env_seed, out),
        Command::Synth(a) => cmd_synth(a, out),
    }
}

/// Parses `args` and runs, returning the process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    match execute(cli, env_seed.as_deref(), out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}
