//! `flashpcfg` command-line interface.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flashpcfg::bench::{bench_inside, BenchConfig, CountingAlloc, Variant, DEFAULT_MEMORY_BUDGET};
use flashpcfg::data::{build_vocab, generate_synthetic, load_corpus, Normalizer, VocabLimit, Vocabulary};
use flashpcfg::grammar::{
    load_grammar, load_lowrank, lowrank_to_simple, read_grammar, read_lowrank, save_grammar, validate_grammar,
    GRAMMAR_MAGIC, LOWRANK_MAGIC,
};
use flashpcfg::inside::Engine;
use flashpcfg::parse::{corpus_f1, decode, default_punct_tags, grammar_predictor, parse_punct_tags, read_bracketed_trees, Decoder};
use flashpcfg::train::{evaluate, save_checkpoint_dir, train, TrainConfig};
use flashpcfg::{Error, SimpleGrammar};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

const VALIDATE_TOLERANCE: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "flashpcfg", version, about = "Simple PCFG induction, evaluation and inside-algorithm benchmarks")]
struct Cli {
    /// Worker threads (falls back to FLASHPCFG_THREADS, then all cores).
    #[arg(long, global = true, env = "FLASHPCFG_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a grammar and write a checkpoint directory.
    Train(TrainArgs),
    /// Corpus perplexity under a grammar.
    EvalPpl(EvalPplArgs),
    /// Decode sentences into bracketed trees.
    Parse(ParseArgs),
    /// Unlabeled sentence-level F1 against a bracketed treebank.
    EvalF1(EvalF1Args),
    /// Sample sentences (or trees) from a grammar.
    Sample(SampleArgs),
    /// Convert a low-rank grammar file into an equivalent simple PCFG.
    ConvertLowrank(ConvertArgs),
    /// Time and measure inside-algorithm variants; prints CSV.
    Bench(BenchArgs),
    /// Check that a grammar file is well formed and normalized.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct NormArgs {
    #[arg(long)]
    lowercase: bool,
    /// Map every ASCII digit to 0.
    #[arg(long)]
    normalize_digits: bool,
}

impl NormArgs {
    fn normalizer(&self) -> Normalizer {
        Normalizer {
            lowercase: self.lowercase,
            normalize_digits: self.normalize_digits,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training configuration JSON; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Whitespace-tokenized training sentences, one per line.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// Checkpoint directory to create.
    #[arg(long)]
    out: PathBuf,
    /// Keep the most frequent words (plus <unk>).
    #[arg(long, conflicts_with = "min_freq")]
    vocab_size: Option<usize>,
    /// Keep words seen at least this often.
    #[arg(long)]
    min_freq: Option<u64>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    norm: NormArgs,
}

#[derive(Args)]
struct EvalPplArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "flash")]
    engine: Engine,
    /// Print `metric,value` CSV instead of text.
    #[arg(long)]
    csv: bool,
    #[command(flatten)]
    norm: NormArgs,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// `mbr` (span-posterior maximization) or `viterbi`.
    #[arg(long, default_value = "mbr")]
    decoder: Decoder,
    #[command(flatten)]
    norm: NormArgs,
}

#[derive(Args)]
struct EvalF1Args {
    #[arg(long)]
    grammar: PathBuf,
    /// Bracketed gold trees, one per line.
    #[arg(long)]
    treebank: PathBuf,
    #[arg(long, default_value = "mbr")]
    decoder: Decoder,
    /// Punctuation tags, one per line (defaults to the Penn Treebank set).
    #[arg(long)]
    punct_tags: Option<PathBuf>,
    /// Also write per-sentence scores here.
    #[arg(long)]
    per_sentence: Option<PathBuf>,
    #[command(flatten)]
    norm: NormArgs,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print bracketed trees instead of sentences.
    #[arg(long)]
    trees: bool,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "64,128")]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "10,20")]
    lengths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "logsumexp,logeinsumexp,flash")]
    variants: Vec<Variant>,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rows whose estimated footprint exceeds this many bytes are skipped.
    #[arg(long, default_value_t = DEFAULT_MEMORY_BUDGET)]
    memory_budget: usize,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    path: PathBuf,
    #[arg(long, default_value_t = VALIDATE_TOLERANCE)]
    tol: f64,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult = std::result::Result<(), Failure>;

fn vocab_path(grammar: &Path) -> PathBuf {
    let mut p = grammar.as_os_str().to_owned();
    p.push(".vocab");
    PathBuf::from(p)
}

fn load_with_vocab(grammar: &Path) -> Result<(SimpleGrammar, Vocabulary), Failure> {
    let g = load_grammar(grammar)?;
    let vp = vocab_path(grammar);
    if !vp.exists() {
        return Err(Failure::Usage(format!("vocabulary sidecar {} not found", vp.display())));
    }
    let vocab = Vocabulary::load(&vp)?;
    if vocab.len() != g.dims.vocab_size {
        return Err(Failure::Data(Error::InvalidArgument(format!(
            "{} has {} words but the grammar emits {}",
            vp.display(),
            vocab.len(),
            g.dims.vocab_size
        ))));
    }
    Ok((g, vocab))
}

fn write_out(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Data(Error::io(p, e))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_train(a: TrainArgs) -> CliResult {
    let mut config = match &a.config {
        Some(p) => TrainConfig::from_json_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let norm = a.norm.normalizer();
    let limit = match (a.vocab_size, a.min_freq) {
        (Some(n), _) => VocabLimit::MaxSize(n),
        (None, Some(f)) => VocabLimit::MinFreq(f),
        (None, None) => VocabLimit::MinFreq(1),
    };
    let vocab = build_vocab(&a.train, limit, norm)?;
    let train_corpus = load_corpus(&a.train, &vocab, norm)?;
    let dev = load_corpus(&a.dev, &vocab, norm)?;
    eprintln!(
        "vocabulary {} words; {} train, {} dev sentences",
        vocab.len(),
        train_corpus.len(),
        dev.len()
    );
    let outcome = train(&config, vocab.len(), &train_corpus, &dev)?;
    save_checkpoint_dir(&a.out, &outcome, Some(&vocab))?;
    println!("best dev perplexity: {:.4}", outcome.best_dev_ppl);
    println!("checkpoint: {}", a.out.display());
    Ok(())
}

fn run_eval_ppl(a: EvalPplArgs) -> CliResult {
    let (g, vocab) = load_with_vocab(&a.grammar)?;
    let corpus = load_corpus(&a.input, &vocab, a.norm.normalizer())?;
    let report = evaluate(&g, &vocab, &corpus, None, a.engine, Decoder::Mbr)?;
    print!("{}", if a.csv { report.to_csv() } else { report.to_text() });
    Ok(())
}

fn run_parse(a: ParseArgs) -> CliResult {
    let (g, vocab) = load_with_vocab(&a.grammar)?;
    let corpus = load_corpus(&a.input, &vocab, a.norm.normalizer())?;
    let n = g.dims.n_nt;
    let label = move |s: usize| if s < n { format!("N{s}") } else { format!("T{}", s - n) };
    let mut out = String::new();
    for (ids, words) in corpus.sentences.iter().zip(&corpus.tokens) {
        let tree = decode(&g, ids, a.decoder)?;
        out.push_str(&tree.to_brackets(words, &label));
        out.push('\n');
    }
    print!("{out}");
    Ok(())
}

fn run_eval_f1(a: EvalF1Args) -> CliResult {
    let (g, vocab) = load_with_vocab(&a.grammar)?;
    let tags = match &a.punct_tags {
        Some(p) => parse_punct_tags(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => default_punct_tags(),
    };
    let mut treebank = read_bracketed_trees(&a.treebank, &tags)?;
    let norm = a.norm.normalizer();
    for t in &mut treebank.trees {
        for w in &mut t.tokens {
            *w = norm.apply(w);
        }
    }
    let report = corpus_f1(&treebank.trees, grammar_predictor(&g, &vocab, a.decoder))?;
    if let Some(p) = &a.per_sentence {
        write_out(Some(p), &report.to_csv())?;
    }
    print!("{}", report.summary());
    Ok(())
}

fn run_sample(a: SampleArgs) -> CliResult {
    let g = load_grammar(&a.grammar)?;
    let vp = vocab_path(&a.grammar);
    let vocab = if vp.exists() { Some(Vocabulary::load(&vp)?) } else { None };
    let data = generate_synthetic(&g, a.n, a.seed)?;
    let n = g.dims.n_nt;
    let label = move |s: usize| if s < n { format!("N{s}") } else { format!("T{}", s - n) };
    let mut out = String::new();
    for (tree, ids) in data.trees.iter().zip(&data.corpus.sentences) {
        let words: Vec<String> = ids
            .iter()
            .map(|&id| match &vocab {
                Some(v) => v.word(id).unwrap_or("<unk>").to_string(),
                None => format!("w{id}"),
            })
            .collect();
        if a.trees {
            out.push_str(&tree.to_brackets(&words, &label));
        } else {
            out.push_str(&words.join(" "));
        }
        out.push('\n');
    }
    print!("{out}");
    Ok(())
}

fn run_convert(a: ConvertArgs) -> CliResult {
    let lr = load_lowrank(&a.input)?;
    let g = lowrank_to_simple(&lr)?;
    save_grammar(&g, &a.output)?;
    let vin = vocab_path(&a.input);
    if vin.exists() {
        let v = Vocabulary::load(&vin)?;
        v.save(vocab_path(&a.output))?;
    }
    println!(
        "wrote {} (n_nt={}, n_pt={}, vocab={})",
        a.output.display(),
        g.dims.n_nt,
        g.dims.n_pt,
        g.dims.vocab_size
    );
    Ok(())
}

fn run_bench(a: BenchArgs, threads: Option<usize>) -> CliResult {
    if a.batch == 0 || a.repeats == 0 {
        return Err(Failure::Usage("--batch and --repeats must be positive".into()));
    }
    if let Some(bad) = a.sizes.iter().find(|&&s| s < 2 || s % 2 != 0) {
        return Err(Failure::Usage(format!("--sizes entries must be even and at least 2, got {bad}")));
    }
    if let Some(bad) = a.lengths.iter().find(|&&l| l < 2) {
        return Err(Failure::Usage(format!("--lengths entries must be at least 2, got {bad}")));
    }
    let config = BenchConfig {
        sizes: a.sizes,
        lengths: a.lengths,
        variants: a.variants,
        batch: a.batch,
        repeats: a.repeats,
        seed: a.seed,
        memory_budget: a.memory_budget,
        threads,
        measure_memory: true,
    };
    let report = bench_inside(&config)?;
    write_out(a.out.as_deref(), &report.to_csv())
}

fn run_validate(a: ValidateArgs) -> CliResult {
    let bytes = std::fs::read(&a.path).map_err(|e| Error::io(&a.path, e))?;
    if bytes.starts_with(LOWRANK_MAGIC) {
        let lr = read_lowrank(&bytes)?;
        lr.validate(a.tol)?;
    } else {
        if !bytes.starts_with(GRAMMAR_MAGIC) {
            return Err(Failure::Data(Error::format("magic", "not a grammar file")));
        }
        let g = read_grammar(&bytes)?;
        let report = validate_grammar(&g, a.tol)?;
        if !report.is_valid() {
            eprint!("{report}");
            return Err(Failure::Data(Error::Structural("grammar is not normalized".into())));
        }
    }
    println!("OK");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::EvalPpl(a) => run_eval_ppl(a),
        Command::Parse(a) => run_parse(a),
        Command::EvalF1(a) => run_eval_f1(a),
        Command::Sample(a) => run_sample(a),
        Command::ConvertLowrank(a) => run_convert(a),
        Command::Bench(a) => run_bench(a, cli.threads),
        Command::Validate(a) => run_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
