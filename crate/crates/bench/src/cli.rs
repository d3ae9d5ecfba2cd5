//! The `logitspec` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 unreadable or invalid input,
//! 3 losslessness mismatch under `--compare`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use logitspec::corpus::{generate, Corpus, CorpusSpec};
use logitspec::model::ModelFile;
use logitspec::{decode_observed, DecodeConfig, DraftConfig, Mode, TokenId};

use crate::evaluate::{evaluate, prompt_seed, EvalConfig};
use crate::report::{ConfigEcho, RunReport};

#[derive(Debug, Parser)]
#[command(name = "logitspec", version, about = "Speculative decoding benchmarks on reference models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode every prompt of a corpus under one or more modes and report metrics.
    Run(RunArgs),
    /// Write a synthetic corpus.
    GenCorpus(GenCorpusArgs),
    /// Write a Markov model file.
    GenModel(GenModelArgs),
    /// Check that a report's aggregates match its per-prompt rows.
    VerifyReport(VerifyReportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Model file (TOML).
    #[arg(long)]
    pub model: PathBuf,
    /// Corpus file: one prompt per line, space-separated token ids.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated modes: autoregressive, last_logit, retrieval_only, logitspec.
    #[arg(long, value_delimiter = ',', default_value = "logitspec")]
    pub mode: Vec<Mode>,
    #[arg(long, default_value_t = 128)]
    pub max_new_tokens: usize,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DraftConfig::default().top_k)]
    pub top_k: usize,
    #[arg(long, default_value_t = DraftConfig::default().capacity)]
    pub capacity: usize,
    #[arg(long, default_value_t = DraftConfig::default().m_start)]
    pub m_start: usize,
    #[arg(long, default_value_t = DraftConfig::default().next_token_value_len)]
    pub next_token_value_len: usize,
    #[arg(long, default_value_t = DecodeConfig::default().last_logit_k)]
    pub last_logit_k: usize,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub json_out: Option<PathBuf>,
    /// Check speculative outputs against autoregressive ones (temperature 0 only).
    #[arg(long)]
    pub compare: bool,
    /// Print every step's draft tree of the dump prompt to stderr.
    #[arg(long)]
    pub dump_tree: bool,
    /// Print the retrieval index after every step of the dump prompt to stderr.
    #[arg(long)]
    pub dump_index: bool,
    /// Prompt traced by --dump-tree and --dump-index.
    #[arg(long, default_value_t = 0)]
    pub dump_prompt: usize,
    /// Worker threads; 0 uses all cores. Does not affect the report.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub vocab: usize,
    #[arg(long, default_value_t = 40)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub length: usize,
    #[arg(long, default_value_t = 0.7)]
    pub repetitiveness: f64,
    /// Token to leave out, typically the model's eos.
    #[arg(long)]
    pub avoid: Option<TokenId>,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenModelArgs {
    #[arg(long, default_value_t = 64)]
    pub vocab: usize,
    #[arg(long, default_value_t = 0)]
    pub eos: TokenId,
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Seed of the synthetic training corpus used when --train-corpus is absent.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train on this corpus, referenced by path from the model file.
    #[arg(long)]
    pub train_corpus: Option<PathBuf>,
    /// Write trained counts into the file instead of a training source.
    #[arg(long)]
    pub inline_counts: bool,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyReportArgs {
    pub report: PathBuf,
}

/// A failed command: exit code and message.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn input(message: impl std::fmt::Display) -> Self {
        Self { code: 2, message: message.to_string() }
    }

    fn runtime(message: impl std::fmt::Display) -> Self {
        Self { code: 1, message: message.to_string() }
    }
}

pub fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(a) => run(&a),
        Command::GenCorpus(a) => gen_corpus(&a),
        Command::GenModel(a) => gen_model(&a),
        Command::VerifyReport(a) => verify_report(&a),
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::runtime(format!("writing {}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::runtime(format!("writing stdout: {e}"))),
    }
}

pub fn run(a: &RunArgs) -> Result<(), Failure> {
    let (file, base) = ModelFile::load(&a.model).map_err(Failure::input)?;
    let model = file.build(&base).map_err(Failure::input)?;
    let corpus = Corpus::load(&a.corpus).map_err(Failure::input)?;
    if let Some((i, t)) = corpus.first_out_of_range(file.vocab_size) {
        return Err(Failure::input(format!(
            "{}: prompt {i} has token {t}, vocabulary has {}",
            a.corpus.display(),
            file.vocab_size
        )));
    }
    if let Some(i) = corpus.sequences.iter().position(Vec::is_empty) {
        return Err(Failure::input(format!("{}: prompt {i} is empty", a.corpus.display())));
    }
    if a.compare && a.temperature != 0.0 {
        return Err(Failure::input("--compare needs --temperature 0"));
    }
    if a.mode.is_empty() {
        return Err(Failure::input("--mode lists no modes"));
    }
    let mut modes = a.mode.clone();
    modes.dedup();

    let decode = DecodeConfig {
        mode: modes[0],
        max_new_tokens: a.max_new_tokens,
        temperature: a.temperature,
        seed: a.seed,
        draft: DraftConfig {
            top_k: a.top_k,
            capacity: a.capacity,
            m_start: a.m_start,
            next_token_value_len: a.next_token_value_len,
        },
        last_logit_k: a.last_logit_k,
    };
    for &mode in &modes {
        // surface configuration errors before any work
        decode_observed(&model, &[0], &DecodeConfig { max_new_tokens: 1, ..decode.with_mode(mode) }, |_| {})
            .map_err(Failure::input)?;
    }

    let eval = evaluate(&model, &corpus.sequences, &EvalConfig { modes: modes.clone(), decode, compare: a.compare, jobs: a.jobs })
        .map_err(Failure::runtime)?;

    if a.dump_tree || a.dump_index {
        dump(a, &model, &corpus.sequences, &modes, &decode)?;
    }

    let echo = ConfigEcho {
        model: a.model.display().to_string(),
        corpus: a.corpus.display().to_string(),
        vocab_size: file.vocab_size,
        eos: file.eos,
        modes,
        max_new_tokens: a.max_new_tokens,
        temperature: a.temperature,
        seed: a.seed,
        top_k: a.top_k,
        capacity: a.capacity,
        m_start: a.m_start,
        next_token_value_len: a.next_token_value_len,
        last_logit_k: a.last_logit_k,
        compare: a.compare,
    };
    let report = RunReport::new(echo, &corpus.sequences, &eval);
    write_output(a.json_out.as_deref(), &report.to_json())?;

    for m in &report.modes {
        eprintln!(
            "{:<15} prompts {:>4}  steps {:>7}  tokens {:>7}  mat {:.4}  retrieval {:.4}",
            m.mode.name(),
            m.prompts,
            m.steps,
            m.tokens,
            m.mat,
            m.retrieval_success_rate
        );
    }
    let l = &report.losslessness;
    if let Some(first) = &l.first {
        return Err(Failure {
            code: 3,
            message: format!(
                "losslessness violated in {} of {} comparisons; first: mode {} prompt {} position {} (expected {:?}, found {:?})",
                l.mismatches, l.checked, first.mode, first.prompt, first.position, first.expected, first.found
            ),
        });
    }
    if a.compare {
        eprintln!("losslessness: {} comparisons, 0 mismatches", l.checked);
    }
    Ok(())
}

fn dump(
    a: &RunArgs,
    model: &logitspec::MarkovTableModel,
    prompts: &[Vec<TokenId>],
    modes: &[Mode],
    decode: &DecodeConfig,
) -> Result<(), Failure> {
    let prompt = prompts
        .get(a.dump_prompt)
        .ok_or_else(|| Failure::input(format!("--dump-prompt {} out of range", a.dump_prompt)))?;
    let seed = prompt_seed(a.seed, a.dump_prompt);
    let mut err = std::io::stderr().lock();
    for &mode in modes {
        let cfg = DecodeConfig { seed, ..decode.with_mode(mode) };
        decode_observed(model, prompt, &cfg, |v| {
            let _ = writeln!(err, "# {mode} prompt {} step {}", a.dump_prompt, v.step);
            if a.dump_tree {
                let _ = write!(err, "{}", v.tree.debug_dump());
            }
            if let (true, Some(index)) = (a.dump_index, v.index) {
                let _ = writeln!(err, "# index");
                let _ = write!(err, "{}", index.debug_dump());
            }
        })
        .map_err(Failure::runtime)?;
    }
    Ok(())
}

pub fn gen_corpus(a: &GenCorpusArgs) -> Result<(), Failure> {
    let spec = CorpusSpec {
        vocab: a.vocab,
        count: a.count,
        length: a.length,
        repetitiveness: a.repetitiveness,
        avoid: a.avoid,
    };
    let corpus = generate(a.seed, &spec).map_err(Failure::input)?;
    write_output(a.out.as_deref(), &corpus.to_text())
}

pub fn gen_model(a: &GenModelArgs) -> Result<(), Failure> {
    let mut file = ModelFile {
        vocab_size: a.vocab,
        eos: a.eos,
        order: a.order,
        alpha: a.alpha,
        seed: a.seed,
        train_corpus_path: a.train_corpus.clone(),
        explicit_counts: None,
    };
    // a relative corpus path is kept as given, so it resolves from the working
    // directory here and from the model file's directory on load
    let model = file.build(Path::new("")).map_err(Failure::input)?;
    if a.inline_counts {
        file = model.to_model_file();
    }
    write_output(a.out.as_deref(), &file.to_toml())
}

pub fn verify_report(a: &VerifyReportArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.report)
        .map_err(|e| Failure::input(format!("reading {}: {e}", a.report.display())))?;
    let report: RunReport = serde_json::from_str(&text)
        .map_err(|e| Failure::input(format!("parsing {}: {e}", a.report.display())))?;
    let bad = report.check_aggregates();
    if bad.is_empty() {
        eprintln!("{}: aggregates consistent across {} modes", a.report.display(), report.modes.len());
        Ok(())
    } else {
        Err(Failure::runtime(format!("inconsistent aggregates: {}", bad.join(", "))))
    }
}
